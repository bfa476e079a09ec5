"""Top-down PPM frames of a flight with the path coloured by speed, plus a speed CSV."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..world import FLIGHT_ALTITUDE, WorldMap

BACKGROUND = np.array([255, 255, 255], np.uint8)
OBSTACLE = np.array([90, 90, 90], np.uint8)
SLOW = np.array([0, 0, 255], np.uint8)
FAST = np.array([255, 0, 0], np.uint8)


@dataclass
class Trace:
    times: np.ndarray  # (N,)
    positions: np.ndarray  # (N, 3)
    speeds: np.ndarray  # (N,)

    def __post_init__(self):
        self.times = np.asarray(self.times, float).reshape(-1)
        self.positions = np.asarray(self.positions, float).reshape(-1, 3)
        self.speeds = np.asarray(self.speeds, float).reshape(-1)
        if not len(self.times) == len(self.positions) == len(self.speeds):
            raise ValueError("trace arrays must have equal length")

    @classmethod
    def from_env(cls, env) -> "Trace":
        return cls(np.array(env.times), np.array(env.path), np.array(env.speeds))

    @classmethod
    def empty(cls) -> "Trace":
        return cls(np.zeros(0), np.zeros((0, 3)), np.zeros(0))


def speed_colors(speeds) -> np.ndarray:
    """Linear blue-to-red ramp; the slowest sample is pure blue, the fastest pure red."""
    s = np.asarray(speeds, float)
    if s.size == 0:
        return np.zeros((0, 3), np.uint8)
    lo, hi = float(s.min()), float(s.max())
    w = np.zeros_like(s) if hi == lo else (s - lo) / (hi - lo)
    return np.rint(SLOW[None] * (1 - w[:, None]) + FAST[None] * w[:, None]).astype(np.uint8)


def map_raster(world: WorldMap, resolution: float = 0.1, altitude: float = FLIGHT_ALTITUDE) -> np.ndarray:
    """(H, W, 3) image of the obstacle cross-section at flight altitude; row 0 is the +y edge."""
    lx, ly = world.extent
    w, h = int(round(lx / resolution)), int(round(ly / resolution))
    xs = -lx / 2 + (np.arange(w) + 0.5) * resolution
    ys = ly / 2 - (np.arange(h) + 0.5) * resolution
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, altitude)])
    inside = (world.sdf(pts) <= 0).reshape(h, w)
    img = np.empty((h, w, 3), np.uint8)
    img[:] = BACKGROUND
    img[inside] = OBSTACLE
    return img


def to_pixels(world: WorldMap, xy, resolution: float) -> np.ndarray:
    xy = np.asarray(xy, float).reshape(-1, 2)
    lx, ly = world.extent
    col = np.floor((xy[:, 0] + lx / 2) / resolution).astype(int)
    row = np.floor((ly / 2 - xy[:, 1]) / resolution).astype(int)
    return np.column_stack([row, col])


def _draw_path(img, pix, colors):
    """Draw segments between consecutive pixels, each in its start sample's colour."""
    h, w = img.shape[:2]
    pts = [pix[0]] if len(pix) == 1 else []
    cols = [colors[0]] if len(pix) == 1 else []
    for (r0, c0), (r1, c1), col in zip(pix[:-1], pix[1:], colors[:-1]):
        n = max(abs(r1 - r0), abs(c1 - c0), 1)
        t = np.linspace(0.0, 1.0, n + 1)
        pts.extend(np.column_stack([np.rint(r0 + t * (r1 - r0)), np.rint(c0 + t * (c1 - c0))]).astype(int))
        cols.extend([col] * (n + 1))
    for (r, c), col in zip(pts, cols):
        if 0 <= r < h and 0 <= c < w:
            img[r, c] = col


def write_ppm(img: np.ndarray, path) -> None:
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(img, np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h, depth = int(parts[1]), int(parts[2]), int(parts[3])
    if depth != 255:
        raise ValueError("only 8-bit PPM is supported")
    return np.frombuffer(parts[4][: w * h * 3], np.uint8).reshape(h, w, 3)


def render_frames(trace: Trace, world: WorldMap, out_dir, every: int = 25, resolution: float = 0.1) -> list[Path]:
    """One frame per ``every`` trace samples (plus the last); an empty trace gives the bare map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = map_raster(world, resolution)
    n = len(trace.times)
    ends = [] if n == 0 else sorted(set(range(every, n, every)) | {n})
    if not ends:
        path = out / "frame_0000.ppm"
        write_ppm(base, path)
        frames = [path]
    else:
        pix = to_pixels(world, trace.positions[:, :2], resolution)
        colors = speed_colors(trace.speeds)
        frames = []
        for k, end in enumerate(ends):
            img = base.copy()
            _draw_path(img, pix[:end], colors[:end])
            path = out / f"frame_{k:04d}.ppm"
            write_ppm(img, path)
            frames.append(path)
    write_speed_csv(trace, out / "speed.csv")
    return frames


def write_speed_csv(trace: Trace, path) -> None:
    with open(path, "w") as fh:
        fh.write("t,x,y,z,speed\n")
        for t, p, s in zip(trace.times, trace.positions, trace.speeds):
            fh.write(f"{t!r},{p[0]!r},{p[1]!r},{p[2]!r},{s!r}\n")
