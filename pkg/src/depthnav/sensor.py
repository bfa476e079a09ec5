"""Forward-looking depth camera: raycast rendering and a stereo noise model.

Camera frame convention: +z along the optical axis (body +x), +x to the
right (body -y), +y down (body -z). Depth is z-depth, i.e. the distance along
the optical axis, not the Euclidean ray length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import rng as _rng
from .transforms import quat_to_rot

# camera axes expressed in the body frame (columns: cam x, cam y, cam z)
_CAM_TO_BODY = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])

NATIVE_STEREO_WIDTH = 640


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int = 64
    height: int = 64
    hfov_deg: float = 72.0
    vfov_deg: float = 50.0
    max_depth: float = 20.0

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("image must be at least 8x8")
        for fov in (self.hfov_deg, self.vfov_deg):
            if not 0.0 < fov < 180.0:
                raise ValueError(f"field of view {fov} outside (0, 180) degrees")
        if self.max_depth <= 0:
            raise ValueError("max_depth must be positive")

    @property
    def fx(self) -> float:
        return 0.5 * self.width / math.tan(math.radians(self.hfov_deg) / 2)

    @property
    def fy(self) -> float:
        return 0.5 * self.height / math.tan(math.radians(self.vfov_deg) / 2)

    def pixel_rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit ray directions in the camera frame (H, W, 3) and their optical-axis cosines."""
        return _pixel_rays(self)


@lru_cache(maxsize=8)
def _pixel_rays(intr: CameraIntrinsics):
    u = (np.arange(intr.width) + 0.5 - intr.width / 2) / intr.fx
    v = (np.arange(intr.height) + 0.5 - intr.height / 2) / intr.fy
    uu, vv = np.meshgrid(u, v)
    d = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    d.setflags(write=False)
    cos = d[..., 2].copy()
    cos.setflags(write=False)
    return d, cos


def native_focal(hfov_deg: float = 72.0, width: int = NATIVE_STEREO_WIDTH) -> float:
    """Focal length in pixels of the full-resolution stereo pair."""
    return 0.5 * width / math.tan(math.radians(hfov_deg) / 2)


@dataclass(frozen=True)
class StereoNoiseModel:
    """Parametric disparity-domain corruption.

    ``focal`` refers to the native stereo resolution, so disparity steps and
    edge thresholds are in native pixels. Edge band and speckle sizes are in
    output-image pixels.
    """

    baseline: float = 0.075
    focal: float = field(default_factory=native_focal)
    disparity_step: float = 0.25
    dropout: float = 0.02
    edge_threshold: float = 1.0
    edge_band: int = 1
    speckle_rate: float = 0.5
    speckle_size: tuple[int, int] = (2, 4)
    disparity_sigma: float = 0.0

    def __post_init__(self):
        if self.baseline <= 0 or self.focal <= 0:
            raise ValueError("baseline and focal must be positive")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("dropout must be a probability")
        if self.disparity_step < 0 or self.speckle_rate < 0 or self.edge_band < 0 or self.disparity_sigma < 0:
            raise ValueError("noise magnitudes must be non-negative")

    @property
    def fb(self) -> float:
        return self.focal * self.baseline

    @classmethod
    def identity(cls, **kw) -> "StereoNoiseModel":
        base = dict(disparity_step=0.0, dropout=0.0, edge_band=0, speckle_rate=0.0, disparity_sigma=0.0)
        base.update(kw)
        return cls(**base)


@dataclass(frozen=True)
class DepthImage:
    depth: np.ndarray
    valid: np.ndarray
    max_depth: float = 20.0

    def __post_init__(self):
        if self.depth.shape != self.valid.shape or self.depth.ndim != 2:
            raise ValueError("depth and mask must be matching 2-D arrays")
        d = self.depth[self.valid]
        if d.size and (np.any(d <= 0) or np.any(d > self.max_depth)):
            raise ValueError("valid depths must lie in (0, max_depth]")


def _pose(pose):
    if hasattr(pose, "position"):
        return np.asarray(pose.position, dtype=float), np.asarray(pose.attitude, dtype=float)
    p, q = pose
    return np.asarray(p, dtype=float), np.asarray(q, dtype=float)


def camera_rays_world(pose, intrinsics: CameraIntrinsics):
    position, attitude = _pose(pose)
    n = np.linalg.norm(attitude)
    if abs(n - 1.0) > 1e-6:
        raise ValueError(f"attitude quaternion not normalized (norm {n})")
    cam_dirs, cos = intrinsics.pixel_rays()
    r = quat_to_rot(attitude / n) @ _CAM_TO_BODY
    world_dirs = cam_dirs.reshape(-1, 3) @ r.T
    return position, world_dirs, cos.reshape(-1)


def render_depth(world, pose, intrinsics: CameraIntrinsics | None = None) -> DepthImage:
    """Ground-truth z-depth image seen from ``pose`` (position + body attitude)."""
    intr = intrinsics or CameraIntrinsics()
    origin, dirs, cos = camera_rays_world(pose, intr)
    ray_range = intr.max_depth / cos
    t = world.raycast_many(np.broadcast_to(origin, dirs.shape), dirs, ray_range)
    z = np.minimum(t * cos, intr.max_depth).reshape(intr.height, intr.width)
    valid = z > 0
    # a camera inside an obstacle sees nothing useful; flag rather than encode as 0
    return DepthImage(np.where(valid, z, intr.max_depth), valid, intr.max_depth)


def _dilate(mask: np.ndarray, band: int) -> np.ndarray:
    out = mask.copy()
    for _ in range(band):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        out = grown
    return out


def edge_mask(disparity: np.ndarray, threshold: float, band: int) -> np.ndarray:
    """Pixels within ``band`` of a neighbour pair whose disparity jumps by more than ``threshold``."""
    jump = np.zeros(disparity.shape, dtype=bool)
    dv = np.abs(np.diff(disparity, axis=0)) > threshold
    dh = np.abs(np.diff(disparity, axis=1)) > threshold
    jump[:-1, :] |= dv
    jump[1:, :] |= dv
    jump[:, :-1] |= dh
    jump[:, 1:] |= dh
    return _dilate(jump, band - 1) if band > 0 else np.zeros_like(jump)


def apply_stereo_noise(depth: DepthImage, model: StereoNoiseModel, seed: int) -> DepthImage:
    g = _rng.stream(seed, "stereo")
    fb = model.fb
    valid = depth.valid.copy()
    z = depth.depth
    if model.disparity_sigma > 0 or model.disparity_step > 0:
        disp = fb / depth.depth
        if model.disparity_sigma > 0:
            disp = disp + g.normal(0.0, model.disparity_sigma, disp.shape)
        if model.disparity_step > 0:
            disp = np.round(disp / model.disparity_step) * model.disparity_step
        # a disparity rounded to zero means "too far to match"
        valid &= disp > 0
        z = np.minimum(fb / np.where(disp > 0, disp, 1.0), depth.max_depth)
    if model.edge_band > 0:
        valid &= ~edge_mask(fb / depth.depth, model.edge_threshold, model.edge_band)
    if model.dropout > 0:
        valid &= g.random(z.shape) >= model.dropout
    if model.speckle_rate > 0:
        h, w = z.shape
        lo, hi = model.speckle_size
        for _ in range(g.poisson(model.speckle_rate)):
            sh, sw = g.integers(lo, hi + 1, size=2)
            r, c = g.integers(0, h), g.integers(0, w)
            valid[r : r + sh, c : c + sw] = False
    return DepthImage(np.where(valid, z, depth.max_depth), valid, depth.max_depth)


def quantization_bound(z, model: StereoNoiseModel):
    """Largest depth change a single disparity step can cause at depth ``z``."""
    z = np.asarray(z, dtype=float)
    step = model.disparity_step
    return z * z * step / (model.fb - z * step)


def encode_observation(depth: DepthImage) -> np.ndarray:
    """Normalise to [0, 1] by max depth, imputing invalid pixels as max depth."""
    if not isinstance(depth, DepthImage):
        raise TypeError(f"expected DepthImage, got {type(depth).__name__}")
    return np.where(depth.valid, depth.depth, depth.max_depth) / depth.max_depth


def write_pgm(depth: DepthImage, path, mask_path=None) -> None:
    """16-bit PGM in millimetres; invalid pixels stored as 0. Mask goes to a maxval-1 PGM."""
    mm = np.where(depth.valid, np.round(depth.depth * 1000.0), 0).astype(">u2")
    h, w = mm.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n65535\n".encode() + mm.tobytes())
    if mask_path is not None:
        m = depth.valid.astype(np.uint8)
        Path(mask_path).write_bytes(f"P5\n{w} {h}\n1\n".encode() + m.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    dtype = ">u2" if maxval > 255 else np.uint8
    return np.frombuffer(parts[4], dtype=dtype, count=w * h).reshape(h, w)
