"""Procedural cluttered worlds and their geometric queries.

Maps are axis-aligned rectangles centred on the origin, flown at a fixed
altitude of 2 m. Trees are tilted capped cylinders standing on the ground;
training maps may also mix in cones, cubes, spheres and walls. All sizes are
a per-kind nominal shape multiplied by ``scale`` ~ U(2/3, 4/3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import kernels
from . import rng as _rng
from .transforms import quat_from_axis_angle, quat_mul, quat_to_rot

FLIGHT_ALTITUDE = 2.0
DRONE_RADIUS = 0.3
MAX_TREE_TILT = math.radians(15.0)
SCALE_RANGE = (2.0 / 3.0, 4.0 / 3.0)
MAX_ATTEMPTS = 10_000
DENSITY_PRESETS = {"1/80": 1 / 80, "1/50": 1 / 50, "1/30": 1 / 30, "1/25": 1 / 25}

# half-dimensions before scaling: (x, y, z); cylinders/cones use x as radius
NOMINAL_HALF = {
    "cylinder": (0.35, 0.35, 4.0),
    "cone": (1.0, 1.0, 2.0),
    "cube": (1.0, 1.0, 1.0),
    "sphere": (1.0, 1.0, 1.0),
    "wall": (2.5, 0.2, 2.5),
}
_KERNEL_KIND = {"cylinder": "cylinder", "cone": "cone", "cube": "box", "wall": "box", "sphere": "sphere"}
MIXED_KINDS = {"cylinder": 0.6, "cone": 0.1, "cube": 0.1, "sphere": 0.1, "wall": 0.1}

MAP_FORMAT = "depthnav-map v1"


class MapGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Obstacle:
    kind: str
    position: tuple[float, float, float]
    orientation: tuple[float, float, float, float]  # (w, x, y, z)
    scale: tuple[float, float, float]

    def __post_init__(self):
        if self.kind not in NOMINAL_HALF:
            raise ValueError(f"unknown obstacle kind {self.kind!r}")

    @property
    def half_dims(self) -> np.ndarray:
        return np.asarray(NOMINAL_HALF[self.kind]) * np.asarray(self.scale)


@dataclass(frozen=True)
class Ray:
    origin: tuple[float, float, float]
    direction: tuple[float, float, float]
    max_range: float

    def __post_init__(self):
        n = float(np.linalg.norm(self.direction))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length (norm {n})")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")


def pack_obstacles(obstacles) -> tuple:
    """Struct-of-arrays view consumed by :mod:`depthnav.kernels`."""
    n = len(obstacles)
    kinds = np.zeros(n, dtype=np.int32)
    centers = np.zeros((n, 3))
    rots = np.zeros((n, 3, 3))
    halfs = np.zeros((n, 3))
    bounds = np.zeros(n)
    for i, ob in enumerate(obstacles):
        kinds[i] = kernels.KIND_CODES[_KERNEL_KIND[ob.kind]]
        centers[i] = ob.position
        rots[i] = quat_to_rot(ob.orientation).T
        h = ob.half_dims
        if ob.kind == "sphere":
            h = np.array([h[0], h[0], h[0]])
        elif ob.kind in ("cylinder", "cone"):
            h = np.array([h[0], h[0], h[2]])
        halfs[i] = h
        if ob.kind == "sphere":
            bounds[i] = h[0]
        elif ob.kind in ("cylinder", "cone"):
            bounds[i] = math.hypot(h[0], h[2])
        else:
            bounds[i] = float(np.linalg.norm(h))
    # tiny inflation keeps the bounding test conservative under rounding
    bounds = bounds * (1.0 + 1e-9) + 1e-9
    return kinds, centers, np.ascontiguousarray(rots), halfs, bounds


@dataclass(frozen=True)
class WorldMap:
    extent: tuple[float, float]
    obstacles: tuple[Obstacle, ...]
    density: float
    seed: int
    clear_points: tuple[tuple[float, float, float], ...] = field(default=())

    @cached_property
    def packed(self) -> tuple:
        return pack_obstacles(self.obstacles)

    def sdf(self, points, cap: float = np.inf) -> np.ndarray:
        """Signed distance from each point to the nearest obstacle surface."""
        return kernels.sdf_batch(points, self.packed, cap)

    def raycast_many(self, origins, dirs, max_range) -> np.ndarray:
        return kernels.raycast_batch(origins, dirs, max_range, self.packed)


def _tree(g: np.random.Generator, x: float, y: float, s: float, max_tilt: float) -> Obstacle:
    tilt = g.uniform(0.0, max_tilt)
    azimuth = g.uniform(0.0, 2 * math.pi)
    spin = g.uniform(0.0, 2 * math.pi)
    q_tilt = quat_from_axis_angle([-math.sin(azimuth), math.cos(azimuth), 0.0], tilt)
    q = quat_mul(q_tilt, quat_from_axis_angle([0, 0, 1], spin))
    half_h = NOMINAL_HALF["cylinder"][2] * s
    axis = quat_to_rot(q)[:, 2]
    center = np.array([x, y, 0.0]) + half_h * axis
    return Obstacle("cylinder", tuple(center), tuple(q), (s, s, s))


def _other(g: np.random.Generator, kind: str, x: float, y: float, s: float) -> Obstacle:
    q = quat_from_axis_angle([0, 0, 1], g.uniform(0.0, 2 * math.pi))
    half = np.asarray(NOMINAL_HALF[kind]) * s
    if kind == "cone":
        z = half[2]
    elif kind == "wall":
        z = half[2]
    else:
        z = FLIGHT_ALTITUDE
    return Obstacle(kind, (x, y, float(z)), tuple(q), (s, s, s))


def generate_map(
    density: float,
    extent=(50.0, 50.0),
    seed: int = 0,
    kinds: str = "trees",
    clear_points=(),
    clear_radius: float = 1.0,
    max_tilt: float = MAX_TREE_TILT,
) -> WorldMap:
    """Scatter ``round(density * area)`` obstacles uniformly over the map.

    ``kinds`` is ``"trees"`` (evaluation maps) or ``"mixed"`` (training maps).
    Obstacles never come within ``clear_radius`` of a ``clear_points`` entry.
    """
    if density < 0:
        raise ValueError("density must be non-negative")
    lx, ly = float(extent[0]), float(extent[1])
    count = int(round(density * lx * ly))
    g = _rng.stream(seed, "map")
    names = list(MIXED_KINDS)
    weights = np.array([MIXED_KINDS[k] for k in names])
    clear = [np.asarray(p, dtype=float) for p in clear_points]
    obstacles: list[Obstacle] = []
    for i in range(count):
        for _ in range(MAX_ATTEMPTS):
            x = g.uniform(-lx / 2, lx / 2)
            y = g.uniform(-ly / 2, ly / 2)
            s = g.uniform(*SCALE_RANGE)
            kind = "cylinder" if kinds == "trees" else names[g.choice(len(names), p=weights)]
            ob = _tree(g, x, y, s, max_tilt) if kind == "cylinder" else _other(g, kind, x, y, s)
            if not clear:
                break
            d = kernels.sdf_batch(np.array(clear), pack_obstacles([ob]))
            if np.all(d >= clear_radius):
                break
        else:
            raise MapGenerationError(
                f"could not place obstacle {i} clear of {len(clear)} keep-out disks "
                f"after {MAX_ATTEMPTS} attempts (density {density})"
            )
        obstacles.append(ob)
    return WorldMap((lx, ly), tuple(obstacles), float(density), int(seed), tuple(tuple(map(float, p)) for p in clear))


def raycast(world: WorldMap, ray: Ray) -> float:
    """Distance to the first surface along ``ray``, or ``ray.max_range``."""
    d = world.raycast_many(np.array([ray.origin]), np.array([ray.direction]), ray.max_range)
    return float(min(d[0], ray.max_range))


def clearance(world: WorldMap, point) -> float:
    return float(world.sdf(np.asarray(point, dtype=float).reshape(1, 3))[0])


def collision_sphere(world: WorldMap, center, radius: float = DRONE_RADIUS) -> bool:
    """True iff a sphere of ``radius`` at ``center`` touches any obstacle."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    return clearance(world, center) < radius


def sample_start_goal(world: WorldMap, seed: int, course_length: float = 60.0,
                      lateral_range: float = 20.0, margin: float = 1.0):
    """Start on the start line (x = -course/2) at a random lateral offset, goal straight ahead.

    Both points sit at flight altitude and keep ``margin`` of clearance.
    """
    g = _rng.stream(seed, "start-goal")
    for _ in range(MAX_ATTEMPTS):
        lateral = g.uniform(-lateral_range, lateral_range)
        start = np.array([-course_length / 2.0, lateral, FLIGHT_ALTITUDE])
        goal = start + np.array([course_length, 0.0, 0.0])
        if np.all(world.sdf(np.stack([start, goal])) >= margin):
            return start, goal
    raise MapGenerationError(f"no clear start/goal pair after {MAX_ATTEMPTS} attempts")


def save_map(world: WorldMap, path) -> None:
    lines = [
        MAP_FORMAT,
        f"extent {world.extent[0]!r} {world.extent[1]!r}",
        f"density {world.density!r}",
        f"seed {world.seed}",
        "clear " + " ".join(repr(v) for p in world.clear_points for v in p),
    ]
    for ob in world.obstacles:
        vals = [*ob.position, *ob.orientation, *ob.scale]
        lines.append(ob.kind + " " + " ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def load_map(path) -> WorldMap:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != MAP_FORMAT:
        raise ValueError(f"{path}: not a {MAP_FORMAT!r} file")
    header = {}
    for line in lines[1:5]:
        key, *vals = line.split()
        header[key] = vals
    clear_vals = [float(v) for v in header.get("clear", [])]
    clear = tuple(tuple(clear_vals[i : i + 3]) for i in range(0, len(clear_vals), 3))
    obstacles = []
    for line in lines[5:]:
        if not line.strip():
            continue
        kind, *vals = line.split()
        v = [float(x) for x in vals]
        obstacles.append(Obstacle(kind, tuple(v[0:3]), tuple(v[3:7]), tuple(v[7:10])))
    return WorldMap(
        (float(header["extent"][0]), float(header["extent"][1])),
        tuple(obstacles),
        float(header["density"][0]),
        int(header["seed"][0]),
        clear,
    )
