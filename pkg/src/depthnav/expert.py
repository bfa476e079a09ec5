"""Privileged expert: lattice search over acceleration primitives and dataset generation.

The expert sees the whole map. It plans a 2-D path at flight altitude with
weighted A* over constant-acceleration primitives, then walks along it every
0.1 s, pulling out the next ten path points, nudging them away from nearby
obstacles, and recording them as a cylindrical action next to a rendered
noisy depth image.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import rng as _rng
from .sensor import CameraIntrinsics, StereoNoiseModel, apply_stereo_noise, encode_observation, render_depth
from .trajgen import DPSI_MAX, DR_MAX, N_WAYPOINTS, WAYPOINT_DT, decode_action, encode_waypoints
from .transforms import euler_from_quat, quat_from_euler, rot_to_quat
from .vehicle import GOAL_RADIUS, GRAVITY, DroneState, desired_rotation
from .world import DENSITY_PRESETS, DRONE_RADIUS, FLIGHT_ALTITUDE, WorldMap, generate_map, sample_start_goal

log = logging.getLogger(__name__)

CRUISE_SPEED = 7.0


class PlanningFailure(RuntimeError):
    pass


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlannerLimits:
    v_max: float = 8.0
    a_max: float = 10.0
    accel_levels: int = 9  # per axis, symmetric around zero
    primitive_dt: float = 0.5
    clearance: float = 0.8  # drone radius plus a safety margin
    check_spacing: float = 0.05
    cruise_speed: float = CRUISE_SPEED
    speed_weight: float = 0.5
    accel_weight: float = 0.01
    heuristic_weight: float = 2.0
    goal_tolerance: float = 1.0
    node_budget: int = 20_000
    lateral_margin: float = 10.0

    def accelerations(self) -> np.ndarray:
        vals = np.linspace(-self.a_max, self.a_max, self.accel_levels)
        grid = np.array(list(itertools.product(vals, vals)))
        return grid[np.linalg.norm(grid, axis=1) <= self.a_max + 1e-9]


@dataclass(frozen=True)
class MotionPrimitive:
    p0: np.ndarray  # (2,)
    v0: np.ndarray
    accel: np.ndarray
    duration: float

    def state(self, tau):
        tau = np.asarray(tau, dtype=float)[..., None]
        p = self.p0 + self.v0 * tau + 0.5 * self.accel * tau**2
        v = self.v0 + self.accel * tau
        return p, v

    @property
    def end(self):
        return self.state(self.duration)


@dataclass
class GlobalPath:
    """Chain of primitives, continued at constant velocity after the last one."""

    primitives: list
    goal: np.ndarray
    altitude: float = FLIGHT_ALTITUDE

    @property
    def duration(self) -> float:
        return sum(p.duration for p in self.primitives)

    def state(self, t: float):
        """(p, v, a) in 3-D at time ``t``; beyond the end the last velocity is held."""
        for prim in self.primitives:
            if t <= prim.duration:
                p, v = prim.state(max(t, 0.0))
                return self._lift(p, v, prim.accel)
            t -= prim.duration
        last = self.primitives[-1]
        p_end, v_end = last.end
        return self._lift(p_end + v_end * t, v_end, np.zeros(2))

    def _lift(self, p, v, a):
        return (np.array([p[0], p[1], self.altitude]), np.array([v[0], v[1], 0.0]), np.array([a[0], a[1], 0.0]))

    def positions(self, times) -> np.ndarray:
        return np.array([self.state(t)[0] for t in times])


def _sweep_points(p0, v0, acc, dt, n):
    tau = np.linspace(0.0, dt, n)[None, :, None]
    return p0[None, None, :] + v0[None, None, :] * tau + 0.5 * acc[:, None, :] * tau**2


def plan_global(world: WorldMap, start, goal, limits: PlannerLimits = PlannerLimits(),
                start_velocity=(0.0, 0.0)) -> GlobalPath:
    """Weighted A* over the primitive lattice from ``start`` (with velocity) to ``goal``.

    Edge cost is duration plus a speed-deviation penalty toward the cruise
    speed and a small control-effort term. The heuristic is the straight-line
    time at maximum speed.
    """
    start = np.asarray(start, dtype=float)[:2]
    goal3 = np.array([goal[0], goal[1], FLIGHT_ALTITUDE], dtype=float)
    goal2 = goal3[:2]
    v0 = np.asarray(start_velocity, dtype=float)[:2]
    accs = limits.accelerations()
    dt = limits.primitive_dt
    n_check = int(math.ceil(limits.v_max * dt / limits.check_spacing)) + 1
    ymax = world.extent[1] / 2 + limits.lateral_margin
    xmin = min(start[0], goal2[0]) - limits.lateral_margin
    xmax = max(start[0], goal2[0]) + limits.lateral_margin

    def h(p):
        return limits.heuristic_weight * max(np.linalg.norm(goal2 - p) - limits.goal_tolerance, 0.0) / limits.v_max

    def key(p, v):
        return (round(p[0] / 0.25), round(p[1] / 0.25), round(v[0] / 0.5), round(v[1] / 0.5))

    counter = itertools.count()
    nodes = [(start, v0, None, None)]  # position, velocity, parent index, accel
    best_g = {key(start, v0): 0.0}
    heap = [(h(start), 0.0, next(counter), 0)]
    expansions = 0
    while heap:
        _, g, _, idx = heapq.heappop(heap)
        p, v, _, _ = nodes[idx]
        if g > best_g.get(key(p, v), np.inf) + 1e-12:
            continue
        expansions += 1
        if expansions > limits.node_budget:
            break
        v_end = v + accs * dt
        ok = np.linalg.norm(v_end, axis=1) <= limits.v_max + 1e-9
        if not ok.any():
            continue
        a_ok = accs[ok]
        sweep = _sweep_points(p, v, a_ok, dt, n_check)  # (k, n, 2)
        pts3 = np.concatenate([sweep, np.full(sweep.shape[:2] + (1,), FLIGHT_ALTITUDE)], axis=-1)
        clear = world.sdf(pts3.reshape(-1, 3), cap=limits.clearance + 1.0).reshape(sweep.shape[:2])
        free = np.all(clear >= limits.clearance, axis=1)
        in_bounds = np.all((np.abs(sweep[..., 1]) <= ymax) & (sweep[..., 0] >= xmin) & (sweep[..., 0] <= xmax), axis=1)
        for j in np.flatnonzero(free & in_bounds):
            a = a_ok[j]
            pe = sweep[j, -1]
            ve = v + a * dt
            vm = 0.5 * (np.linalg.norm(v) + np.linalg.norm(ve))
            step = dt * (1.0 + limits.speed_weight * (vm - limits.cruise_speed) ** 2 + limits.accel_weight * a @ a)
            g2 = g + step
            nodes.append((pe, ve, idx, a))
            child = len(nodes) - 1
            if np.min(np.linalg.norm(sweep[j] - goal2, axis=1)) < limits.goal_tolerance:
                return _reconstruct(nodes, child, dt, goal3)
            k = key(pe, ve)
            if g2 < best_g.get(k, np.inf):
                best_g[k] = g2
                heapq.heappush(heap, (g2 + h(pe), g2, next(counter), child))
    raise PlanningFailure(f"no path to goal within {limits.node_budget} expansions (expanded {expansions})")


def _reconstruct(nodes, idx, dt, goal) -> GlobalPath:
    prims = []
    while nodes[idx][2] is not None:
        parent = nodes[idx][2]
        p, v = nodes[parent][0], nodes[parent][1]
        prims.append(MotionPrimitive(p, v, nodes[idx][3], dt))
        idx = parent
    return GlobalPath(prims[::-1], goal)


def perturb_start(state: DroneState, max_angle: float = 0.3, seed: int = 0) -> DroneState:
    """Add U(-max_angle, max_angle) offsets to roll and yaw; pitch is untouched."""
    if max_angle == 0.0:
        return state
    g = _rng.stream(seed, "perturb")
    d_roll, d_yaw = g.uniform(-max_angle, max_angle, 2)
    roll, pitch, yaw = euler_from_quat(state.attitude)
    q = quat_from_euler(roll + d_roll, pitch, yaw + d_yaw)
    return DroneState(state.position, state.velocity, q / np.linalg.norm(q), state.omega, state.t)


@dataclass(frozen=True)
class RefineConfig:
    w_path: float = 1.0
    w_obstacle: float = 10.0
    d_safe: float = 1.0
    iterations: int = 60
    step: float = 0.02
    fd_eps: float = 1e-4


def _clearance_and_grad(world, xy, altitude, eps, cap):
    """Signed distance at 2-D points (capped) and its central-difference gradient."""
    n = len(xy)
    offs = np.array([[0, 0], [eps, 0], [-eps, 0], [0, eps], [0, -eps]])
    q = (xy[None, :, :] + offs[:, None, :]).reshape(-1, 2)
    d = world.sdf(np.column_stack([q, np.full(len(q), altitude)]), cap=cap).reshape(5, n)
    grad = np.column_stack([(d[1] - d[2]) / (2 * eps), (d[3] - d[4]) / (2 * eps)])
    return d[0], grad


def refine_waypoints(world: WorldMap, points: np.ndarray, cfg: RefineConfig = RefineConfig()) -> np.ndarray:
    """Gradient descent on w1 |x - x_path|^2 + w2 sum max(0, d_safe - clearance)^2.

    Points that already have ``d_safe`` clearance feel no obstacle force and,
    starting on the path, stay exactly where they are.
    """
    ref = np.asarray(points, dtype=float)
    xy = ref[:, :2].copy()
    alt = float(ref[0, 2])
    for _ in range(cfg.iterations):
        d, grad = _clearance_and_grad(world, xy, alt, cfg.fd_eps, cfg.d_safe + 1.0)
        short = np.maximum(cfg.d_safe - d, 0.0)
        if not short.any() and np.array_equal(xy, ref[:, :2]):
            break
        g = 2 * cfg.w_path * (xy - ref[:, :2]) - 2 * cfg.w_obstacle * short[:, None] * grad
        xy = xy - cfg.step * g
    return np.column_stack([xy, ref[:, 2]])


def plan_is_clear(world: WorldMap, origin, points, radius: float = DRONE_RADIUS, spacing: float = 0.05) -> bool:
    """Every waypoint and the straight segments joining them keep ``radius`` clearance."""
    chain = np.vstack([np.asarray(origin, float)[None], points])
    samples = [chain[-1:]]
    for a, b in zip(chain[:-1], chain[1:]):
        n = max(int(math.ceil(np.linalg.norm(b - a) / spacing)), 1)
        samples.append(a + np.linspace(0, 1, n, endpoint=False)[:, None] * (b - a))
    return bool(np.all(world.sdf(np.vstack(samples)) >= radius))


@dataclass
class ExpertRecord:
    image: np.ndarray  # (64, 64) float32 encoded observation
    velocity: np.ndarray  # (3,) world frame
    attitude: np.ndarray  # (4,)
    goal_vec: np.ndarray  # (3,) goal - p
    action: np.ndarray  # (10, 2) float32 (dr, dpsi)
    done: bool
    position: np.ndarray  # (3,) float64
    yaw: float
    map_index: int = 0
    traj_index: int = 0
    t: float = 0.0


def attitude_from_motion(accel, yaw: float) -> np.ndarray:
    a_des = np.asarray(accel, dtype=float) + np.array([0.0, 0.0, GRAVITY])
    return rot_to_quat(desired_rotation(a_des, yaw))


def sample_local(world: WorldMap, path: GlobalPath, t: float, yaw: float, seed: int,
                 attitude=None, noise: StereoNoiseModel | None = None,
                 intrinsics: CameraIntrinsics | None = None,
                 refine: RefineConfig = RefineConfig()) -> ExpertRecord | None:
    """One (observation, action) pair at path time ``t``, or None when rejected.

    The action is expressed relative to the current heading ``yaw``.
    """
    p, v, a = path.state(t)
    future = path.positions(t + WAYPOINT_DT * np.arange(1, N_WAYPOINTS + 1))
    refined = refine_waypoints(world, future, refine)
    action = encode_waypoints(refined, p, yaw).astype(np.float32)
    if np.any(action[:, 0] > DR_MAX) or np.any(np.abs(action[:, 1]) > DPSI_MAX):
        return None
    # check the plan exactly as it will be decoded from the stored float32 action
    plan = decode_action(action.astype(np.float64), p, yaw)
    if not plan_is_clear(world, p, plan.points):
        return None
    q = attitude_from_motion(a, yaw) if attitude is None else np.asarray(attitude, float)
    intr = intrinsics or CameraIntrinsics()
    depth = render_depth(world, (p, q), intr)
    depth = apply_stereo_noise(depth, noise or StereoNoiseModel(), seed)
    image = encode_observation(depth).astype(np.float32)
    goal_vec = path.goal - p
    done = bool(np.linalg.norm(path.state(t + WAYPOINT_DT)[0] - path.goal) < GOAL_RADIUS)
    return ExpertRecord(image, v, q, goal_vec, action, done, p, float(yaw), t=float(t))


@dataclass(frozen=True)
class DatasetConfig:
    n_maps: int = 40
    trajectories_per_map: int = 3
    seed: int = 0
    extent: float = 50.0
    densities: tuple = tuple(DENSITY_PRESETS.values())
    course_range: tuple = (30.0, 55.0)
    perturb_angle: float = 0.3
    max_records_per_trajectory: int = 200
    failure_abort_rate: float = 0.5

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def training_map(cfg: DatasetConfig, map_index: int) -> WorldMap:
    g = _rng.stream(cfg.seed, "map-choice", map_index)
    density = float(cfg.densities[g.integers(len(cfg.densities))])
    map_seed = _rng.derive_seed(cfg.seed, "train-map", map_index)
    return generate_map(density, (cfg.extent, cfg.extent), map_seed, kinds="mixed")


def heading_of(v, fallback: float) -> float:
    return float(math.atan2(v[1], v[0])) if np.hypot(v[0], v[1]) > 0.5 else fallback


def expert_episode(world: WorldMap, start, goal, start_state: DroneState, seed: int,
                   limits: PlannerLimits = PlannerLimits(), max_records: int = 200,
                   noise: StereoNoiseModel | None = None):
    """Plan from ``start_state`` and sample a record every 0.1 s until the goal is reached."""
    path = plan_global(world, start, goal, limits, start_state.velocity[:2])
    records, rejected = [], 0
    yaw = float(euler_from_quat(start_state.attitude)[2])
    for k in range(max_records):
        t = k * WAYPOINT_DT
        p, v, _ = path.state(t)
        if k > 0:
            yaw = heading_of(v, yaw)
        rec = sample_local(world, path, t, yaw, _rng.derive_seed(seed, "obs", k),
                           attitude=start_state.attitude if k == 0 else None, noise=noise)
        if rec is None:
            rejected += 1
        else:
            records.append(rec)
            if rec.done:
                break
        if np.linalg.norm(p - path.goal) < GOAL_RADIUS:
            break
    return path, records, rejected


def build_dataset(cfg: DatasetConfig = DatasetConfig(), out_dir=None, progress=None):
    """Generate expert records over ``cfg.n_maps`` training maps.

    Returns ``(records, stats)``; when ``out_dir`` is given the dataset is
    also written there as shards plus an index.
    """
    if cfg.n_maps < 1 or cfg.trajectories_per_map < 1:
        raise ValueError("counts must be at least 1")
    records: list[ExpertRecord] = []
    stats = {"planned": 0, "failed": 0, "rejected_records": 0, "records": 0}
    t_start = time.perf_counter()
    for m in range(cfg.n_maps):
        world = training_map(cfg, m)
        for j in range(cfg.trajectories_per_map):
            g = _rng.stream(cfg.seed, "traj", m, j)
            course = g.uniform(*cfg.course_range)
            try:
                start, goal = sample_start_goal(world, _rng.derive_seed(cfg.seed, "sg", m, j), course_length=course)
            except Exception as exc:  # map too dense near the start line
                log.warning("map %d traj %d: %s", m, j, exc)
                stats["failed"] += 1
                continue
            state = perturb_start(DroneState.hover(start), cfg.perturb_angle, _rng.derive_seed(cfg.seed, "pert", m, j))
            yaw = float(euler_from_quat(state.attitude)[2])
            speed = g.uniform(0.0, CRUISE_SPEED)
            state = DroneState(state.position, speed * np.array([math.cos(yaw), math.sin(yaw), 0.0]),
                               state.attitude, state.omega)
            try:
                _, recs, rej = expert_episode(world, start, goal, state, _rng.derive_seed(cfg.seed, "ep", m, j),
                                              max_records=cfg.max_records_per_trajectory)
            except PlanningFailure as exc:
                log.info("map %d traj %d: %s", m, j, exc)
                stats["failed"] += 1
                continue
            stats["planned"] += 1
            stats["rejected_records"] += rej
            for r in recs:
                r.map_index, r.traj_index = m, j
            records.extend(_canonical(r) for r in recs)
        if progress is not None:
            progress(m + 1, cfg.n_maps, len(records))
    attempts = stats["planned"] + stats["failed"]
    if stats["failed"] > cfg.failure_abort_rate * attempts:
        raise DatasetError(f"planning failed for {stats['failed']} of {attempts} trajectories: {stats}")
    stats["records"] = len(records)
    stats["seconds"] = time.perf_counter() - t_start
    if out_dir is not None:
        write_dataset(out_dir, records, cfg, stats)
    return records, stats


# -- serialisation ----------------------------------------------------------

DATASET_MAGIC = b"DNAVEXP1"
DATASET_VERSION = 1
_IMG = 64 * 64
_RECORD = struct.Struct(f"<{_IMG}f3f4f3f{2 * N_WAYPOINTS}fB3ddiid")


def _pack(r: ExpertRecord) -> bytes:
    return _RECORD.pack(
        *r.image.astype(np.float32).ravel(), *r.velocity, *r.attitude, *r.goal_vec,
        *r.action.astype(np.float32).ravel(), int(r.done), *r.position, r.yaw,
        r.map_index, r.traj_index, r.t,
    )


def _unpack(buf: bytes) -> ExpertRecord:
    vals = _RECORD.unpack(buf)
    i = 0

    def take(n):
        nonlocal i
        out = vals[i : i + n]
        i += n
        return out

    image = np.array(take(_IMG), dtype=np.float32).reshape(64, 64)
    vel = np.array(take(3), dtype=np.float32).astype(float)
    att = np.array(take(4), dtype=np.float32).astype(float)
    gvec = np.array(take(3), dtype=np.float32).astype(float)
    action = np.array(take(2 * N_WAYPOINTS), dtype=np.float32).reshape(N_WAYPOINTS, 2)
    (done,) = take(1)
    pos = np.array(take(3))
    yaw, mi, ti, t = take(4)
    return ExpertRecord(image, vel, att, gvec, action, bool(done), pos, yaw, mi, ti, t)


def _canonical(r: ExpertRecord) -> ExpertRecord:
    """Round a record through the storage precision."""
    return _unpack(_pack(r))


def write_dataset(out_dir, records, cfg: DatasetConfig, stats=None, shard_size: int = 2000) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    shards = []
    for s, start in enumerate(range(0, max(len(records), 1), shard_size)):
        chunk = records[start : start + shard_size]
        meta = json.dumps({"config_hash": cfg.digest(), "count": len(chunk), "first": start}).encode()
        name = f"shard-{s:04d}.bin"
        with open(out / name, "wb") as fh:
            fh.write(DATASET_MAGIC + struct.pack("<II", DATASET_VERSION, len(meta)) + meta)
            for r in chunk:
                fh.write(_pack(r))
        shards.append({"file": name, "first": start, "count": len(chunk)})
    index = {
        "format": DATASET_MAGIC.decode(),
        "version": DATASET_VERSION,
        "config": asdict(cfg),
        "config_hash": cfg.digest(),
        "record_bytes": _RECORD.size,
        "total": len(records),
        "shards": shards,
        "stats": stats or {},
    }
    (out / "index.json").write_text(json.dumps(index, indent=1))
    return out


def read_dataset(path, verify: bool = False):
    """Load all records from a dataset directory; ``verify`` re-checks every plan on its map."""
    root = Path(path)
    index = json.loads((root / "index.json").read_text())
    if index.get("format") != DATASET_MAGIC.decode():
        raise DatasetError(f"{root}: unknown dataset format {index.get('format')!r}")
    records = []
    for sh in index["shards"]:
        raw = (root / sh["file"]).read_bytes()
        if raw[:8] != DATASET_MAGIC:
            raise DatasetError(f"{sh['file']}: bad magic")
        version, mlen = struct.unpack_from("<II", raw, 8)
        if version != DATASET_VERSION:
            raise DatasetError(f"{sh['file']}: unsupported version {version}")
        off = 16 + mlen
        for k in range(sh["count"]):
            records.append(_unpack(raw[off + k * _RECORD.size : off + (k + 1) * _RECORD.size]))
    if verify:
        cfg = DatasetConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in index["config"].items()})
        bad = verify_records(records, cfg)
        if bad:
            raise DatasetError(f"{len(bad)} records decode to plans in collision (first: {bad[:5]})")
    return records, index


def verify_records(records, cfg: DatasetConfig) -> list[int]:
    """Indices of records whose decoded plan is not collision-free on its map."""
    bad, maps = [], {}
    for i, r in enumerate(records):
        if r.map_index not in maps:
            maps[r.map_index] = training_map(cfg, r.map_index)
        plan = decode_action(r.action.astype(np.float64), r.position, r.yaw)
        if not plan_is_clear(maps[r.map_index], r.position, plan.points):
            bad.append(i)
    return bad


def mean_speed(records) -> float:
    return float(np.mean([np.mean(r.action[:, 0]) / WAYPOINT_DT for r in records]))
