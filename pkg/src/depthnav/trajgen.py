"""Cylindrical action decoding and minimum-acceleration piecewise trajectories.

A raw action is N pairs (dr_i, dpsi_i). Waypoints follow the cumulative
heading recurrence theta_i = theta_{i-1} + dpsi_i, p_i = p_{i-1} +
dr_i [cos theta_i, sin theta_i], at a fixed flight altitude.

The trajectory fit works per axis in endpoint-derivative coordinates: each
quartic segment is fixed by five boundary derivatives, the cost is a
quadratic form in those derivatives, and the free ones (interior knot
velocities and the start accelerations of middle segments) are eliminated in
closed form. A single segment with a resting end would need six conditions,
so in that case it becomes a quintic.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .transforms import wrap_angle

N_WAYPOINTS = 10
WAYPOINT_DT = 0.1
DR_MAX = 1.2
DPSI_MAX = 0.4
ALTITUDE = 2.0
MAX_DEGREE = 5


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class WaypointPlan:
    origin: np.ndarray  # (3,) current position, the implicit waypoint 0
    points: np.ndarray  # (N, 3)
    headings: np.ndarray  # (N,) cumulative heading of each step
    heading0: float
    dt: float = WAYPOINT_DT
    steps: np.ndarray | None = None  # (N, 2) horizontal offsets between consecutive waypoints

    def __len__(self):
        return len(self.points)


def decode_action(raw, position, heading: float, altitude: float = ALTITUDE, dt: float = WAYPOINT_DT) -> WaypointPlan:
    """Turn (dr, dpsi) pairs into absolute waypoints at fixed altitude."""
    raw = np.asarray(raw, dtype=float).reshape(-1, 2)
    if not math.isfinite(heading):
        raise ValueError("heading must be finite")
    theta = heading + np.cumsum(raw[:, 1])
    steps = raw[:, :1] * np.column_stack([np.cos(theta), np.sin(theta)])
    xy = np.asarray(position, dtype=float)[:2] + np.cumsum(steps, axis=0)
    pts = np.column_stack([xy, np.full(len(xy), altitude)])
    origin = np.array([position[0], position[1], altitude], dtype=float)
    return WaypointPlan(origin, pts, theta, float(heading), dt, steps)


def _encode_steps(d: np.ndarray, heading0: float) -> np.ndarray:
    dr = np.hypot(d[:, 0], d[:, 1])
    theta = np.arctan2(d[:, 1], d[:, 0])
    prev_theta = np.concatenate([[heading0], theta[:-1]])
    return np.column_stack([dr, wrap_angle(theta - prev_theta)])


def encode_action(plan: WaypointPlan) -> np.ndarray:
    """Inverse of :func:`decode_action` (exact for dr > 0).

    Works from the stored step offsets when present, since differencing
    absolute positions far from the origin loses bits for very short steps.
    """
    if plan.steps is not None:
        return _encode_steps(plan.steps, plan.heading0)
    return encode_waypoints(plan.points, plan.origin, plan.heading0)


def encode_waypoints(points, origin, heading0: float) -> np.ndarray:
    """(dr, dpsi) pairs that reach absolute ``points`` from ``origin``."""
    points = np.asarray(points, dtype=float)
    prev = np.vstack([np.asarray(origin, float)[:2], points[:-1, :2]])
    return _encode_steps(points[:, :2] - prev, heading0)


class TrajectorySample(NamedTuple):
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    clamped: bool


@dataclass(frozen=True)
class PiecewiseTrajectory:
    coeffs: np.ndarray  # (3, N, 6) ascending powers of local time, zero padded
    seg_duration: float
    t0: float = 0.0

    @property
    def n_segments(self) -> int:
        return self.coeffs.shape[1]

    @property
    def duration(self) -> float:
        return self.n_segments * self.seg_duration

    @property
    def t_end(self) -> float:
        return self.t0 + self.duration


def _deriv_row(degree: int, order: int, s: float) -> np.ndarray:
    row = np.zeros(degree + 1)
    for k in range(order, degree + 1):
        row[k] = math.perm(k, order) * s ** (k - order)
    return row


# boundary conditions per segment layout: (derivative order, at end?)
_LAYOUTS = {
    "head": (4, [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1)]),
    "tail": (4, [(0, 0), (1, 0), (0, 1), (1, 1), (2, 1)]),
    "quintic": (5, [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (2, 1)]),
}


def accel_gram(degree: int, T: float) -> np.ndarray:
    """Q with c^T Q c = integral over [0, T] of (d2/dt2 sum c_k t^k)^2."""
    q = np.zeros((degree + 1, degree + 1))
    for j in range(2, degree + 1):
        for k in range(2, degree + 1):
            q[j, k] = j * (j - 1) * k * (k - 1) * T ** (j + k - 3) / (j + k - 3)
    return q


@lru_cache(maxsize=64)
def _segment_maps(layout: str, T: float):
    degree, conds = _LAYOUTS[layout]
    A = np.array([_deriv_row(degree, r, T if end else 0.0) for r, end in conds])
    a_inv = np.linalg.inv(A)
    h = a_inv.T @ accel_gram(degree, T) @ a_inv
    return a_inv, 0.5 * (h + h.T)


@lru_cache(maxsize=64)
def _assembly(n: int, T: float, terminal_rest: bool):
    """Global derivative variables, per-segment selections and the reduced solve operator.

    Variable order: positions w_0..w_N, v_0, a_0, terminal v_N, a_N (all fixed),
    then interior velocities v_1..v_{N-1}, middle start accelerations (free).
    With ``terminal_rest`` off v_N and the last start acceleration become free.
    """
    names = [f"w{i}" for i in range(n + 1)] + ["v0", "a0"]
    free = [f"v{i}" for i in range(1, n)] + [f"s{i}" for i in range(1, n - 1)]
    if terminal_rest:
        names += [f"v{n}", f"a{n}"]
    else:
        free += [f"v{n}"] + ([f"s{n - 1}"] if n > 1 else [])
    names += free
    index = {nm: i for i, nm in enumerate(names)}
    n_fixed = len(names) - len(free)
    segs = []
    for i in range(n):
        acc0 = "a0" if i == 0 else f"s{i}"
        last = i == n - 1
        if last and terminal_rest:
            if n == 1:
                layout, vars_ = "quintic", ["w0", "v0", "a0", "w1", f"v{n}", f"a{n}"]
            else:
                layout, vars_ = "tail", [f"w{i}", f"v{i}", f"w{i + 1}", f"v{n}", f"a{n}"]
        else:
            layout, vars_ = "head", [f"w{i}", f"v{i}", acc0, f"w{i + 1}", f"v{i + 1}"]
        sel = np.zeros((len(vars_), len(names)))
        sel[np.arange(len(vars_)), [index[v] for v in vars_]] = 1.0
        segs.append((layout, sel))
    H = np.zeros((len(names), len(names)))
    for layout, sel in segs:
        H += sel.T @ _segment_maps(layout, T)[1] @ sel
    hzz = H[n_fixed:, n_fixed:]
    hzf = H[n_fixed:, :n_fixed]
    solve = -np.linalg.solve(hzz, hzf) if len(free) else np.zeros((0, n_fixed))
    return names, n_fixed, segs, solve, H


def fit_min_acc(plan_or_points, p0, v0, a0, seg_duration: float | None = None,
                t0: float = 0.0, terminal_rest: bool = True) -> PiecewiseTrajectory:
    """Minimum-acceleration trajectory through the waypoints from state (p0, v0, a0).

    ``plan_or_points`` is a :class:`WaypointPlan` or an (N, 3) array; the
    segment duration defaults to the plan spacing.
    """
    if isinstance(plan_or_points, WaypointPlan):
        pts = plan_or_points.points
        T = plan_or_points.dt if seg_duration is None else seg_duration
    else:
        pts = np.asarray(plan_or_points, dtype=float).reshape(-1, 3)
        T = WAYPOINT_DT if seg_duration is None else seg_duration
    n = len(pts)
    if n < 1:
        raise TrajectoryError("need at least one waypoint")
    if not T > 0:
        raise TrajectoryError(f"segment duration must be positive, got {T}")
    names, n_fixed, segs, solve, _ = _assembly(n, float(T), bool(terminal_rest))
    fixed = np.zeros((n_fixed, 3))
    fixed[0] = p0
    fixed[1 : n + 1] = pts
    fixed[n + 1] = v0
    fixed[n + 2] = a0
    # terminal v, a (if fixed) stay zero
    x = np.vstack([fixed, solve @ fixed])
    coeffs = np.zeros((3, n, MAX_DEGREE + 1))
    for i, (layout, sel) in enumerate(segs):
        a_inv, _ = _segment_maps(layout, float(T))
        c = a_inv @ (sel @ x)  # (deg+1, 3)
        coeffs[:, i, : c.shape[0]] = c.T
    return PiecewiseTrajectory(coeffs, float(T), float(t0))


def _poly_eval(c: np.ndarray, s: float):
    k = np.arange(c.shape[-1])
    sp = s ** k
    p = c @ sp
    v = c[..., 1:] @ (k[1:] * s ** (k[1:] - 1))
    a = c[..., 2:] @ (k[2:] * (k[2:] - 1) * s ** (k[2:] - 2))
    return p, v, a


def sample(traj: PiecewiseTrajectory, t: float) -> TrajectorySample:
    """Position, velocity and acceleration at absolute time ``t`` (clamped to the domain)."""
    clamped = not traj.t0 <= t <= traj.t_end
    tl = min(max(t - traj.t0, 0.0), traj.duration)
    i = min(int(tl // traj.seg_duration), traj.n_segments - 1)
    p, v, a = _poly_eval(traj.coeffs[:, i, :], tl - i * traj.seg_duration)
    return TrajectorySample(p, v, a, clamped)


def cost(traj: PiecewiseTrajectory) -> float:
    """Integral of squared acceleration norm, from the closed-form Gram matrix."""
    q = accel_gram(MAX_DEGREE, traj.seg_duration)
    c = traj.coeffs.reshape(-1, MAX_DEGREE + 1)
    return float(np.einsum("ij,jk,ik->", c, q, c))


def write_trajectory_csv(traj: PiecewiseTrajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# t0={traj.t0!r} seg_duration={traj.seg_duration!r} segments={traj.n_segments}\n")
        w = csv.writer(fh)
        w.writerow(["segment", "axis", "k", "value"])
        for ax, name in enumerate("xyz"):
            for i in range(traj.n_segments):
                for k in range(MAX_DEGREE + 1):
                    w.writerow([i, name, k, repr(float(traj.coeffs[ax, i, k]))])


def read_trajectory_csv(path) -> PiecewiseTrajectory:
    with open(path) as fh:
        meta = dict(kv.split("=") for kv in fh.readline()[1:].split())
        rows = list(csv.DictReader(fh))
    n = int(meta["segments"])
    coeffs = np.zeros((3, n, MAX_DEGREE + 1))
    for r in rows:
        coeffs["xyz".index(r["axis"]), int(r["segment"]), int(r["k"])] = float(r["value"])
    return PiecewiseTrajectory(coeffs, float(meta["seg_duration"]), float(meta["t0"]))


def write_waypoints_csv(plan: WaypointPlan, path, t0: float = 0.0) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "z"])
        for i, p in enumerate(plan.points, start=1):
            w.writerow([repr(t0 + i * plan.dt), *(repr(float(x)) for x in p)])
