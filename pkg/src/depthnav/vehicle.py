"""Point-mass quadrotor with first-order body-rate response and a geometric tracking controller.

World frame is x forward, y left, z up. Body z is the thrust axis.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as _rng
from .transforms import quat_mul, quat_to_rot
from .world import collision_sphere

GRAVITY = 9.81
CONTROL_DT = 1.0 / 50.0
PHYSICS_DT = 1.0 / 250.0
GOAL_RADIUS = 1.5


class SimulationFault(FloatingPointError):
    """Raised when integration produces a non-finite state."""


@dataclass(frozen=True)
class VehicleParams:
    mass: float = 1.1
    drag: float = 0.3  # N s / m
    thrust_to_weight: float = 3.57
    rate_gain: float = 50.0  # 1/s, body-rate loop bandwidth; inf tracks commands instantly

    @property
    def max_thrust(self) -> float:
        return self.thrust_to_weight * self.mass * GRAVITY


@dataclass(frozen=True)
class DroneState:
    position: np.ndarray
    velocity: np.ndarray
    attitude: np.ndarray  # (w, x, y, z), body-to-world
    omega: np.ndarray  # body rates
    t: float = 0.0

    def __post_init__(self):
        for name in ("position", "velocity", "attitude", "omega"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if abs(np.linalg.norm(self.attitude) - 1.0) > 1e-9 and np.all(np.isfinite(self.attitude)):
            raise ValueError("attitude quaternion must be unit length")

    @classmethod
    def hover(cls, position, velocity=(0.0, 0.0, 0.0), yaw: float = 0.0) -> "DroneState":
        q = np.array([math.cos(yaw / 2), 0.0, 0.0, math.sin(yaw / 2)])
        return cls(np.asarray(position, float), np.asarray(velocity, float), q, np.zeros(3))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_rot(self.attitude)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (self.position, self.velocity, self.attitude, self.omega))


@dataclass(frozen=True)
class ControlCommand:
    thrust: float
    body_rates: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "body_rates", np.asarray(self.body_rates, dtype=float))


@dataclass(frozen=True)
class ControllerGains:
    kp: float = 16.0
    kv: float = 8.0
    kq: float = 20.0
    kw: float = 50.0

    def __post_init__(self):
        if min(self.kp, self.kv, self.kq, self.kw) <= 0:
            raise ValueError("controller gains must be positive")

    def as_tuple(self):
        return (self.kp, self.kv, self.kq, self.kw)


def _quat_exp(rotvec: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(rotvec))
    if angle < 1e-12:
        return np.array([1.0, *(0.5 * rotvec)])
    s = math.sin(angle / 2) / angle
    return np.array([math.cos(angle / 2), *(s * rotvec)])


def step_dynamics(state: DroneState, cmd: ControlCommand, dt: float,
                  params: VehicleParams = VehicleParams()) -> DroneState:
    """Advance one physics step.

    Velocity is updated first (semi-implicit), position uses the average of
    old and new velocity, which integrates constant acceleration exactly.
    Body rates relax toward the command with an exact exponential.
    """
    if not 0.0 < dt <= 0.02:
        raise ValueError(f"dt={dt} outside (0, 0.02]")
    thrust = min(max(float(cmd.thrust), 0.0), params.max_thrust)
    b3 = state.rotation[:, 2]
    acc = (thrust / params.mass) * b3 - (params.drag / params.mass) * state.velocity
    acc[2] -= GRAVITY
    v = state.velocity + dt * acc
    p = state.position + 0.5 * dt * (state.velocity + v)
    if math.isinf(params.rate_gain):
        w = cmd.body_rates.copy()
    else:
        decay = math.exp(-params.rate_gain * dt)
        w = cmd.body_rates + (state.omega - cmd.body_rates) * decay
    q = quat_mul(state.attitude, _quat_exp(0.5 * (state.omega + w) * dt))
    q = q / np.linalg.norm(q)
    out = DroneState(p, v, q, w, state.t + dt)
    if not out.is_finite():
        raise SimulationFault(f"non-finite state at t={out.t:.3f}")
    return out


def _vee(m):
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def desired_rotation(a_des: np.ndarray, yaw_ref: float) -> np.ndarray:
    b3 = a_des / np.linalg.norm(a_des)
    c1 = np.array([math.cos(yaw_ref), math.sin(yaw_ref), 0.0])
    b2 = np.cross(b3, c1)
    n = np.linalg.norm(b2)
    if n < 1e-9:  # heading parallel to thrust axis, pick any perpendicular
        b2 = np.cross(b3, [0.0, 1.0, 0.0] if abs(b3[0]) > 0.5 else [1.0, 0.0, 0.0])
        n = np.linalg.norm(b2)
    b2 /= n
    b1 = np.cross(b2, b3)
    return np.column_stack([b1, b2, b3])


def geometric_control(state: DroneState, target_p, target_v, gains: ControllerGains,
                      yaw_ref: float, params: VehicleParams = VehicleParams()) -> ControlCommand:
    """Position/velocity tracking law returning collective thrust and body rates.

    Desired acceleration adds a drag feedforward on the target velocity so that
    constant-velocity tracking has no steady-state lag.
    """
    target_p = np.asarray(target_p, dtype=float)
    target_v = np.asarray(target_v, dtype=float)
    if not (np.all(np.isfinite(target_p)) and np.all(np.isfinite(target_v))):
        raise ValueError("tracking targets must be finite")
    a_des = gains.kp * (target_p - state.position) + gains.kv * (target_v - state.velocity)
    a_des = a_des + (params.drag / params.mass) * target_v
    a_des[2] += GRAVITY
    if np.linalg.norm(a_des) < 1e-6:
        return ControlCommand(params.mass * GRAVITY, np.zeros(3))
    r = state.rotation
    rd = desired_rotation(a_des, yaw_ref)
    e_r = 0.5 * _vee(rd.T @ r - r.T @ rd)
    thrust = float(np.clip(params.mass * a_des @ r[:, 2], 0.0, params.max_thrust))
    return ControlCommand(thrust, -gains.kq * e_r)


def randomize_gains(gains: ControllerGains, fraction: float = 0.10, seed: int = 0) -> ControllerGains:
    """Scale each gain by an independent U(1 - fraction, 1 + fraction) factor."""
    if not 0.0 <= fraction <= 0.5:
        raise ValueError("fraction must lie in [0, 0.5]")
    if fraction == 0.0:
        return gains
    f = _rng.stream(seed, "gains").uniform(1.0 - fraction, 1.0 + fraction, 4)
    return ControllerGains(*(g * k for g, k in zip(gains.as_tuple(), f)))


class Terminal(str, enum.Enum):
    NONE = "none"
    COLLISION = "collision"
    GOAL = "goal_reached"
    TIMEOUT = "out_of_time"


def detect_terminal(state: DroneState, world, goal, radius: float = GOAL_RADIUS,
                    time_limit: float = 30.0, drone_radius: float = 0.3) -> Terminal:
    """Collision takes precedence over reaching the goal, which beats timing out."""
    if collision_sphere(world, state.position, drone_radius):
        return Terminal.COLLISION
    if np.linalg.norm(state.position - np.asarray(goal, float)) < radius:
        return Terminal.GOAL
    if state.t >= time_limit - 1e-9:
        return Terminal.TIMEOUT
    return Terminal.NONE


TRACE_HEADER = [
    "t", "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz",
    "thrust", "wx", "wy", "wz", "target_px", "target_py", "target_pz", "target_vx", "target_vy", "target_vz",
]


@dataclass
class Simulator:
    """Single-owner closed-loop vehicle: controller at 50 Hz over 250 Hz physics."""

    state: DroneState
    gains: ControllerGains = field(default_factory=ControllerGains)
    params: VehicleParams | None = None
    trace: list = field(default_factory=list)
    record: bool = False

    def __post_init__(self):
        if self.params is None:
            self.params = VehicleParams(rate_gain=self.gains.kw)

    def control_tick(self, target_p, target_v, yaw_ref: float) -> DroneState:
        cmd = geometric_control(self.state, target_p, target_v, self.gains, yaw_ref, self.params)
        if self.record:
            s = self.state
            self.trace.append([s.t, *s.position, *s.velocity, *s.attitude, cmd.thrust, *cmd.body_rates,
                               *np.asarray(target_p, float), *np.asarray(target_v, float)])
        n = int(round(CONTROL_DT / PHYSICS_DT))
        for _ in range(n):
            self.state = step_dynamics(self.state, cmd, PHYSICS_DT, self.params)
        # keep time on the control grid despite float accumulation
        self.state = replace(self.state, t=round(self.state.t / CONTROL_DT) * CONTROL_DT)
        return self.state

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_HEADER)
            for row in self.trace:
                w.writerow([f"{x:.9g}" for x in row])
