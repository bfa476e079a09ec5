"""Closed-loop flight: 10 Hz waypoint actions, trajectory fit, 50 Hz tracking control."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import rng as _rng
from ..expert import PlannerLimits, heading_of, plan_global, refine_waypoints
from ..irl.losses import COLLISION, GOAL, NONE, TIMEOUT
from ..irl.networks import Obs
from ..sensor import CameraIntrinsics, StereoNoiseModel, apply_stereo_noise, encode_observation, render_depth
from ..trajgen import DPSI_MAX, DR_MAX, N_WAYPOINTS, WAYPOINT_DT, decode_action, encode_waypoints, fit_min_acc, sample
from ..transforms import yaw_of
from ..vehicle import CONTROL_DT, ControllerGains, DroneState, Simulator, Terminal, detect_terminal
from ..world import WorldMap

TICKS_PER_ACTION = int(round(WAYPOINT_DT / CONTROL_DT))
TERMINAL_CODES = {Terminal.NONE: NONE, Terminal.COLLISION: COLLISION, Terminal.GOAL: GOAL, Terminal.TIMEOUT: TIMEOUT}


class StepResult(tuple):
    __slots__ = ()

    def __new__(cls, obs, terminal, info):
        return super().__new__(cls, (obs, terminal, info))

    obs = property(lambda self: self[0])
    terminal = property(lambda self: self[1])
    info = property(lambda self: self[2])


@dataclass
class FlightEnv:
    """One episode of depth-camera flight in a fixed map.

    ``step`` takes a raw (10, 2) action, decodes it relative to the current
    heading, fits a minimum-acceleration trajectory from the current state
    and tracks its first 0.1 s with the geometric controller.
    """

    world: WorldMap
    start: np.ndarray
    goal: np.ndarray
    seed: int = 0
    gains: ControllerGains = field(default_factory=ControllerGains)
    time_limit: float = 30.0
    noise: StereoNoiseModel | None = field(default_factory=StereoNoiseModel)
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    start_state: DroneState | None = None

    def __post_init__(self):
        self.start = np.asarray(self.start, float)
        self.goal = np.asarray(self.goal, float)
        state = self.start_state or DroneState.hover(self.start)
        self.sim = Simulator(state, self.gains)
        self.path = [state.position.copy()]
        self.speeds = [float(np.linalg.norm(state.velocity))]
        self.times = [state.t]
        self.ref_accel = np.zeros(3)
        self.terminal = detect_terminal(state, self.world, self.goal, time_limit=self.time_limit)
        self.n_actions = 0

    @property
    def state(self) -> DroneState:
        return self.sim.state

    @property
    def done(self) -> bool:
        return self.terminal != Terminal.NONE

    def observe(self) -> Obs:
        s = self.state
        depth = render_depth(self.world, (s.position, s.attitude), self.intrinsics)
        if self.noise is not None:
            depth = apply_stereo_noise(depth, self.noise, _rng.derive_seed(self.seed, "obs", self.n_actions))
        image = encode_observation(depth).astype(np.float32).astype(float)
        return Obs(image, s.velocity.copy(), s.attitude.copy(), self.goal - s.position)

    def step(self, action) -> StepResult:
        if self.done:
            raise RuntimeError("episode already finished")
        action = np.asarray(action, float).reshape(N_WAYPOINTS, 2)
        s = self.state
        yaw = yaw_of(s.attitude)
        plan = decode_action(action, s.position, yaw)
        traj = fit_min_acc(plan, s.position, s.velocity, self.ref_accel, t0=s.t)
        for k in range(1, TICKS_PER_ACTION + 1):
            ref = sample(traj, s.t + k * CONTROL_DT)
            state = self.sim.control_tick(ref.p, ref.v, heading_of(ref.v, yaw))
            if not state.is_finite():
                raise FloatingPointError(f"vehicle state diverged at t={state.t:.2f}")
            self.path.append(state.position.copy())
            self.speeds.append(float(np.linalg.norm(state.velocity)))
            self.times.append(state.t)
            self.ref_accel = ref.a
            self.terminal = detect_terminal(state, self.world, self.goal, time_limit=self.time_limit)
            if self.done:
                break
        self.n_actions += 1
        return StepResult(self.observe(), TERMINAL_CODES[self.terminal], {"terminal": self.terminal})


def random_action(gen: np.random.Generator) -> np.ndarray:
    """Uniform over the bounded cylindrical action set."""
    return np.column_stack([gen.uniform(0.0, DR_MAX, N_WAYPOINTS), gen.uniform(-DPSI_MAX, DPSI_MAX, N_WAYPOINTS)])


class ExpertPilot:
    """Privileged policy: replans a global path and follows it from the nearest point."""

    def __init__(self, world: WorldMap, start, goal, limits: PlannerLimits = PlannerLimits()):
        self.world = world
        self.path = plan_global(world, start, goal, limits)
        self.t = 0.0

    def _nearest_time(self, p) -> float:
        ts = self.t + np.arange(0.0, 2.0, 0.02)
        d = np.linalg.norm(self.path.positions(ts)[:, :2] - p[:2], axis=1)
        self.t = float(ts[int(np.argmin(d))])
        return self.t

    def __call__(self, obs: Obs, state: DroneState) -> np.ndarray:
        t = self._nearest_time(state.position)
        future = self.path.positions(t + WAYPOINT_DT * np.arange(1, N_WAYPOINTS + 1))
        future = refine_waypoints(self.world, future)
        raw = encode_waypoints(future, state.position, yaw_of(state.attitude))
        return np.column_stack([np.clip(raw[:, 0], 0.0, DR_MAX), np.clip(raw[:, 1], -DPSI_MAX, DPSI_MAX)])
