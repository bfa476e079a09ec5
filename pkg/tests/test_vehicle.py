import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from depthnav.transforms import quat_from_euler, yaw_of
from depthnav.vehicle import (
    GRAVITY,
    ControlCommand,
    ControllerGains,
    DroneState,
    SimulationFault,
    Simulator,
    Terminal,
    VehicleParams,
    detect_terminal,
    geometric_control,
    randomize_gains,
    step_dynamics,
)
from depthnav.world import Obstacle, WorldMap

P = VehicleParams()


def test_hover_is_force_balanced():
    s = DroneState.hover([0, 0, 2])
    out = step_dynamics(s, ControlCommand(P.mass * GRAVITY, np.zeros(3)), 0.004)
    assert np.abs(out.velocity - s.velocity).max() < 1e-9


def test_free_fall_one_second():
    s = DroneState.hover([0, 0, 100])
    params = VehicleParams(drag=0.0)
    for _ in range(250):
        s = step_dynamics(s, ControlCommand(0.0, np.zeros(3)), 0.004, params)
    assert s.velocity[2] == pytest.approx(-9.81, abs=1e-3)
    assert s.position[2] == pytest.approx(100 - 0.5 * 9.81, abs=1e-9)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
@settings(max_examples=25, deadline=None)
def test_energy_conserved_without_thrust_or_drag(vx, vy, vz):
    s = DroneState.hover([0, 0, 50], velocity=[vx, vy, vz])
    params = VehicleParams(drag=0.0)

    def energy(st_):
        return 0.5 * st_.velocity @ st_.velocity + GRAVITY * st_.position[2]

    e0 = energy(s)
    for _ in range(250):
        s = step_dynamics(s, ControlCommand(0.0, np.zeros(3)), 0.004, params)
    assert abs(energy(s) - e0) <= 1e-3 * abs(e0)


def quat_integration_oracle(q0, omega, duration, dt=1e-5):
    """Brute-force body-rate integration with scipy rotations at a fine step."""
    r = Rotation.from_quat([q0[1], q0[2], q0[3], q0[0]])
    step = Rotation.from_rotvec(np.asarray(omega) * dt)
    for _ in range(int(round(duration / dt))):
        r = r * step
    x, y, z, w = r.as_quat()
    return np.array([w, x, y, z])


def test_constant_yaw_rate_advances_yaw_by_pi():
    w = np.array([0.0, 0.0, math.pi])
    s = DroneState([0, 0, 2], np.zeros(3), [1, 0, 0, 0], w)
    for _ in range(250):
        s = step_dynamics(s, ControlCommand(P.mass * GRAVITY, w), 0.004)
    assert abs(abs(yaw_of(s.attitude)) - math.pi) < 1e-3


def test_attitude_integration_matches_fine_oracle():
    q0 = quat_from_euler(0.1, -0.2, 0.3)
    w = np.array([0.4, -0.7, 1.1])
    s = DroneState([0, 0, 2], np.zeros(3), q0, w)
    for _ in range(50):
        s = step_dynamics(s, ControlCommand(P.mass * GRAVITY, w), 0.004)
    ref = quat_integration_oracle(q0, w, 0.2)
    assert min(np.abs(s.attitude - ref).max(), np.abs(s.attitude + ref).max()) < 1e-6


def test_body_rate_lag_is_first_order():
    s = DroneState.hover([0, 0, 2])
    cmd = ControlCommand(P.mass * GRAVITY, [0.0, 0.0, 1.0])
    s = step_dynamics(s, cmd, 0.01, VehicleParams(rate_gain=20.0))
    assert s.omega[2] == pytest.approx(1 - math.exp(-0.2), rel=1e-12)


def test_dynamics_rejects_bad_dt_and_reports_nan():
    s = DroneState.hover([0, 0, 2])
    with pytest.raises(ValueError):
        step_dynamics(s, ControlCommand(0.0, np.zeros(3)), 0.05)
    with pytest.raises(SimulationFault):
        step_dynamics(s, ControlCommand(0.0, [np.nan, 0, 0]), 0.004)


def test_thrust_is_clamped():
    s = DroneState.hover([0, 0, 2])
    out = step_dynamics(s, ControlCommand(1e6, np.zeros(3)), 0.004, VehicleParams(drag=0.0))
    assert out.velocity[2] == pytest.approx((3.57 * GRAVITY - GRAVITY) * 0.004, rel=1e-12)


def test_on_target_gives_hover_thrust():
    s = DroneState.hover([1.0, 2.0, 2.0])
    cmd = geometric_control(s, [1.0, 2.0, 2.0], [0, 0, 0], ControllerGains(), 0.0)
    assert abs(cmd.thrust - P.mass * GRAVITY) < 1e-6
    np.testing.assert_array_equal(cmd.body_rates, 0.0)


def test_position_error_pitches_toward_target():
    g = ControllerGains()
    s = DroneState.hover([0.0, 0.0, 2.0])
    cmd = geometric_control(s, [1.0, 0, 2.0], [0, 0, 0], g, 0.0)
    # positive rotation about body y tilts the thrust axis toward +x
    assert cmd.body_rates[1] > 0
    assert abs(cmd.body_rates[0]) < 1e-12
    tilt = math.atan2(g.kp, GRAVITY)
    assert cmd.body_rates[1] == pytest.approx(g.kq * math.sin(tilt), rel=1e-9)


def test_degenerate_acceleration_holds_attitude():
    s = DroneState.hover([0.0, 0.0, 2.0])
    g = ControllerGains(kp=GRAVITY)
    cmd = geometric_control(s, [0.0, 0.0, 1.0], [0, 0, 0], g, 0.0)
    assert cmd.thrust == pytest.approx(P.mass * GRAVITY)
    np.testing.assert_array_equal(cmd.body_rates, 0.0)


def step_response(gains):
    sim = Simulator(DroneState.hover([0, 0, 2]), gains)
    xs = np.array([sim.control_tick([1, 0, 2], [0, 0, 0], 0.0).position[0] for _ in range(200)])
    t = np.arange(1, 201) * 0.02
    outside = np.flatnonzero(np.abs(xs - 1.0) > 0.02)
    settle = t[outside[-1]] if len(outside) else 0.0
    return xs.max() - 1.0, settle


def test_step_response_settles():
    overshoot, settle = step_response(ControllerGains())
    assert overshoot < 0.2 and settle < 2.0


@pytest.mark.parametrize("seed", range(5))
def test_step_response_with_randomized_gains(seed):
    overshoot, settle = step_response(randomize_gains(ControllerGains(), 0.1, seed))
    assert overshoot < 0.2 and settle < 2.2


def tracking_rmse(gains, speed=7.0, duration=10.0, transient=3.0):
    sim = Simulator(DroneState.hover([0, 0, 2]), gains)
    err = []
    for _ in range(int(duration / 0.02)):
        t = sim.state.t
        s = sim.control_tick([speed * t, 0, 2], [speed, 0, 0], 0.0)
        if s.t > transient:
            err.append(np.linalg.norm(s.position - [speed * s.t, 0, 2]))
    return float(np.sqrt(np.mean(np.square(err))))


def test_straight_line_tracking():
    assert tracking_rmse(ControllerGains()) < 0.15


def test_gain_randomization():
    base = ControllerGains()
    assert randomize_gains(base, 0.0, 3) == base
    assert randomize_gains(base, 0.1, 3) == randomize_gains(base, 0.1, 3)
    assert randomize_gains(base, 0.1, 3) != randomize_gains(base, 0.1, 4)
    nominal = np.array(base.as_tuple())
    for seed in range(10_000):
        r = np.array(randomize_gains(base, 0.1, seed).as_tuple()) / nominal
        assert np.all(r >= 0.9) and np.all(r <= 1.1)
    with pytest.raises(ValueError):
        randomize_gains(base, 0.6, 0)


def test_terminal_detection_precedence():
    goal = np.array([5.0, 0.0, 2.0])
    rock = Obstacle("sphere", (5.0, 0.0, 2.0), (1.0, 0, 0, 0), (0.5, 0.5, 0.5))
    empty = WorldMap((50.0, 50.0), (), 0.0, 0)
    blocked = WorldMap((50.0, 50.0), (rock,), 0.0, 0)
    at_goal = DroneState.hover(goal)
    assert detect_terminal(at_goal, empty, goal) == Terminal.GOAL
    assert detect_terminal(at_goal, blocked, goal) == Terminal.COLLISION
    far = DroneState.hover([0.0, 0.0, 2.0])
    assert detect_terminal(far, empty, goal) == Terminal.NONE
    late = DroneState(far.position, far.velocity, far.attitude, far.omega, t=30.0)
    assert detect_terminal(late, empty, goal) == Terminal.TIMEOUT


def test_trace_csv(tmp_path):
    sim = Simulator(DroneState.hover([0, 0, 2]), record=True)
    for _ in range(5):
        sim.control_tick([1, 0, 2], [0, 0, 0], 0.0)
    sim.write_trace(tmp_path / "trace.csv")
    rows = (tmp_path / "trace.csv").read_text().splitlines()
    assert rows[0].startswith("t,px,py,pz") and len(rows) == 6
    assert sim.state.t == pytest.approx(0.1, abs=1e-12)
