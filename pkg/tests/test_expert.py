import math

import numpy as np
import pytest

from depthnav.expert import (
    DatasetConfig,
    DatasetError,
    PlannerLimits,
    PlanningFailure,
    build_dataset,
    mean_speed,
    perturb_start,
    plan_global,
    read_dataset,
    refine_waypoints,
    sample_local,
    verify_records,
)
from depthnav.trajgen import decode_action, encode_waypoints
from depthnav.transforms import euler_from_quat, quat_from_euler
from depthnav.vehicle import DroneState
from depthnav.world import Obstacle, WorldMap

LEVEL = (1.0, 0.0, 0.0, 0.0)


def world_of(*obs):
    return WorldMap((50.0, 50.0), tuple(obs), 0.0, 0)


def path_clearance(world, path, dt=0.01):
    ts = np.arange(0.0, path.duration, dt)
    return world.sdf(path.positions(ts)).min()


def test_empty_map_gives_straight_cruise():
    path = plan_global(world_of(), (-20, 0, 2), (20, 0, 2), start_velocity=(7.0, 0.0))
    ts = np.arange(0, path.duration, 0.05)
    pos = path.positions(ts)
    speeds = [np.linalg.norm(path.state(t)[1]) for t in ts]
    assert 6.5 <= np.mean(speeds) <= 7.5
    assert np.abs(pos[:, 1]).max() < 1e-9 and np.all(pos[:, 2] == 2.0)


def test_limits_hold_along_path():
    world = world_of(Obstacle("cylinder", (0.0, 0.3, 4.0), LEVEL, (1.0, 1.0, 1.0)))
    lim = PlannerLimits()
    path = plan_global(world, (-15, 0, 2), (15, 0, 2), lim)
    for prim in path.primitives:
        assert np.linalg.norm(prim.accel) <= lim.a_max + 1e-9
        assert np.linalg.norm(prim.v0) <= lim.v_max + 1e-9
        assert np.linalg.norm(prim.end[1]) <= lim.v_max + 1e-9


def test_single_pillar_is_cleared():
    world = world_of(Obstacle("cylinder", (0.0, 0.0, 4.0), LEVEL, (1.0, 1.0, 1.0)))
    path = plan_global(world, (-15, 0, 2), (15, 0, 2), start_velocity=(7.0, 0.0))
    # planner keeps 0.8 m; sampling between 5 cm checks can cost at most a few cm
    assert path_clearance(world, path) >= 0.3 + 0.4
    assert np.linalg.norm(path.state(path.duration)[0] - [15, 0, 2]) < 1.0 + 8.0 * 0.5


def test_enclosed_goal_fails():
    walls = [Obstacle("cube", (5.0 + dx, dy, 2.0), LEVEL, sx) for dx, dy, sx in [
        (0.0, 3.0, (3.0, 0.2, 3.0)), (0.0, -3.0, (3.0, 0.2, 3.0)),
        (3.0, 0.0, (0.2, 3.0, 3.0)), (-3.0, 0.0, (0.2, 3.0, 3.0))]]
    with pytest.raises(PlanningFailure):
        plan_global(world_of(*walls), (-10, 0, 2), (5, 0, 2), PlannerLimits(node_budget=1500))


def test_perturb_start_ranges():
    base = DroneState.hover([0, 0, 2], yaw=0.2)
    r0, p0, y0 = euler_from_quat(base.attitude)
    rolls, yaws = [], []
    for seed in range(10_000):
        s = perturb_start(base, 0.3, seed)
        r, p, y = euler_from_quat(s.attitude)
        assert p == pytest.approx(p0, abs=1e-12)
        rolls.append(r - r0)
        yaws.append(y - y0)
    assert max(map(abs, rolls)) <= 0.3 + 1e-12 and max(map(abs, yaws)) <= 0.3 + 1e-12
    assert max(map(abs, rolls)) > 0.29
    assert perturb_start(base, 0.0, 5) is base
    np.testing.assert_array_equal(perturb_start(base, 0.3, 7).attitude, perturb_start(base, 0.3, 7).attitude)


def test_perturb_keeps_pitch_of_tilted_state():
    q = quat_from_euler(0.05, 0.2, 1.0)
    s = perturb_start(DroneState([0, 0, 2], np.zeros(3), q, np.zeros(3)), 0.3, 3)
    assert euler_from_quat(s.attitude)[1] == pytest.approx(0.2, abs=1e-12)


def test_open_space_refinement_is_identity():
    path = plan_global(world_of(), (-20, 0, 2), (20, 0, 2), start_velocity=(7.0, 0.0))
    pts = path.positions(1.0 + 0.1 * np.arange(1, 11))
    refined = refine_waypoints(world_of(), pts)
    np.testing.assert_array_equal(refined, pts)
    p = path.state(1.0)[0]
    raw = encode_waypoints(refined, p, 0.0)
    np.testing.assert_allclose(decode_action(raw, p, 0.0).points, refined, atol=1e-9)


def test_refinement_pushes_close_waypoints_out():
    world = world_of(Obstacle("cylinder", (0.0, 0.0, 4.0), LEVEL, (1.0, 1.0, 1.0)))
    radius = 0.35
    pts = np.array([[x, radius + 0.3, 2.0] for x in np.linspace(-1.0, 1.0, 10)])
    before = world.sdf(pts)
    after = world.sdf(refine_waypoints(world, pts))
    close = before < 0.5
    assert close.any()
    assert np.all(after[close] > before[close])


def test_sample_local_record():
    world = world_of(Obstacle("sphere", (0.0, 6.0, 2.0), LEVEL, (1.0, 1.0, 1.0)))
    path = plan_global(world, (-20, 0, 2), (20, 0, 2), start_velocity=(7.0, 0.0))
    rec = sample_local(world, path, 1.0, 0.0, seed=3)
    assert rec is not None
    np.testing.assert_allclose(rec.goal_vec, path.goal - path.state(1.0)[0])
    assert rec.image.shape == (64, 64) and rec.image.dtype == np.float32
    assert rec.action.shape == (10, 2) and not rec.done
    near_goal = sample_local(world, path, path.duration - 0.05, 0.0, seed=3)
    assert near_goal.done


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    cfg = DatasetConfig(n_maps=2, trajectories_per_map=2, seed=5)
    out = tmp_path_factory.mktemp("ds")
    records, stats = build_dataset(cfg, out_dir=out)
    return cfg, out, records, stats


def test_dataset_contract(small_dataset):
    cfg, _, records, stats = small_dataset
    assert stats["planned"] == 4 and len(records) > 100
    assert verify_records(records, cfg) == []
    assert 6.0 <= mean_speed(records) <= 8.0
    assert sum(r.done for r in records) >= 1


def test_dataset_round_trip(small_dataset):
    cfg, out, records, _ = small_dataset
    back, index = read_dataset(out, verify=True)
    assert index["total"] == len(records) and index["config_hash"] == cfg.digest()
    for a, b in zip(records, back):
        assert np.array_equal(a.image, b.image) and np.array_equal(a.action, b.action)
        assert np.array_equal(a.position, b.position) and a.done == b.done and a.yaw == b.yaw
        assert np.array_equal(a.velocity, b.velocity) and np.array_equal(a.goal_vec, b.goal_vec)


def test_dataset_is_deterministic(small_dataset):
    cfg, _, records, _ = small_dataset
    again, _ = build_dataset(DatasetConfig(n_maps=1, trajectories_per_map=2, seed=5))
    first_map = [r for r in records if r.map_index == 0]
    assert len(again) == len(first_map)
    assert all(np.array_equal(a.image, b.image) and np.array_equal(a.action, b.action)
               for a, b in zip(again, first_map))


def test_bad_dataset_magic(tmp_path, small_dataset):
    _, out, _, _ = small_dataset
    (tmp_path / "index.json").write_text((out / "index.json").read_text().replace("DNAVEXP1", "XXXX"))
    with pytest.raises(DatasetError):
        read_dataset(tmp_path)


def test_high_failure_rate_aborts():
    cfg = DatasetConfig(n_maps=1, trajectories_per_map=2, densities=(1.0,), course_range=(8.0, 9.0))
    with pytest.raises(DatasetError):
        build_dataset(cfg)
