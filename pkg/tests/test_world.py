import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from depthnav import kernels
from depthnav.world import (
    FLIGHT_ALTITUDE,
    MapGenerationError,
    Obstacle,
    Ray,
    WorldMap,
    collision_sphere,
    generate_map,
    load_map,
    raycast,
    sample_start_goal,
    save_map,
)

IDENTITY = (1.0, 0.0, 0.0, 0.0)


def world_of(*obstacles):
    return WorldMap((50.0, 50.0), tuple(obstacles), 0.0, 0)


def inside(ob: Obstacle, pts):
    """Point membership written from the shape definitions, without SDFs."""
    w, x, y, z = ob.orientation
    local = Rotation.from_quat([x, y, z, w]).inv().apply(pts - np.asarray(ob.position))
    h = ob.half_dims
    if ob.kind == "sphere":
        return np.linalg.norm(local, axis=1) <= h[0]
    if ob.kind in ("cube", "wall"):
        return np.all(np.abs(local) <= h, axis=1)
    rad = np.hypot(local[:, 0], local[:, 1])
    if ob.kind == "cylinder":
        return (rad <= h[0]) & (np.abs(local[:, 2]) <= h[2])
    # cone: radius shrinks linearly from h[0] at z=-h[2] to 0 at z=+h[2]
    allowed = h[0] * (h[2] - local[:, 2]) / (2 * h[2])
    return (np.abs(local[:, 2]) <= h[2]) & (rad <= allowed)


def inside_any(world, pts):
    out = np.zeros(len(pts), dtype=bool)
    for ob in world.obstacles:
        out |= inside(ob, pts)
    return out


def slab_oracle(origin, direction, lo, hi):
    tmin, tmax = -np.inf, np.inf
    for i in range(3):
        if direction[i] == 0:
            if not lo[i] <= origin[i] <= hi[i]:
                return np.inf
            continue
        a = (lo[i] - origin[i]) / direction[i]
        b = (hi[i] - origin[i]) / direction[i]
        tmin, tmax = max(tmin, min(a, b)), min(tmax, max(a, b))
    if tmax < max(tmin, 0):
        return np.inf
    return max(tmin, 0.0)


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    previous = kernels.BACKEND
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


def test_empty_map_raycast_returns_max_range(backend):
    assert raycast(world_of(), Ray((0, 0, 2), (1, 0, 0), 20.0)) == 20.0


def test_unit_sphere_ahead(backend):
    w = world_of(Obstacle("sphere", (5.0, 0.0, 2.0), IDENTITY, (1.0, 1.0, 1.0)))
    assert raycast(w, Ray((0, 0, 2), (1, 0, 0), 20.0)) == pytest.approx(4.0, abs=1e-12)


def test_cube_matches_slab_oracle(backend):
    w = world_of(Obstacle("cube", (3.0, 0.0, 2.0), IDENTITY, (0.5, 0.5, 0.5)))
    d = raycast(w, Ray((0, 0, 2), (1, 0, 0), 20.0))
    assert d == pytest.approx(2.5, abs=1e-12)
    assert d == pytest.approx(slab_oracle(np.array([0, 0, 2.0]), np.array([1.0, 0, 0]),
                                          np.array([2.5, -0.5, 1.5]), np.array([3.5, 0.5, 2.5])))


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_random_rays_against_slab_oracle(seed):
    g = np.random.default_rng(seed)
    c = g.uniform(-3, 3, 3)
    half = g.uniform(0.2, 1.5, 3)
    w = WorldMap((10.0, 10.0), (Obstacle("cube", tuple(c), IDENTITY, tuple(half)),), 0.0, 0)
    o = g.uniform(-6, 6, 3)
    d = g.normal(size=3)
    d /= np.linalg.norm(d)
    got = raycast(w, Ray(tuple(o), tuple(d), 30.0))
    want = min(slab_oracle(o, d, c - half, c + half), 30.0)
    assert got == pytest.approx(want, abs=1e-9)


@pytest.mark.parametrize("kind", ["cylinder", "cone", "sphere", "cube", "wall"])
def test_raycast_agrees_with_ray_marching(kind, backend):
    g = np.random.default_rng(7)
    step = 1e-3
    for _ in range(25):
        q = Rotation.random(random_state=g).as_quat()
        ob = Obstacle(kind, tuple(g.uniform(-1, 1, 3)), (q[3], q[0], q[1], q[2]), (1.0, 1.0, 1.0))
        w = world_of(ob)
        o = g.normal(size=3)
        o = 8 * o / np.linalg.norm(o)
        d = -o / np.linalg.norm(o) + 0.15 * g.normal(size=3)
        d /= np.linalg.norm(d)
        ts = np.arange(0, 20, step)
        hits = inside(ob, o + ts[:, None] * d)
        want = ts[np.argmax(hits)] if hits.any() else 20.0
        got = raycast(w, Ray(tuple(o), tuple(d), 20.0))
        assert got == pytest.approx(want, abs=2 * step)


def test_ray_starting_inside_returns_zero(backend):
    w = world_of(Obstacle("sphere", (0.0, 0.0, 2.0), IDENTITY, (1.0, 1.0, 1.0)))
    assert raycast(w, Ray((0, 0, 2), (0, 1, 0), 20.0)) == 0.0


def test_ray_rejects_non_unit_direction():
    with pytest.raises(ValueError):
        Ray((0, 0, 0), (1.0 + 1e-6, 0.0, 0.0), 10.0)


def test_backends_agree_on_random_map():
    if len(kernels.available_backends()) < 2:
        pytest.skip("compiled extension not built")
    w = generate_map(1 / 25, seed=3, kinds="mixed")
    g = np.random.default_rng(0)
    o = np.column_stack([g.uniform(-25, 25, 400), g.uniform(-25, 25, 400), g.uniform(0, 4, 400)])
    d = g.normal(size=(400, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    out = {}
    previous = kernels.BACKEND
    for name in kernels.available_backends():
        kernels.use_backend(name)
        out[name] = (w.raycast_many(o, d, 20.0), w.sdf(o))
    kernels.use_backend(previous)
    np.testing.assert_allclose(out["compiled"][0], out["python"][0], atol=1e-10)
    np.testing.assert_allclose(out["compiled"][1], out["python"][1], atol=1e-10)


def test_collision_empty_and_surface(backend):
    assert not collision_sphere(world_of(), (0, 0, 2), 0.3)
    w = world_of(Obstacle("sphere", (0.0, 0.0, 2.0), IDENTITY, (1.0, 1.0, 1.0)))
    assert collision_sphere(w, (1.0, 0.0, 2.0), 0.3)
    assert not collision_sphere(w, (1.31, 0.0, 2.0), 0.3)
    with pytest.raises(ValueError):
        collision_sphere(w, (0, 0, 0), 0.0)


def test_collision_matches_grid_oracle(backend):
    spacing = 0.05
    checked = 0
    for seed in range(10):
        w = generate_map(1 / 2, extent=(6.0, 6.0), seed=seed, kinds="mixed")
        g = np.random.default_rng(seed)
        for _ in range(30):
            c = np.array([g.uniform(-3, 3), g.uniform(-3, 3), g.uniform(0.5, 4)])
            r = 0.3
            # skip spheres whose surface lies within a grid cell of an obstacle boundary
            if abs(w.sdf(c[None])[0] - r) < spacing * math.sqrt(3):
                continue
            ax = np.arange(-r, r + 1e-12, spacing)
            grid = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
            grid = grid[np.linalg.norm(grid, axis=1) <= r] + c
            assert collision_sphere(w, c, r) == bool(inside_any(w, grid).any())
            checked += 1
    assert checked > 150


def test_raycast_hit_point_is_in_collision(backend):
    w = generate_map(1 / 25, seed=11, kinds="mixed")
    g = np.random.default_rng(1)
    for _ in range(200):
        o = np.array([g.uniform(-25, 25), g.uniform(-25, 25), FLIGHT_ALTITUDE])
        d = g.normal(size=3)
        d /= np.linalg.norm(d)
        dist = raycast(w, Ray(tuple(o), tuple(d), 20.0))
        assert dist <= 20.0
        if dist < 20.0:
            assert collision_sphere(w, o + dist * d, 1e-6)


def test_density_sets_obstacle_count():
    assert len(generate_map(1 / 25, seed=0).obstacles) == 100
    assert len(generate_map(1 / 80, seed=0).obstacles) == 31
    assert generate_map(0.0, seed=0).obstacles == ()


def test_generation_is_deterministic():
    a = generate_map(1 / 30, seed=5, kinds="mixed")
    b = generate_map(1 / 30, seed=5, kinds="mixed")
    assert a.obstacles == b.obstacles
    assert a.obstacles != generate_map(1 / 30, seed=6, kinds="mixed").obstacles


def test_scales_and_tilt_within_bounds():
    w = generate_map(1 / 25, seed=2)
    for ob in w.obstacles:
        assert all(2 / 3 <= s <= 4 / 3 for s in ob.scale)
        axis = Rotation.from_quat([*ob.orientation[1:], ob.orientation[0]]).apply([0, 0, 1])
        assert math.degrees(math.acos(axis[2])) <= 15.0 + 1e-9
        # trunk base rests on the ground and reaches through flight altitude
        base = np.asarray(ob.position) - ob.half_dims[2] * axis
        assert base[2] == pytest.approx(0.0, abs=1e-12)
        assert (np.asarray(ob.position) + ob.half_dims[2] * axis)[2] > FLIGHT_ALTITUDE


def test_keep_out_points_are_clear():
    pts = [(-10.0, 0.0, 2.0), (10.0, 0.0, 2.0)]
    w = generate_map(1 / 4, extent=(24.0, 24.0), seed=1, kinds="mixed", clear_points=pts)
    assert np.all(w.sdf(np.array(pts)) >= 1.0)


def test_impossible_keep_out_raises():
    pts = [(x, y, 2.0) for x in np.arange(-2, 2.1, 0.5) for y in np.arange(-2, 2.1, 0.5)]
    with pytest.raises(MapGenerationError):
        generate_map(1.0, extent=(4.0, 4.0), seed=0, clear_points=pts)


def test_start_goal_protocol():
    w = generate_map(1 / 30, extent=(60.0, 60.0), seed=4)
    for s in range(1000):
        start, goal = sample_start_goal(w, seed=s)
        assert -20.0 <= start[1] <= 20.0
        assert start[2] == FLIGHT_ALTITUDE
        np.testing.assert_array_equal(goal - start, [60.0, 0.0, 0.0])
        if s < 50:
            assert np.all(w.sdf(np.stack([start, goal])) >= 1.0)


def test_map_file_round_trip(tmp_path):
    w = generate_map(1 / 30, seed=9, kinds="mixed", clear_points=[(0.1, 0.2, 2.0)])
    save_map(w, tmp_path / "m.txt")
    back = load_map(tmp_path / "m.txt")
    assert back == w
    with pytest.raises(ValueError):
        (tmp_path / "bad.txt").write_text("nope\n")
        load_map(tmp_path / "bad.txt")
