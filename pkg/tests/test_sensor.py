import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthnav.sensor import (
    CameraIntrinsics,
    DepthImage,
    StereoNoiseModel,
    apply_stereo_noise,
    encode_observation,
    quantization_bound,
    read_pgm,
    render_depth,
    write_pgm,
)
from depthnav.transforms import quat_from_euler
from depthnav.world import Obstacle, WorldMap, generate_map

LEVEL = (1.0, 0.0, 0.0, 0.0)
ORIGIN = (np.array([0.0, 0.0, 2.0]), np.array(LEVEL))


def world_of(*obs):
    return WorldMap((50.0, 50.0), tuple(obs), 0.0, 0)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(width=4)
    with pytest.raises(ValueError):
        CameraIntrinsics(hfov_deg=180.0)


def test_empty_map_is_all_max_depth():
    img = render_depth(world_of(), ORIGIN)
    assert img.depth.shape == (64, 64)
    assert np.all(img.depth == 20.0) and img.valid.all()


def test_fronto_parallel_wall_has_constant_z_depth():
    wall = Obstacle("cube", (2.5, 0.0, 2.0), LEVEL, (0.5, 50.0, 50.0))
    img = render_depth(world_of(wall), ORIGIN)
    np.testing.assert_allclose(img.depth, 2.0, atol=1e-12)
    assert img.depth[32, 32] == pytest.approx(2.0) and img.depth[0, 0] == pytest.approx(2.0)


def test_image_orientation():
    # obstacle to the left (body +y) shows in the left half, one above in the top half
    left = world_of(Obstacle("sphere", (5.0, 2.0, 2.0), LEVEL, (0.5,) * 3))
    img = render_depth(left, ORIGIN).depth
    assert img[:, :32].min() < 20 and img[:, 32:].min() == 20
    up = world_of(Obstacle("sphere", (5.0, 0.0, 3.5), LEVEL, (0.5,) * 3))
    img = render_depth(up, ORIGIN).depth
    assert img[:32].min() < 20 and img[32:].min() == 20


def test_yawed_pose_looks_sideways():
    w = world_of(Obstacle("sphere", (0.0, 5.0, 2.0), LEVEL, (1.0,) * 3))
    assert render_depth(w, ORIGIN).depth.min() == 20.0
    yawed = (ORIGIN[0], quat_from_euler(0.0, 0.0, math.pi / 2))
    assert render_depth(w, yawed).depth[32, 32] == pytest.approx(4.0, abs=0.02)


def analytic_sphere_depth(center, radius, intr: CameraIntrinsics, factor: int):
    """Supersampled z-depth of a sphere seen from (0,0,2) looking along +x."""
    w, h = intr.width * factor, intr.height * factor
    fx = 0.5 * w / math.tan(math.radians(intr.hfov_deg) / 2)
    fy = 0.5 * h / math.tan(math.radians(intr.vfov_deg) / 2)
    u = (np.arange(w) + 0.5 - w / 2) / fx
    v = (np.arange(h) + 0.5 - h / 2) / fy
    uu, vv = np.meshgrid(u, v)
    # world direction (x forward, y left, z up) for camera (right, down, forward)
    d = np.stack([np.ones_like(uu), -uu, -vv], -1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    oc = np.array([0.0, 0.0, 2.0]) - center
    b = d @ oc
    c = oc @ oc - radius**2
    disc = b * b - c
    t = np.where(disc >= 0, -b - np.sqrt(np.maximum(disc, 0)), np.inf)
    z = np.minimum(t * d[..., 0], intr.max_depth)
    return z.reshape(intr.height, factor, intr.width, factor).transpose(0, 2, 1, 3).reshape(
        intr.height, intr.width, factor * factor
    )


def test_sphere_matches_supersampled_oracle():
    intr = CameraIntrinsics()
    center, radius = np.array([6.0, 2.5, 3.0]), 1.5
    img = render_depth(world_of(Obstacle("sphere", tuple(center), LEVEL, (radius,) * 3)), ORIGIN, intr).depth
    sub = analytic_sphere_depth(center, radius, intr, 4)
    hit = sub < intr.max_depth
    mixed = hit.any(-1) & ~hit.all(-1)
    silhouette = np.zeros_like(mixed)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            silhouette |= np.roll(np.roll(mixed, dr, 0), dc, 1)
    interior = ~silhouette
    assert hit.all(-1).sum() > 50
    lo, hi = sub.min(-1), sub.max(-1)
    ok = (img >= lo - 1e-9) & (img <= hi + 1e-9)
    assert ok[interior].all()
    assert np.all((img < intr.max_depth)[interior] == hit.all(-1)[interior])


def test_quantization_example_is_exact():
    model = StereoNoiseModel.identity(baseline=0.5, focal=96.0, disparity_step=0.25)
    assert model.fb == 48.0
    img = DepthImage(np.full((8, 8), 2.0), np.ones((8, 8), bool))
    out = apply_stereo_noise(img, model, seed=0)
    assert np.all(out.depth == 2.0) and out.valid.all()


def test_default_far_field_disparity_spans_two_steps():
    m = StereoNoiseModel()
    assert m.fb / 20.0 >= 2 * m.disparity_step


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_zero_noise_is_identity(seed):
    w = generate_map(1 / 25, seed=seed % 50)
    img = render_depth(w, ORIGIN)
    out = apply_stereo_noise(img, StereoNoiseModel.identity(), seed)
    np.testing.assert_array_equal(out.depth[img.valid], img.depth[img.valid])
    np.testing.assert_array_equal(out.valid, img.valid)


def test_uniform_depth_triggers_no_edge_dropout():
    img = DepthImage(np.full((64, 64), 7.0), np.ones((64, 64), bool))
    model = StereoNoiseModel(dropout=0.0, speckle_rate=0.0, edge_band=3)
    assert apply_stereo_noise(img, model, 1).valid.all()


def test_edges_are_dropped_near_discontinuities():
    d = np.full((64, 64), 15.0)
    d[:, 32:] = 3.0
    model = StereoNoiseModel(dropout=0.0, speckle_rate=0.0, edge_band=2)
    out = apply_stereo_noise(DepthImage(d, np.ones_like(d, bool)), model, 0)
    assert not out.valid[:, 30:34].any()
    assert out.valid[:, :30].all() and out.valid[:, 34:].all()


@pytest.mark.parametrize("seed", range(8))
def test_quantization_error_bound_on_random_scenes(seed):
    w = generate_map(1 / 25, seed=seed, kinds="mixed")
    pose = (np.array([-20.0 + seed, 0.0, 2.0]), quat_from_euler(0, 0, 0.3 * seed))
    img = render_depth(w, pose)
    model = StereoNoiseModel(dropout=0.0, speckle_rate=0.0, edge_band=0)
    out = apply_stereo_noise(img, model, seed)
    v = out.valid
    err = np.abs(out.depth[v] - img.depth[v])
    assert np.all(err <= quantization_bound(img.depth[v], model) + 1e-12)


def test_noise_is_deterministic_per_seed():
    w = generate_map(1 / 25, seed=1)
    img = render_depth(w, ORIGIN)
    m = StereoNoiseModel(speckle_rate=3.0, dropout=0.1)
    a, b, c = (apply_stereo_noise(img, m, s) for s in (4, 4, 5))
    np.testing.assert_array_equal(a.valid, b.valid)
    np.testing.assert_array_equal(a.depth, b.depth)
    assert not np.array_equal(a.valid, c.valid)


def test_noisy_image_stays_in_range():
    img = render_depth(generate_map(1 / 25, seed=3), ORIGIN)
    out = apply_stereo_noise(img, StereoNoiseModel(disparity_sigma=0.5), 2)
    assert np.all(out.depth[out.valid] > 0) and np.all(out.depth <= 20.0)


def test_encode_observation():
    img = DepthImage(np.full((64, 64), 20.0), np.ones((64, 64), bool))
    assert np.all(encode_observation(img) == 1.0)
    d = np.full((64, 64), 2.0)
    mask = np.ones_like(d, bool)
    mask[0, 0] = False
    enc = encode_observation(DepthImage(d, mask))
    assert enc[5, 5] == pytest.approx(0.1) and enc[0, 0] == 1.0
    with pytest.raises(TypeError):
        encode_observation(enc)


def test_depth_image_rejects_bad_values():
    with pytest.raises(ValueError):
        DepthImage(np.full((4, 4), 25.0), np.ones((4, 4), bool))
    DepthImage(np.full((4, 4), 25.0), np.zeros((4, 4), bool))


def test_pgm_export(tmp_path):
    img = render_depth(generate_map(1 / 25, seed=0), ORIGIN)
    img = apply_stereo_noise(img, StereoNoiseModel(), 0)
    write_pgm(img, tmp_path / "d.pgm", tmp_path / "m.pgm")
    mm = read_pgm(tmp_path / "d.pgm")
    mask = read_pgm(tmp_path / "m.pgm")
    np.testing.assert_array_equal(mask.astype(bool), img.valid)
    np.testing.assert_allclose(mm[img.valid] / 1000.0, img.depth[img.valid], atol=5e-4)
    assert np.all(mm[~img.valid] == 0)
