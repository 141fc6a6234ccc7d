import math

import numpy as np
import pytest

from edgetrace.backend import kernels
from edgetrace.geometry import Ray
from edgetrace.render import (
    PathState,
    RenderConfig,
    new_path_state,
    pack,
    pixel_sample_key,
    primary_ray,
    radiance,
    render,
    sample_pixel_point,
)
from edgetrace.scene import scene_from_dict

from conftest import make_scene

CHI2_99_DOF_P001 = 148.23  # upper 0.1% point of chi-square with 99 degrees of freedom


def floor_under_square_light(half=1.0, height=1.0, kd=0.8, le=1.0):
    return scene_from_dict({
        "camera": {"position": [0, 3, 3], "look_at": [0, 0, 0], "fov": 40, "resolution": [4, 4]},
        "materials": [{"diffuse": [kd, kd, kd]}],
        "meshes": [
            {"vertices": [-20, 0, -20, 20, 0, -20, 20, 0, 20, -20, 0, 20], "indices": [0, 2, 1, 0, 3, 2],
             "material": 0},
            {"vertices": [-half, height, -half, half, height, -half, half, height, half, -half, height, half],
             "indices": [0, 1, 2, 0, 2, 3], "emission": [le, le, le]},
        ],
    })


def square_form_factor(half, height):
    """Point-to-parallel-square form factor, point below the square's centre."""
    A = B = half / height
    corner = (A / math.sqrt(1 + A * A) * math.atan(B / math.sqrt(1 + A * A))
              + B / math.sqrt(1 + B * B) * math.atan(A / math.sqrt(1 + B * B))) / (2 * math.pi)
    return 4 * corner


@pytest.mark.parametrize("args, expected", [((3, 5, 0, 0), (3.0, 5.0)), ((3, 5, 0.5, 0.5), (3.5, 5.5))])
def test_sample_pixel_point(args, expected):
    assert sample_pixel_point(*args) == expected


def test_pixel_jitter_uniform():
    """The renderer's jitter dimensions cover the pixel uniformly (10x10 chi-square)."""
    n = 100_000
    counts = np.zeros((10, 10))
    for s in range(n):
        key = pixel_sample_key(7, 3, 5, s)
        x, y = sample_pixel_point(3, 5, kernels.py_rnd(key, 0), kernels.py_rnd(key, 1))
        counts[int((x - 3) * 10), int((y - 5) * 10)] += 1
    expected = n / 100
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    assert chi2 < CHI2_99_DOF_P001


def test_primary_ray_center(emitter_scene):
    cam = emitter_scene.camera
    r = primary_ray(cam, cam.width / 2, cam.height / 2)
    f, _, _ = cam.basis()
    np.testing.assert_allclose(r.direction, f, atol=1e-12)
    np.testing.assert_allclose(r.origin, cam.position)


def test_primary_ray_roundtrip(rng):
    s = scene_from_dict({"camera": {"position": [0.3, 1, 2], "look_at": [0, 0.2, -1], "fov": 55,
                                    "resolution": [40, 24]}})
    cam = s.camera
    for x, y in rng.uniform([0, 0], [40, 24], size=(1000, 2)):
        r = primary_ray(cam, x, y)
        px, py = cam.project(r.at(7.5))
        assert px == pytest.approx(x, abs=1e-6)
        assert py == pytest.approx(y, abs=1e-6)


def test_primary_ray_corners():
    fov, W, H = 60.0, 32, 16
    s = scene_from_dict({"camera": {"position": [0, 0, 0], "look_at": [0, 0, -1], "fov": fov,
                                    "resolution": [W, H]}})
    th = math.tan(math.radians(fov) / 2)
    r = primary_ray(s.camera, 0, 0)
    d = np.array([-th * W / H, th, -1.0])
    np.testing.assert_allclose(r.direction, d / np.linalg.norm(d), atol=1e-12)
    r = primary_ray(s.camera, W, H)
    d = np.array([th * W / H, -th, -1.0])
    np.testing.assert_allclose(r.direction, d / np.linalg.norm(d), atol=1e-12)


def test_direct_emitter_hit_returns_emission(emitter_scene):
    L = radiance(emitter_scene, Ray([0, 0, 3], [0, 0, -1]), 12345, 2)
    np.testing.assert_array_equal(L, [1.0, 0.8, 0.5])


def test_miss_is_black(emitter_scene):
    L = radiance(emitter_scene, Ray([0, 0, 3], [0, 0, 1]), 1, 2)
    np.testing.assert_array_equal(L, [0, 0, 0])


def test_form_factor_floor():
    half, height, kd = 1.0, 1.0, 0.8
    ps = pack(floor_under_square_light(half, height, kd))
    ray = Ray([0, 0.5, 0], [0, -1, 0])
    n = 1_000_000
    total = 0.0
    for s in range(n):
        total += radiance(ps, ray, pixel_sample_key(11, 0, 0, s), 0)[0]
    expected = kd * square_form_factor(half, height)
    assert total / n == pytest.approx(expected, rel=0.01)


def test_bounces_irrelevant_without_secondary_paths(emitter_scene):
    a = render(emitter_scene, RenderConfig(spp=4, max_bounces=0, seed=2)).rgb
    b = render(emitter_scene, RenderConfig(spp=4, max_bounces=3, seed=2)).rgb
    np.testing.assert_array_equal(a, b)


def test_empty_scene_black():
    s = scene_from_dict({"camera": {"position": [0, 0, 1], "look_at": [0, 0, 0], "fov": 40, "resolution": [6, 5]}})
    img = render(s, RenderConfig(spp=2))
    assert img.rgb.shape == (5, 6, 3)
    assert not img.rgb.any()


@pytest.mark.parametrize("stratified", [False, True])
def test_render_deterministic(stratified):
    s = make_scene("cornell_box", res=16)
    cfg = RenderConfig(spp=4, max_bounces=2, seed=9, stratified=stratified)
    a = render(s, cfg).rgb
    b = render(s, cfg).rgb
    assert a.tobytes() == b.tobytes()
    assert np.all(a >= 0) and np.all(np.isfinite(a))
    c = render(s, RenderConfig(spp=4, max_bounces=2, seed=10, stratified=stratified)).rgb
    assert not np.array_equal(a, c)


def _seed_variance(scene, spp, n_seeds):
    imgs = np.stack([render(scene, RenderConfig(spp=spp, seed=1000 + k)).rgb[..., 0] for k in range(n_seeds)])
    return imgs.var(axis=0, ddof=1)


def test_doubling_spp_halves_variance(lit_triangle):
    v1 = _seed_variance(lit_triangle, 4, 64)
    v2 = _seed_variance(lit_triangle, 8, 64)
    mask = v1 > 0
    ratio = v1[mask].sum() / v2[mask].sum()
    assert ratio == pytest.approx(2.0, abs=0.2)


def test_standard_error_slope(lit_triangle):
    spps = [1, 4, 16, 64]
    se = [np.sqrt(_seed_variance(lit_triangle, s, 32).mean()) for s in spps]
    slope = np.polyfit(np.log(spps), np.log(se), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.1)


def test_path_state_checkpoints(lit_triangle):
    st = new_path_state(2)
    assert isinstance(st, PathState)
    radiance(lit_triangle, primary_ray(lit_triangle.camera, 8, 8), 99, 2, path_state_out=st)
    assert 1 <= len(st.vertices) <= 3
    v = st.vertices[0]
    assert v.face_id >= 0
    assert np.linalg.norm(v.normal) == pytest.approx(1.0)
