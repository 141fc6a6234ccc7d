import numpy as np
import pytest

from edgetrace.edges import EdgeSampleBudget
from edgetrace.engine import (
    GradConfig,
    central_difference,
    fd_gradient,
    gradient_components,
    loss_and_adjoint,
    relative_l1_error,
    render_with_gradients,
)
from edgetrace.render import RenderConfig, render
from edgetrace.scene import apply_parameters, read_parameters, scene_from_dict, scene_to_dict

from conftest import make_scene
from test_adjoint import smooth_room


def flat_emitter(e=3.0):
    """An emitter filling the whole view: every pixel reads exactly its emission."""
    return scene_from_dict({
        "camera": {"position": [0, 0, 1], "look_at": [0, 0, 0], "fov": 30, "resolution": [4, 4]},
        "meshes": [
            {"vertices": [-5, -5, 0, 5, -5, 0, 0, 5, 0], "indices": [0, 1, 2], "emission": [e, e, e]},
            {"vertices": [-1, -1, 3, 1, -1, 3, 0, 1, 3], "indices": [0, 1, 2], "emission": [0, 0, 0]},
        ],
        "differentiable": ["mesh[0].emission", "mesh[1].translation"],
    })


class TestLoss:
    def test_identical_images(self, rng):
        a = rng.random((5, 4, 3))
        loss, adj = loss_and_adjoint(a, a.copy())
        assert loss == 0.0
        assert not adj.any()

    def test_single_pixel_unnormalized(self):
        r = np.zeros((3, 3, 3))
        t = np.zeros((3, 3, 3))
        r[1, 2, 0] = 1.0
        loss, adj = loss_and_adjoint(r, t, normalize=False)
        assert loss == 1.0
        assert adj[1, 2, 0] == 2.0
        assert np.count_nonzero(adj) == 1

    def test_normalization(self, rng):
        r, t = rng.random((2, 6, 5, 3))
        l1, a1 = loss_and_adjoint(r, t, normalize=False)
        l2, a2 = loss_and_adjoint(r, t)
        assert l2 == pytest.approx(l1 / 30)
        np.testing.assert_allclose(a2, a1 / 30)

    @pytest.mark.parametrize("kind", ["L2", "L1"])
    def test_adjoint_matches_fd(self, rng, kind):
        r, t = rng.random((2, 4, 3, 3))
        _, adj = loss_and_adjoint(r, t, kind)
        h = 1e-6
        for idx in np.ndindex(r.shape):
            rp, rm = r.copy(), r.copy()
            rp[idx] += h
            rm[idx] -= h
            fd = (loss_and_adjoint(rp, t, kind)[0] - loss_and_adjoint(rm, t, kind)[0]) / (2 * h)
            assert adj[idx] == pytest.approx(fd, abs=1e-6)

    def test_l1_sign_zero(self):
        _, adj = loss_and_adjoint(np.ones((1, 1, 3)), np.array([[[1.0, 0.0, 2.0]]]), "L1")
        np.testing.assert_array_equal(adj[0, 0], [0.0, 1.0, -1.0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shapes differ"):
            loss_and_adjoint(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))

    def test_unknown_loss(self):
        with pytest.raises(ValueError):
            GradConfig(loss="L3")


def test_grad_config_requires_positive_step():
    with pytest.raises(ValueError):
        GradConfig(fd_step=0.0)


def test_no_registered_parameters(emitter_scene):
    _, _, g = render_with_gradients(emitter_scene, np.zeros((16, 16, 3)), GradConfig(render=RenderConfig(spp=2)))
    assert g.values.shape == (0,)


def test_invisible_parameter_zero():
    s = flat_emitter()
    _, _, g = render_with_gradients(s, np.zeros((4, 4, 3)), GradConfig(render=RenderConfig(spp=2)))
    np.testing.assert_array_equal(g.values[3:], 0.0)
    assert np.all(g.values[:3] > 0)


def test_emission_gradient_has_no_edge_part():
    s = make_scene("shaded_triangle", res=16)
    s = scene_from_dict({**scene_to_dict(s), "differentiable": ["mesh[1].emission", "material[0].diffuse"]})
    target = np.zeros((16, 16, 3))
    cfg = GradConfig(render=RenderConfig(spp=4, seed=1), edge_budget=EdgeSampleBudget(5000, 1))
    full = render_with_gradients(s, target, cfg)[2].values
    smooth = render_with_gradients(s, target, cfg.without_edges())[2].values
    np.testing.assert_array_equal(full, smooth)


def test_components_sum_to_full():
    s = make_scene("occluding_triangles", res=16)
    target = np.zeros((16, 16, 3))
    cfg = GradConfig(render=RenderConfig(spp=4, seed=2), edge_budget=EdgeSampleBudget(4000, 1))
    parts = gradient_components(s, target, cfg)
    full = render_with_gradients(s, target, cfg)[2].values
    total = parts["smooth"].values + parts["secondary"].values + parts["primary"].values
    np.testing.assert_allclose(total, full, rtol=1e-12, atol=1e-15)
    assert np.any(parts["primary"].values != 0)


def test_no_silhouettes_full_equals_smooth():
    s = smooth_room()
    target = np.full((12, 12, 3), 0.05)
    cfg = GradConfig(render=RenderConfig(spp=4, seed=3), edge_budget=EdgeSampleBudget(5000, 1))
    full = render_with_gradients(s, target, cfg)[2]
    smooth = render_with_gradients(s, target, cfg.without_edges())[2]
    assert relative_l1_error(full, smooth) < 1e-3


def test_seed_determinism():
    s = make_scene("shadow_floor", res=16)
    target = np.zeros((16, 16, 3))
    cfg = GradConfig(render=RenderConfig(spp=2, seed=77), edge_budget=EdgeSampleBudget(3000, 1))
    a = render_with_gradients(s, target, cfg)
    b = render_with_gradients(s, target, cfg)
    assert a[0].rgb.tobytes() == b[0].rgb.tobytes()
    assert a[2].values.tobytes() == b[2].values.tobytes()


def test_fd_quadratic_exact():
    assert central_difference(lambda x: x * x, 3.0, 1e-3) == pytest.approx(6.0, abs=1e-9)
    s = flat_emitter(3.0)
    cfg = GradConfig(render=RenderConfig(spp=1), fd_step=1e-3)
    fd = fd_gradient(s, None, cfg, params=[0], loss_fn=lambda img: float(img[..., 0].mean()) ** 2)
    assert fd.values[0] == pytest.approx(6.0, abs=1e-9)


def test_fd_matched_seeds_zero():
    s = flat_emitter()
    cfg = GradConfig(render=RenderConfig(spp=3, seed=5))
    fd = fd_gradient(s, np.zeros((4, 4, 3)), cfg)
    np.testing.assert_array_equal(fd.values[3:], 0.0)


def test_fd_params_subset():
    s = flat_emitter()
    cfg = GradConfig(render=RenderConfig(spp=1))
    fd = fd_gradient(s, np.zeros((4, 4, 3)), cfg, params=[1])
    assert fd.values[0] == 0.0 and fd.values[1] != 0.0


def test_fd_one_sided_agreement_order():
    """|forward - central| shrinks linearly with h on a smooth configuration."""
    s = smooth_room()
    rc = RenderConfig(spp=4, seed=4)
    target = np.full((12, 12, 3), 0.05)
    x0 = read_parameters(s)
    i = s.registry.index("camera.position.x")

    def loss(x):
        return loss_and_adjoint(render(apply_parameters(s, x), rc), target)[0]

    gaps = []
    for h in (4e-3, 2e-3, 1e-3):
        xp, xm = x0.copy(), x0.copy()
        xp[i] += h
        xm[i] -= h
        central = (loss(xp) - loss(xm)) / (2 * h)
        forward = (loss(xp) - loss(x0)) / h
        gaps.append(abs(forward - central))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[0] / gaps[1] == pytest.approx(2.0, rel=0.1)
    assert gaps[1] / gaps[2] == pytest.approx(2.0, rel=0.1)


def test_fd_richardson_cancels_quadratic_term():
    s = flat_emitter(2.0)
    cfg = GradConfig(render=RenderConfig(spp=1), fd_step=0.1)
    fd = fd_gradient(s, None, cfg, params=[0], loss_fn=lambda img: float(img[..., 0].mean()) ** 3,
                     richardson=True)
    assert fd.values[0] == pytest.approx(12.0, rel=1e-12)


def test_relative_l1_error():
    assert relative_l1_error([1.0, -1.0], [1.0, -1.0]) == 0.0
    assert relative_l1_error([1.1, -1.0], [1.0, -1.0]) == pytest.approx(0.05)
    assert relative_l1_error([0.0], [0.0]) == 0.0
    assert relative_l1_error([1.0], [0.0]) == float("inf")
