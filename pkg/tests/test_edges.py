import numpy as np
import pytest

from edgetrace.edges import (
    EdgeEquation2D,
    EdgeSampleBudget,
    GrazingEdgeError,
    alpha_2d,
    alpha_2d_grads,
    alpha_3d,
    alpha_3d_grads,
    clip_segment,
    edge_point_jacobian,
    is_silhouette,
    primary_candidates,
    reservoir_select,
    sample_primary_edges,
    secondary_edge_weights,
)
from edgetrace.engine import GradConfig, linear_gradient
from edgetrace.render import RenderConfig, pack
from edgetrace.scene import EdgeRecord, scene_from_dict

CUBE_V = [-1, -1, -1, 1, -1, -1, 1, 1, -1, -1, 1, -1, -1, -1, 1, 1, -1, 1, 1, 1, 1, -1, 1, 1]
CUBE_F = [0, 2, 1, 0, 3, 2, 4, 5, 6, 4, 6, 7, 0, 1, 5, 0, 5, 4, 3, 6, 2, 3, 7, 6, 0, 4, 7, 0, 7, 3, 1, 2, 6, 1, 6, 5]


def _cam(res=16, pos=(0, 0, 3)):
    return {"position": list(pos), "look_at": [0, 0, 0], "fov": 40, "resolution": [res, res]}


# ---------------------------------------------------------------------------
# 2D edge equation


def test_alpha_2d_axis_edge():
    eq = EdgeEquation2D((0.0, 0.0), (1.0, 0.0))
    assert alpha_2d(eq, 0.3, 0.7) == pytest.approx(0.7)


def test_alpha_2d_hand_value():
    assert alpha_2d(EdgeEquation2D((1.0, 2.0), (3.0, 5.0)), 0.0, 0.0) == -1.0


def test_alpha_2d_zero_at_endpoints(rng):
    for a, b in rng.normal(size=(100, 2, 2)):
        eq = EdgeEquation2D(tuple(a), tuple(b))
        assert alpha_2d(eq, *a) == 0.0
        assert alpha_2d(eq, *b) == 0.0
        A, B, _ = eq.coefficients
        assert np.hypot(A, B) == pytest.approx(np.linalg.norm(a - b), rel=1e-14)


def test_alpha_2d_grads_norm():
    _, norm = alpha_2d_grads(EdgeEquation2D((0.0, 0.0), (3.0, 4.0)), 0.1, 0.2)
    assert norm == 5.0


def test_alpha_2d_grads_fd(rng):
    h = 1e-5
    for a, b, p in rng.uniform(-10, 10, size=(200, 3, 2)):
        g, _ = alpha_2d_grads(EdgeEquation2D(tuple(a), tuple(b)), *p)
        assert abs(g["ax"] + g["bx"] + g["x"]) <= 1e-12
        assert abs(g["ay"] + g["by"] + g["y"]) <= 1e-12
        base = dict(ax=a[0], ay=a[1], bx=b[0], by=b[1], x=p[0], y=p[1])
        for k in base:
            hi, lo = dict(base), dict(base)
            hi[k] += h
            lo[k] -= h
            f = lambda d: alpha_2d(EdgeEquation2D((d["ax"], d["ay"]), (d["bx"], d["by"])), d["x"], d["y"])  # noqa: E731
            fd = (f(hi) - f(lo)) / (2 * h)
            assert g[k] == pytest.approx(fd, rel=1e-6, abs=1e-6)


def test_alpha_2d_orientation_symmetry(rng):
    """Swapping endpoints negates alpha and its gradient; the Dirac weight is unchanged."""
    for a, b, p in rng.normal(size=(50, 3, 2)):
        fu, fl = rng.normal(size=2)
        g1, n1 = alpha_2d_grads(EdgeEquation2D(tuple(a), tuple(b)), *p)
        g2, n2 = alpha_2d_grads(EdgeEquation2D(tuple(b), tuple(a)), *p)
        assert n1 == n2
        assert alpha_2d(EdgeEquation2D(tuple(b), tuple(a)), *p) == pytest.approx(
            -alpha_2d(EdgeEquation2D(tuple(a), tuple(b)), *p), abs=1e-12)
        # contributions: grad * (f_u - f_l) / norm with upper/lower swapped
        assert g1["x"] * (fu - fl) / n1 == pytest.approx(g2["x"] * (fl - fu) / n2, abs=1e-12)


# ---------------------------------------------------------------------------
# 3D edge equation


def test_alpha_3d_hand_values():
    p, v0, v1, m = (0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 2)
    assert alpha_3d(p, v0, v1, m) == 2.0
    assert alpha_3d(p, v1, v0, m) == -2.0
    assert alpha_3d(p, v0, v1, (0.3, 0.4, 0.0)) == 0.0
    g, norm = alpha_3d_grads(p, v0, v1, m)
    np.testing.assert_array_equal(g["m"], [0, 0, 1])
    assert norm == 1.0


def test_alpha_3d_grads_sum_and_fd(rng):
    h = 1e-5
    for p, v0, v1, m in rng.normal(size=(300, 4, 3)):
        g, _ = alpha_3d_grads(p, v0, v1, m)
        total = g["p"] + g["v0"] + g["v1"] + g["m"]
        assert np.max(np.abs(total)) <= 1e-12
        args = dict(p=p, v0=v0, v1=v1, m=m)
        for k in args:
            for c in range(3):
                hi = {q: np.array(v, dtype=float) for q, v in args.items()}
                lo = {q: np.array(v, dtype=float) for q, v in args.items()}
                hi[k][c] += h
                lo[k][c] -= h
                fd = (alpha_3d(**hi) - alpha_3d(**lo)) / (2 * h)
                assert g[k][c] == pytest.approx(fd, rel=1e-6, abs=1e-8)


def _ray_plane(p, v0, v1, t, m0, n):
    w = v0 + (v1 - v0) * t - p
    return p + w * ((m0 - p) @ n) / (w @ n)


def test_edge_point_jacobian_hand_value():
    J = edge_point_jacobian((0, 0, 0), (-1, 0, 1), (1, 0, 1), 0.5, (0, 0, 2), (0, 0, 1))
    np.testing.assert_allclose(J, [4, 0, 0])


def test_edge_point_jacobian_parallel_edge():
    p = np.zeros(3)
    v0, v1 = np.array([0.2, -1, 1]), np.array([0.2, 1, 1])
    m, n = np.array([0.4, 0.0, 2.0]), np.array([0, 0, 1.0])
    J = edge_point_jacobian(p, v0, v1, 0.5, m, n)
    np.testing.assert_allclose(J, 2.0 * (v1 - v0))


def test_edge_point_jacobian_fd(rng):
    h = 1e-6
    done = 0
    while done < 1000:
        p, v0, v1, m0 = rng.normal(size=(4, 3))
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        t = rng.uniform(0.05, 0.95)
        w = v0 + (v1 - v0) * t - p
        if abs(w @ n) < 0.2 * np.linalg.norm(w):
            continue
        m = _ray_plane(p, v0, v1, t, m0, n)
        J = edge_point_jacobian(p, v0, v1, t, m, n)
        fd = (_ray_plane(p, v0, v1, t + h, m0, n) - _ray_plane(p, v0, v1, t - h, m0, n)) / (2 * h)
        assert np.linalg.norm(J - fd) <= 1e-6 * max(np.linalg.norm(fd), 1e-3)
        done += 1


def test_edge_point_jacobian_grazing():
    with pytest.raises(GrazingEdgeError):
        edge_point_jacobian((0, -1, 0), (-1, 0, 0), (1, 0, 0), 0.5, (0, 0, 2), (0, 0, 1))


# ---------------------------------------------------------------------------
# silhouettes and candidates


def test_boundary_edge_is_silhouette():
    V = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
    assert is_silhouette(EdgeRecord(0, 1, 0, None), V, (0, 0, 5), [[0, 1, 2]])


def test_planar_quad_interior_not_silhouette():
    V = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float)
    F = [[0, 1, 2], [0, 2, 3]]
    assert not is_silhouette(EdgeRecord(0, 2, 0, 1), V, (0.3, 0.2, 4), F)
    assert not is_silhouette(EdgeRecord(0, 2, 0, 1), V, (0.3, 0.2, -4), F)


def test_cube_contour():
    s = scene_from_dict({"camera": _cam(), "meshes": [{"vertices": CUBE_V, "indices": CUBE_F, "emission": [1, 1, 1]}]})
    V = s.world_vertices()
    F = s.meshes[0].indices
    edges = s.edges
    assert len(edges) == 18
    sil = [e for e in edges if is_silhouette(e, V, (0, 0, 10), F)]
    assert len(sil) == 4
    for e in sil:  # every contour edge lies on the front face z = +1
        assert V[e.v0, 2] == 1 and V[e.v1, 2] == 1


def test_primary_candidates_skip_coplanar_interior():
    s = scene_from_dict({"camera": _cam(), "meshes": [
        {"vertices": [-0.5, -0.5, 0, 0.5, -0.5, 0, 0.5, 0.5, 0, -0.5, 0.5, 0], "indices": [0, 1, 2, 0, 2, 3],
         "emission": [1, 1, 1]}]})
    ps = pack(s)
    cand = primary_candidates(ps)
    assert len(cand) == 4
    interior = [i for i, e in enumerate(ps.edges) if e[3] >= 0]
    assert not set(cand[:, 0].astype(int)) & set(interior)


@pytest.mark.parametrize("a, b, expected", [
    ((-5, 5), (15, 5), (0.25, 0.75)),
    ((2, 2), (8, 8), (0.0, 1.0)),
    ((-5, -5), (-1, -1), None),
])
def test_clip_segment(a, b, expected):
    r = clip_segment(a, b, 10, 10)
    if expected is None:
        assert r is None
    else:
        assert r == pytest.approx(expected)


# ---------------------------------------------------------------------------
# primary edge sampling


def test_right_edge_moves_right_positive():
    s = scene_from_dict({"camera": _cam(24), "meshes": [
        {"vertices": [-0.5, -0.5, 0, 0.5, -0.5, 0, 0.5, 0.5, 0], "indices": [0, 1, 2], "emission": [1, 1, 1]}],
        "differentiable": ["mesh[0].vertices"]})
    cfg = GradConfig(render=RenderConfig(spp=1), edge_budget=EdgeSampleBudget(20_000, 0))
    g = linear_gradient(s, np.ones((24, 24, 3)), cfg)
    assert g["mesh[0].vertices[1].x"] + g["mesh[0].vertices[2].x"] > 0
    assert g["mesh[0].vertices[1].x"] > 0 and g["mesh[0].vertices[2].x"] > 0


def test_fully_occluded_triangle_contributes_zero():
    s = scene_from_dict({"camera": _cam(16), "meshes": [
        {"vertices": [-3, -3, 0.5, 3, -3, 0.5, 0, 3, 0.5], "indices": [0, 1, 2], "emission": [1, 1, 1]},
        {"vertices": [-0.3, -0.3, 0, 0.3, -0.3, 0, 0, 0.3, 0], "indices": [0, 1, 2], "emission": [2, 0, 0]}],
        "differentiable": ["mesh[1].translation", "mesh[1].vertices"]})
    ps = pack(s)
    assert len(primary_candidates(ps)) == 3  # the hidden triangle's edges are candidates
    wg = sample_primary_edges(ps, np.ones((16, 16, 3)), 5000, 3, 1)
    assert not wg.dV.any()


def test_primary_edges_match_fd_on_emitter():
    """Vertex derivatives of a weighted-sum loss over an unshadowed emitter.

    Pixel edges make the finite-difference reference slow to converge, so it
    uses a small image with many stratified samples and a step of a fifth of a
    pixel; the reference is then good to ~0.2%.
    """
    from edgetrace.engine import fd_gradient

    W = 8
    s = scene_from_dict({
        "camera": {"position": [0, 0, 3], "look_at": [0, 0, 0], "fov": 40, "resolution": [W, W]},
        "meshes": [{"vertices": [-0.6, -0.5, 0, 0.7, -0.4, 0, 0.1, 0.6, 0.2], "indices": [0, 1, 2],
                    "emission": [1, 0.8, 0.5]}],
        "differentiable": ["mesh[0].vertices"]})
    adj = np.random.default_rng(3).uniform(0.5, 1.5, size=(W, W, 3))
    cfg = GradConfig(render=RenderConfig(spp=1, seed=11), edge_budget=EdgeSampleBudget(1_000_000, 0), fd_step=2e-2)
    g = linear_gradient(s, adj, cfg)
    fd = fd_gradient(s, None, cfg, render_config=RenderConfig(spp=65536, max_bounces=0, seed=5, stratified=True),
                     loss_fn=lambda img: float((adj * img).sum()))
    err = np.abs(g.values - fd.values).sum() / np.abs(fd.values).sum()
    assert err < 0.01


# ---------------------------------------------------------------------------
# secondary edge weights and reservoir sampling


def _blocker_scene(half):
    return scene_from_dict({
        "camera": _cam(8, pos=(0, 3, 3)),
        "materials": [{"diffuse": [0.5, 0.5, 0.5]}],
        "meshes": [
            {"vertices": [-2, 0, -2, 2, 0, -2, 2, 0, 2, -2, 0, 2], "indices": [0, 2, 1, 0, 3, 2], "material": 0},
            {"vertices": [-half, 1, 0, half, 1, 0, 0, 1.2, 0.6], "indices": [0, 1, 2], "material": 0},
            {"vertices": [-2, 3, -2, 2, 3, -2, 2, 3, 2, -2, 3, 2], "indices": [0, 1, 2, 0, 2, 3], "material": 0},
        ],
    })


def test_weight_scales_with_length():
    p, n, wo = np.array([0.1, 0.0, 0.2]), np.array([0, 1.0, 0]), np.array([0, 1.0, 0])
    w1 = secondary_edge_weights(_blocker_scene(0.2), p, n, wo, 0)
    w2 = secondary_edge_weights(_blocker_scene(0.4), p, n, wo, 0)
    ps = pack(_blocker_scene(0.2))
    k = [i for i, e in enumerate(ps.edges) if {int(e[0]), int(e[1])} == {4, 5}][0]
    assert w2[k] == pytest.approx(2.0 * w1[k], rel=1e-12)


def test_weights_zero_for_non_silhouette_and_own_face():
    s = _blocker_scene(0.3)
    ps = pack(s)
    p, n, wo = np.array([0.1, 0.0, 0.2]), np.array([0, 1.0, 0]), np.array([0, 1.0, 0])
    w = secondary_edge_weights(s, p, n, wo, 0)
    assert np.all(w >= 0)
    for i, (v0, v1, fa, fb) in enumerate(ps.edges):
        if fa == 0 or fb == 0:
            assert w[i] == 0.0  # edges of the shading face itself
        elif fb >= 0 and not ps.crease[i]:
            assert w[i] == 0.0  # coplanar interior edge of the ceiling quad
    assert w.max() > 0


def test_reservoir_frequencies():
    weights = np.array([0.5, 0.0, 2.0, 1.0, 3.5, 0.25])
    p = weights / weights.sum()
    rng = np.random.default_rng(99)
    n = 100_000
    counts = np.bincount([reservoir_select(weights, u) for u in rng.random(n)], minlength=len(weights))
    sigma = np.sqrt(n * p * (1 - p))
    assert counts[1] == 0
    assert np.all(np.abs(counts - n * p) <= 3 * sigma + 1e-9)


def test_reservoir_empty():
    assert reservoir_select([0.0, 0.0], 0.3) == -1
