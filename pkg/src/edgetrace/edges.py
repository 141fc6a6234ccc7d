"""Edge sampling of visibility discontinuities.

Screen-space (primary) edges: a projected edge a->b splits the image plane
by the line ``alpha(x, y) = A x + B y + C`` with ``A = a_y - b_y``,
``B = b_x - a_x`` and ``C = a_x b_y - b_x a_y``.  Sampling points on the
clipped edge and tracing one ray just above and one just below it estimates
the Dirac term of the pixel-integral derivative.

3D (secondary) edges: from a shading point p, an edge (v0, v1) splits
directions by ``alpha(p, m) = (m - p) . (v0 - p) x (v1 - p)``.  The kernel
samples one such edge per shading point and integrates the jump across it;
the helpers below expose the same pieces for testing and analysis.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .backend import kernels as _k
from .render import PackedScene, _packed, resolve_threads

PRIMARY_EPS = 1e-6  # screen-space offset, pixels
CHUNK = 4096


@dataclass(frozen=True)
class EdgeEquation2D:
    a: tuple[float, float]
    b: tuple[float, float]

    @property
    def coefficients(self) -> tuple[float, float, float]:
        (ax, ay), (bx, by) = self.a, self.b
        return ay - by, bx - ax, ax * by - bx * ay


@dataclass(frozen=True)
class EdgeSampleBudget:
    n_primary: int = 100_000
    n_secondary_per_shading_point: int = 1

    def __post_init__(self):
        if self.n_primary < 0 or self.n_secondary_per_shading_point < 0:
            raise ValueError("edge sample counts must be non-negative")


def alpha_2d(eq: EdgeEquation2D, x: float, y: float) -> float:
    """A x + B y + C, evaluated as (b - a) x (p - a) so it is exactly 0 at both endpoints."""
    (ax, ay), (bx, by) = eq.a, eq.b
    return (bx - ax) * (y - ay) - (by - ay) * (x - ax)


def alpha_2d_grads(eq: EdgeEquation2D, x: float, y: float) -> tuple[dict, float]:
    (ax, ay), (bx, by) = eq.a, eq.b
    g = {
        "ax": by - y,
        "ay": x - bx,
        "bx": y - ay,
        "by": ax - x,
        "x": ay - by,
        "y": bx - ax,
    }
    return g, float(np.hypot(ax - bx, ay - by))


def alpha_3d(p, v0, v1, m) -> float:
    p, v0, v1, m = (np.asarray(a, dtype=np.float64) for a in (p, v0, v1, m))
    return float((m - p) @ np.cross(v0 - p, v1 - p))


def alpha_3d_grads(p, v0, v1, m) -> tuple[dict, float]:
    """Gradients of alpha_3d; the p-gradient is the translation-consistent one."""
    p, v0, v1, m = (np.asarray(a, dtype=np.float64) for a in (p, v0, v1, m))
    a, b, c = v0 - p, v1 - p, m - p
    gm = np.cross(a, b)
    g0 = np.cross(b, c)
    g1 = np.cross(c, a)
    return {"p": -(gm + g0 + g1), "v0": g0, "v1": g1, "m": gm}, float(np.linalg.norm(gm))


class GrazingEdgeError(ValueError):
    pass


def edge_point_jacobian(p, v0, v1, t: float, m, n_m) -> np.ndarray:
    """d m(t) / dt where m(t) is the projection of the edge point onto the receiver plane."""
    p, v0, v1, m, n_m = (np.asarray(a, dtype=np.float64) for a in (p, v0, v1, m, n_m))
    e = v1 - v0
    w = v0 + e * t - p
    den = w @ n_m
    if abs(den) < 1e-8 * np.linalg.norm(w):
        raise GrazingEdgeError("edge direction grazes the receiver plane")
    tau = ((m - p) @ n_m) / den
    return tau * (e - w * (e @ n_m) / den)


def is_silhouette(edge, world_vertices, viewpoint, faces) -> bool:
    """Boundary edges always; interior edges when exactly one face faces the viewpoint."""
    if edge.face_b is None:
        return True
    V = np.asarray(world_vertices, dtype=np.float64)
    F = np.asarray(faces)
    vp = np.asarray(viewpoint, dtype=np.float64)
    s = []
    for f in (edge.face_a, edge.face_b):
        a, b, c = V[F[f]]
        s.append(np.cross(b - a, c - a) @ (vp - a))
    return (s[0] > 0) != (s[1] > 0)


def clip_segment(a, b, W: float, H: float) -> tuple[float, float] | None:
    """Liang-Barsky clip of a->b against [0, W] x [0, H]; returns the t-range."""
    t0, t1 = 0.0, 1.0
    dx, dy = b[0] - a[0], b[1] - a[1]
    for p, q in ((-dx, a[0]), (dx, W - a[0]), (-dy, a[1]), (dy, H - a[1])):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        r = q / p
        if p < 0.0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return None
    return t0, t1


def primary_candidates(ps: PackedScene) -> np.ndarray:
    """Rows (edge, a_x, a_y, b_x, b_y, t0, t1, clipped length) of sampleable screen edges.

    Silhouettes from the camera position, boundary edges and creases between
    non-coplanar faces qualify; edges with an endpoint behind the camera are
    skipped.
    """
    cam = ps.scene.camera
    W, H = cam.resolution
    f, r, u = cam.basis()
    th = np.tan(np.radians(cam.fov) / 2)
    kx = W / (2 * th * (W / H))
    ky = -H / (2 * th)
    V, F, E = ps.V, ps.F, ps.edges
    if len(E) == 0:
        return np.zeros((0, 8))
    c = V - cam.position
    cz = c @ f
    scale = np.linalg.norm(c, axis=1)
    front = cz > 1e-9 * np.maximum(scale, 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = W / 2 + kx * (c @ r) / cz
        sy = H / 2 + ky * (c @ u) / cz
    rows = []
    for i, (v0, v1, fa, fb) in enumerate(E):
        if not (front[v0] and front[v1]):
            continue
        if fb >= 0 and not ps.crease[i]:
            a, b, cc = V[F[fa]]
            s0 = np.cross(b - a, cc - a) @ (cam.position - a)
            a, b, cc = V[F[fb]]
            s1 = np.cross(b - a, cc - a) @ (cam.position - a)
            if (s0 > 0) == (s1 > 0):
                continue
        pa = (sx[v0], sy[v0])
        pb = (sx[v1], sy[v1])
        L = float(np.hypot(pb[0] - pa[0], pb[1] - pa[1]))
        if L == 0.0:
            continue
        cl = clip_segment(pa, pb, W, H)
        if cl is None or cl[1] <= cl[0]:
            continue
        rows.append([i, pa[0], pa[1], pb[0], pb[1], cl[0], cl[1], (cl[1] - cl[0]) * L])
    return np.ascontiguousarray(rows, dtype=np.float64).reshape(-1, 8)


def sample_primary_edges(scene, adjoint_image: np.ndarray, n_samples: int, seed: int, max_bounces: int,
                         threads: int | None = None, project_index: int | None = None):
    """Screen-space edge term of the gradient of sum(adjoint * image).

    Returns a WorldGrad (or, with ``project_index``, an (H, W) image of the
    per-pixel derivative along that parameter).
    """
    from .adjoint import WorldGrad, tangent_buffers

    ps = _packed(scene)
    W, H = ps.scene.camera.resolution
    cand = primary_candidates(ps)
    out = np.zeros((H, W))
    total = WorldGrad.zeros(ps)
    if n_samples <= 0 or len(cand) == 0:
        return out if project_index is not None else total
    total_len = float(cand[:, 7].sum())
    cdf = np.cumsum(cand[:, 7]) / total_len
    cdf[-1] = 1.0
    adj = np.ascontiguousarray(adjoint_image, dtype=np.float64)
    seed = int(seed) & (2**64 - 1)
    chunks = [(j, min(j + CHUNK, n_samples)) for j in range(0, n_samples, CHUNK)]

    def run(ch):
        if project_index is None:
            wg = WorldGrad.zeros(ps)
            gb = wg.buffers()
            o = out
        else:
            wg = None
            gb = tangent_buffers(ps, project_index)
            o = np.zeros((H, W))
        _k.primary_edge_chunk(ps.data, gb, cand, cdf, total_len, n_samples, ch[0], ch[1], seed,
                              max_bounces, PRIMARY_EPS, adj, o)
        return wg if project_index is None else o

    n = resolve_threads(threads)
    if n == 1 or len(chunks) == 1:
        parts = [run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(n) as ex:
            parts = list(ex.map(run, chunks))
    if project_index is not None:
        for o in parts:
            out += o
        return out
    for wg in parts:  # chunk order
        total.add(wg)
    return total


def secondary_edge_weights(scene, p, n, wo, face: int) -> np.ndarray:
    """Importance weight of every scene edge for the shading point (p, n, wo) on ``face``."""
    ps = _packed(scene)
    out = np.zeros(len(ps.edges))
    _k.py_edge_weights(ps.data, np.asarray(p, float), np.asarray(n, float), np.asarray(wo, float), face, out)
    return out


def sample_secondary_edge(scene, p, n, wo, face: int, throughput_adjoint, key: int, max_bounces: int,
                          bounce: int = 0, n_samples: int = 1):
    """Edge-sample the discontinuities seen from one shading point.

    Returns (WorldGrad of the edge vertices, adjoint of p, adjoint of n).
    """
    from .adjoint import WorldGrad

    ps = _packed(scene)
    wg = WorldGrad.zeros(ps)
    gb = wg.buffers()
    gp, gn = _k.py_secondary_edges(ps.data, gb, bounce, np.asarray(p, float), np.asarray(n, float),
                                   np.asarray(wo, float), face, np.asarray(throughput_adjoint, float),
                                   int(key) & (2**64 - 1), max_bounces, n_samples)
    return wg, np.array(gp), np.array(gn)


def reservoir_select(weights, u: float) -> int:
    """Single-uniform weighted reservoir sampling; index i is chosen with p = w_i / sum(w).

    The uniform is re-scaled after every accept/reject decision so one
    number suffices for the whole stream (the kernel uses the same scheme).
    """
    chosen = -1
    wsum = 0.0
    for i, w in enumerate(weights):
        if w <= 0.0:
            continue
        wsum += w
        p = w / wsum
        if u < p:
            chosen = i
            u = u / p
        else:
            u = (u - p) / (1.0 - p)
    return chosen
