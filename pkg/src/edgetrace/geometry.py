"""Rays, hit records and a bounding-volume hierarchy over triangles.

The BVH is built here with numpy (median split on the longest centroid axis,
at most four faces per leaf) and traversed by the kernel.  The functions
:func:`intersect` and :func:`occluded` are convenience wrappers for callers
that only have a vertex/face array pair.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import kernels as _k

RAY_EPS = 1e-6
LEAF_SIZE = 4


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_min: float = 0.0
    t_max: float = float("inf")

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(d)
        if not np.all(np.isfinite(o)) or not np.isfinite(n) or n == 0.0:
            raise ValueError("ray origin/direction must be finite with nonzero direction")
        if not (0.0 <= self.t_min < self.t_max):
            raise ValueError("ray requires 0 <= t_min < t_max")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d / n)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class HitRecord:
    t: float
    face_id: int
    barycentric: tuple[float, float]
    position: np.ndarray
    geometric_normal: np.ndarray


@dataclass
class Bvh:
    """Flattened BVH.

    ``node`` rows are (left, right, start, count); leaves have count > 0 and
    reference ``order[start:start+count]``.  Node 0 is the root.
    """

    bmin: np.ndarray
    bmax: np.ndarray
    node: np.ndarray
    order: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.node.shape[0]

    def leaves(self):
        for i in range(self.n_nodes):
            if self.node[i, 3] > 0:
                s, c = self.node[i, 2], self.node[i, 3]
                yield i, self.order[s : s + c]


def build_bvh(V: np.ndarray, F: np.ndarray, leaf_size: int = LEAF_SIZE) -> Bvh:
    V = np.asarray(V, dtype=np.float64)
    F = np.asarray(F, dtype=np.int64)
    nf = F.shape[0]
    if nf == 0:
        z = np.zeros((1, 3))
        return Bvh(z, z.copy(), np.array([[0, 0, 0, 0]], dtype=np.int32), np.zeros(0, dtype=np.int32))
    tri = V[F]  # (nf, 3, 3)
    lo = tri.min(axis=1)
    hi = tri.max(axis=1)
    cen = tri.mean(axis=1)
    bmin, bmax, nodes, order = [], [], [], []

    def build(idx: np.ndarray) -> int:
        me = len(nodes)
        nodes.append([0, 0, 0, 0])
        bmin.append(lo[idx].min(axis=0))
        bmax.append(hi[idx].max(axis=0))
        if len(idx) <= leaf_size:
            nodes[me] = [0, 0, len(order), len(idx)]
            order.extend(int(i) for i in idx)
            return me
        c = cen[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        srt = idx[np.argsort(c[:, axis], kind="stable")]
        half = len(srt) // 2
        left = build(srt[:half])
        right = build(srt[half:])
        nodes[me] = [left, right, 0, 0]
        return me

    build(np.arange(nf))
    return Bvh(
        np.ascontiguousarray(bmin, dtype=np.float64),
        np.ascontiguousarray(bmax, dtype=np.float64),
        np.ascontiguousarray(nodes, dtype=np.int32),
        np.ascontiguousarray(order, dtype=np.int32),
    )


def face_normals(V: np.ndarray, F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit geometric normals and areas of every face."""
    if len(F) == 0:
        return np.zeros((0, 3)), np.zeros(0)
    a, b, c = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
    N = np.cross(b - a, c - a)
    L = np.linalg.norm(N, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        n = N / L[:, None]
    return n, 0.5 * L


def _geometry_data(bvh: Bvh, V: np.ndarray, F: np.ndarray):
    """A kernel scene with geometry only (no lights, one dummy material)."""
    V = np.ascontiguousarray(V, dtype=np.float64)
    F = np.ascontiguousarray(F, dtype=np.int32)
    FN, FA = face_normals(V, F)
    nf = F.shape[0]
    z3 = np.zeros((1, 3))
    return _k.SceneData(
        V, F, np.ascontiguousarray(FN), np.ascontiguousarray(FA),
        np.zeros(nf, dtype=np.int32), np.zeros(nf, dtype=np.int32),
        z3, z3.copy(), np.ones(1), z3.copy(), np.zeros(1, dtype=np.int32),
        np.zeros(0, dtype=np.int32), np.zeros(0), 0.0,
        bvh.bmin, bvh.bmax, bvh.node, bvh.order,
        np.zeros((0, 4), dtype=np.int32), np.zeros(0, dtype=np.int32),
        np.zeros(14), np.zeros((3, 3, 6)), 1, 1,
        np.zeros((1, 31)), np.zeros((1, 5), dtype=np.int32),
    )


def intersect(bvh: Bvh, faces: tuple[np.ndarray, np.ndarray], ray: Ray) -> HitRecord | None:
    """Nearest hit with t in (t_min, t_max), or None."""
    V, F = faces
    sd = _geometry_data(bvh, V, F)
    tmax = min(ray.t_max, 1e300)
    face, t, b1, b2 = _k.py_intersect(sd, ray.origin, ray.direction, ray.t_min, tmax, False)
    if face < 0:
        return None
    n, _ = face_normals(np.asarray(V, dtype=np.float64), np.asarray(F)[face : face + 1])
    return HitRecord(t, int(face), (b1, b2), ray.at(t), n[0])


def occluded(bvh: Bvh, faces: tuple[np.ndarray, np.ndarray], origin, target) -> bool:
    """True iff a face crosses the open segment origin->target (1e-6 trimmed at both ends)."""
    V, F = faces
    sd = _geometry_data(bvh, V, F)
    return _k.py_occluded(sd, np.asarray(origin, dtype=np.float64), np.asarray(target, dtype=np.float64))
