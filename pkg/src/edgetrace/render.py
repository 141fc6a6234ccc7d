"""Forward path tracing.

Each pixel sample owns a counter-based random stream keyed by
(seed, px, py, sample), so images do not depend on tile order or on the
number of worker threads.  Radiance estimates use next-event estimation at
every vertex (one area-weighted light sample, shadow-tested) plus a
cosine-sampled indirect bounce while bounces remain; emission is counted
only where the camera ray lands.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .backend import kernels as _k
from .geometry import Ray, build_bvh, face_normals
from .scene import Scene

NCK = 31
NCI = 5
TILE = 16


@dataclass(frozen=True)
class RenderConfig:
    spp: int = 16
    max_bounces: int = 1
    seed: int = 0
    threads: int | None = None
    stratified: bool = False

    def __post_init__(self):
        if self.spp < 1:
            raise ValueError("spp must be >= 1")
        if self.max_bounces < 0:
            raise ValueError("max_bounces must be >= 0")


@dataclass
class ImageBuffer:
    width: int
    height: int
    rgb: np.ndarray = None

    def __post_init__(self):
        if self.rgb is None:
            self.rgb = np.zeros((self.height, self.width, 3))
        if self.rgb.shape != (self.height, self.width, 3):
            raise ValueError("image buffer shape mismatch")

    def mean(self) -> float:
        return float(self.rgb.mean())


@dataclass
class PathVertex:
    position: np.ndarray
    normal: np.ndarray
    face_id: int
    incoming: np.ndarray
    light_face: int
    light_point: np.ndarray
    throughput: np.ndarray
    light_visible: bool


@dataclass
class PathState:
    """Checkpointed vertices of one traced path (at most max_bounces + 1)."""

    vertices: list[PathVertex] = field(default_factory=list)
    ck: np.ndarray | None = None
    ci: np.ndarray | None = None

    def __len__(self):
        return len(self.vertices)


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("EDGETRACE_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


# ---------------------------------------------------------------------------
# packing

@dataclass
class PackedScene:
    scene: Scene
    data: object  # kernels.SceneData
    V: np.ndarray
    F: np.ndarray
    edges: np.ndarray  # (E, 4) v0, v1, face_a, face_b(-1)
    crease: np.ndarray
    vert_offset: np.ndarray
    face_offset: np.ndarray
    n_materials: int


def camera_arrays(camera) -> tuple[np.ndarray, np.ndarray]:
    f, r, u = camera.basis()
    th = np.tan(np.radians(camera.fov) / 2)
    cam = np.concatenate([camera.position, f, r, u, [th, camera.width / camera.height]])
    return np.ascontiguousarray(cam), np.ascontiguousarray(camera.basis_jacobians())


def pack(scene: Scene) -> PackedScene:
    meshes = scene.meshes
    nv = [len(m.vertices) for m in meshes]
    nf = [len(m.indices) for m in meshes]
    vo = np.concatenate([[0], np.cumsum(nv)]).astype(np.int64)
    fo = np.concatenate([[0], np.cumsum(nf)]).astype(np.int64)
    V = scene.world_vertices()
    if meshes:
        F = np.concatenate([m.indices + vo[i] for i, m in enumerate(meshes)]).astype(np.int32)
    else:
        F = np.zeros((0, 3), dtype=np.int32)
    V = np.ascontiguousarray(V, dtype=np.float64)
    F = np.ascontiguousarray(F.reshape(-1, 3))
    FN, FA = face_normals(V, F)
    nmat = len(scene.materials)
    # an implicit black material backs meshes without one
    kd = np.array([m.diffuse for m in scene.materials] + [[0.0, 0.0, 0.0]], dtype=np.float64)
    ks = np.array([m.specular for m in scene.materials] + [[0.0, 0.0, 0.0]], dtype=np.float64)
    shin = np.array([m.shininess for m in scene.materials] + [1.0], dtype=np.float64)
    fmesh = np.repeat(np.arange(len(meshes)), nf).astype(np.int32)
    fmat = np.array([meshes[i].material_id if meshes[i].material_id >= 0 else nmat for i in fmesh],
                    dtype=np.int32)
    Le = np.array([m.emission for m in meshes], dtype=np.float64).reshape(-1, 3)
    memit = np.array([m.is_emitter for m in meshes], dtype=np.int32)
    light_face = np.nonzero(memit[fmesh] != 0)[0].astype(np.int32) if len(fmesh) else np.zeros(0, np.int32)
    la = FA[light_face]
    total = float(la.sum())
    cdf = np.cumsum(la) / total if total > 0 else np.zeros(0)
    if len(cdf):
        cdf[-1] = 1.0
    bvh = build_bvh(V, F)

    from .scene import scene_edges

    er = scene_edges(scene)
    E = np.array([[e.v0, e.v1, e.face_a, -1 if e.face_b is None else e.face_b] for e in er],
                 dtype=np.int32).reshape(-1, 4)
    crease = np.zeros(len(E), dtype=np.int32)
    for i, (a, b, fa, fb) in enumerate(E):
        if fb >= 0 and abs(float(FN[fa] @ FN[fb])) < 1.0 - 1e-12:
            crease[i] = 1
    cam, camJ = camera_arrays(scene.camera)
    W, H = scene.camera.resolution
    data = _k.SceneData(
        V, F, np.ascontiguousarray(FN), np.ascontiguousarray(FA), fmat, fmesh,
        np.ascontiguousarray(kd), np.ascontiguousarray(ks), shin,
        np.ascontiguousarray(Le if len(Le) else np.zeros((1, 3))),
        memit if len(memit) else np.zeros(1, np.int32),
        light_face, np.ascontiguousarray(cdf), total,
        bvh.bmin, bvh.bmax, bvh.node, bvh.order,
        np.ascontiguousarray(E), crease, cam, camJ, W, H,
        np.zeros((1, NCK)), np.zeros((1, NCI), dtype=np.int32),
    )
    return PackedScene(scene, data, V, F, E, crease, vo, fo, nmat)


def _packed(scene) -> PackedScene:
    return scene if isinstance(scene, PackedScene) else pack(scene)


def tiles(W: int, H: int, size: int = TILE):
    for y0 in range(0, H, size):
        for x0 in range(0, W, size):
            yield x0, min(x0 + size, W), y0, min(y0 + size, H)


# ---------------------------------------------------------------------------
# public operations

def sample_pixel_point(px: int, py: int, u1: float, u2: float) -> tuple[float, float]:
    """Box filter: a uniform point in pixel (px, py)."""
    return (px + u1, py + u2)


def primary_ray(camera, x: float, y: float) -> Ray:
    f, r, u = camera.basis()
    th = np.tan(np.radians(camera.fov) / 2)
    sx = (2.0 * x / camera.width - 1.0) * th * (camera.width / camera.height)
    sy = (1.0 - 2.0 * y / camera.height) * th
    return Ray(camera.position, f + sx * r + sy * u, 0.0)


def new_path_state(max_bounces: int) -> PathState:
    return PathState([], np.zeros((max_bounces + 1, NCK)), np.zeros((max_bounces + 1, NCI), dtype=np.int32))


def radiance(scene, ray: Ray, rng: int, max_bounces: int, path_state_out: PathState | None = None,
             emit: bool = True) -> np.ndarray:
    """One radiance sample along ``ray``; ``rng`` is the 64-bit stream key."""
    ps = _packed(scene)
    rec = path_state_out is not None
    if rec:
        if path_state_out.ck is None or path_state_out.ck.shape[0] < max_bounces + 1:
            path_state_out.ck = np.zeros((max_bounces + 1, NCK))
            path_state_out.ci = np.zeros((max_bounces + 1, NCI), dtype=np.int32)
        ck, ci = path_state_out.ck, path_state_out.ci
    else:
        ck, ci = np.zeros((1, NCK)), np.zeros((1, NCI), dtype=np.int32)
    L = _k.py_trace(ps.data, ray.origin, ray.direction, ray.t_min, int(rng) & (2**64 - 1), max_bounces,
                    emit, rec, ck, ci)
    if rec:
        path_state_out.vertices = [
            PathVertex(ck[j, 0:3].copy(), ck[j, 3:6].copy(), int(ci[j, 0]), ck[j, 6:9].copy(),
                       int(ci[j, 1]), ck[j, 12:15].copy(), ck[j, 9:12].copy(), bool(ci[j, 2]))
            for j in range(int(ci[0, 3]))
        ]
    return np.array(L)


def pixel_sample_key(seed: int, px: int, py: int, s: int) -> int:
    return _k.py_pixel_key(int(seed) & (2**64 - 1), px, py, s)


def render(scene, config: RenderConfig) -> ImageBuffer:
    """Average of ``spp`` radiance samples per pixel."""
    ps = _packed(scene)
    W, H = ps.scene.camera.resolution
    img = np.zeros((H, W, 3))
    seed = int(config.seed) & (2**64 - 1)
    work = list(tiles(W, H))

    def run(t):
        x0, x1, y0, y1 = t
        _k.render_tile(ps.data, x0, x1, y0, y1, config.spp, config.max_bounces, seed,
                       int(config.stratified), img)

    n = resolve_threads(config.threads)
    if n == 1 or len(work) == 1:
        for t in work:
            run(t)
    else:
        with ThreadPoolExecutor(n) as ex:
            list(ex.map(run, work))
    return ImageBuffer(W, H, img)
