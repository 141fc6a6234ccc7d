"""Scene description, JSON loading, differentiable parameters and edge lists.

A scene file is UTF-8 JSON::

    {
      "camera": {"position": [x, y, z], "look_at": [x, y, z], "up": [x, y, z],
                 "fov": 40, "resolution": [W, H]},
      "materials": [{"diffuse": [r, g, b], "specular": [r, g, b], "shininess": 20}],
      "meshes": [{"vertices": [x0, y0, z0, ...], "indices": [i, j, k, ...],
                  "material": 0, "translation": [0, 0, 0], "emission": [0, 0, 0]}],
      "differentiable": ["mesh[0].translation", "camera.position"]
    }

``fov`` is the vertical field of view in degrees.  Unknown keys are rejected.
World-space vertices are ``vertices + translation``; a mesh is an area light
when any emission component is positive.
"""
from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field, replace

import numpy as np


class SceneError(ValueError):
    """Raised for malformed scene descriptions."""


class NonManifoldError(SceneError):
    pass


@dataclass(frozen=True)
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    fov: float
    resolution: tuple[int, int]

    @property
    def width(self) -> int:
        return self.resolution[0]

    @property
    def height(self) -> int:
        return self.resolution[1]

    def basis(self):
        """Orthonormal (forward, right, up) frame."""
        f = self.look_at - self.position
        f = f / np.linalg.norm(f)
        r = np.cross(f, self.up)
        r = r / np.linalg.norm(r)
        u = np.cross(r, f)
        return f, r, u

    def basis_jacobians(self) -> np.ndarray:
        """d(forward, right, up)/d(position, look_at) as a (3, 3, 6) array."""
        d = self.look_at - self.position
        dl = np.linalg.norm(d)
        f = d / dl
        Pf = (np.eye(3) - np.outer(f, f)) / dl
        Jf = np.hstack([-Pf, Pf])
        c = np.cross(f, self.up)
        cl = np.linalg.norm(c)
        r = c / cl
        Pr = (np.eye(3) - np.outer(r, r)) / cl
        Jr = Pr @ (-_skew(self.up)) @ Jf
        # up = r x f
        Ju = -_skew(f) @ Jr + _skew(r) @ Jf
        return np.stack([Jf, Jr, Ju])

    def project(self, p) -> tuple[float, float]:
        """Continuous screen coordinates of world point p (must be in front)."""
        f, r, u = self.basis()
        c = np.asarray(p, dtype=np.float64) - self.position
        th = np.tan(np.radians(self.fov) / 2)
        aspect = self.width / self.height
        sx = (c @ r) / (c @ f)
        sy = (c @ u) / (c @ f)
        return (0.5 * self.width * (1 + sx / (th * aspect)), 0.5 * self.height * (1 - sy / th))


def _skew(a):
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


@dataclass(frozen=True)
class Material:
    diffuse: np.ndarray
    specular: np.ndarray
    shininess: float


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray  # (N, 3) object space
    indices: np.ndarray  # (M, 3) int
    material_id: int
    translation: np.ndarray
    emission: np.ndarray

    @property
    def world_vertices(self) -> np.ndarray:
        return self.vertices + self.translation

    @property
    def is_emitter(self) -> bool:
        return bool(np.any(self.emission > 0))


@dataclass(frozen=True)
class EdgeRecord:
    v0: int
    v1: int
    face_a: int
    face_b: int | None
    mesh_id: int = 0


_PATH_RE = re.compile(
    r"^(camera\.(position|look_at)|mesh\[(\d+)\]\.(translation|vertices|emission)|material\[(\d+)\]\.(diffuse|specular))$"
)
_XYZ = "xyz"
_RGB = "rgb"


@dataclass(frozen=True)
class ParamGroup:
    path: str
    kind: str  # camera.position, camera.look_at, translation, vertices, emission, diffuse, specular
    target: int  # mesh/material index (-1 for camera)
    start: int
    size: int


@dataclass(frozen=True)
class ParameterRegistry:
    """Ordered map from parameter paths to slices of a flat vector."""

    groups: tuple[ParamGroup, ...] = ()

    @property
    def total_dim(self) -> int:
        return sum(g.size for g in self.groups)

    @property
    def entries(self) -> list[tuple[str, int]]:
        return [(n, i) for i, n in enumerate(self.scalar_names())]

    def scalar_names(self) -> list[str]:
        out = []
        for g in self.groups:
            if g.kind == "vertices":
                out += [f"{g.path}[{i // 3}].{_XYZ[i % 3]}" for i in range(g.size)]
            elif g.kind in ("emission", "diffuse", "specular"):
                out += [f"{g.path}.{c}" for c in _RGB]
            else:
                out += [f"{g.path}.{c}" for c in _XYZ]
        return out

    def group(self, path: str) -> ParamGroup:
        for g in self.groups:
            if g.path == path:
                return g
        raise KeyError(path)

    def index(self, name: str) -> int:
        """Flat index of a scalar, e.g. ``mesh[0].translation.x`` or ``mesh[0].translation[0]``."""
        names = self.scalar_names()
        if name in names:
            return names.index(name)
        m = re.match(r"^(.*)\[(\d+)\]$", name)
        if m:
            try:
                g = self.group(m.group(1))
            except KeyError:
                pass
            else:
                k = int(m.group(2))
                if k < g.size:
                    return g.start + k
        raise KeyError(f"unknown parameter {name!r}")


def build_registry(paths, n_meshes: int, n_materials: int, mesh_sizes) -> ParameterRegistry:
    groups = []
    seen = set()
    start = 0
    for path in paths:
        if not isinstance(path, str):
            raise SceneError(f"differentiable: expected a path string, got {path!r}")
        if path in seen:
            raise SceneError(f"differentiable: duplicate parameter path {path!r}")
        seen.add(path)
        m = _PATH_RE.match(path)
        if not m:
            raise SceneError(f"differentiable: unsupported parameter path {path!r}")
        if m.group(2):
            kind, target, size = "camera." + m.group(2), -1, 3
        elif m.group(3) is not None:
            target = int(m.group(3))
            if target >= n_meshes:
                raise SceneError(f"differentiable: {path!r} refers to a missing mesh")
            kind = m.group(4)
            size = 3 * mesh_sizes[target] if kind == "vertices" else 3
        else:
            target = int(m.group(5))
            if target >= n_materials:
                raise SceneError(f"differentiable: {path!r} refers to a missing material")
            kind, size = m.group(6), 3
        groups.append(ParamGroup(path, kind, target, start, size))
        start += size
    return ParameterRegistry(tuple(groups))


@dataclass
class GradientVector:
    registry: ParameterRegistry
    values: np.ndarray = None

    def __post_init__(self):
        if self.values is None:
            self.values = np.zeros(self.registry.total_dim)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.registry.total_dim,):
            raise ValueError("gradient length does not match registry")

    def accumulate(self, other) -> None:
        v = other.values if isinstance(other, GradientVector) else np.asarray(other)
        self.values = self.values + v
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("non-finite gradient component")

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.registry.scalar_names(), self.values)}

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.registry.index(name)])


@dataclass(frozen=True)
class Scene:
    camera: Camera
    materials: tuple[Material, ...]
    meshes: tuple[Mesh, ...]
    differentiable: tuple[str, ...] = ()
    registry: ParameterRegistry = field(default_factory=ParameterRegistry)

    @property
    def edges(self) -> list[EdgeRecord]:
        return scene_edges(self)

    def world_vertices(self) -> np.ndarray:
        if not self.meshes:
            return np.zeros((0, 3))
        return np.concatenate([m.world_vertices for m in self.meshes])


# ---------------------------------------------------------------------------
# loading / saving

def _vec(obj, key, n, where, default=None, nonneg=False, unit=False):
    if key not in obj:
        if default is None:
            raise SceneError(f"{where}: missing key {key!r}")
        return np.array(default, dtype=np.float64)
    v = obj[key]
    if not isinstance(v, list) or len(v) != n or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise SceneError(f"{where}.{key}: expected a list of {n} numbers")
    a = np.array(v, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise SceneError(f"{where}.{key}: values must be finite")
    if nonneg and np.any(a < 0):
        raise SceneError(f"{where}.{key}: values must be non-negative")
    if unit and np.any((a < 0) | (a > 1)):
        raise SceneError(f"{where}.{key}: values must lie in [0, 1]")
    return a


def _num(obj, key, where, default=None):
    if key not in obj:
        if default is None:
            raise SceneError(f"{where}: missing key {key!r}")
        return float(default)
    v = obj[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not np.isfinite(v):
        raise SceneError(f"{where}.{key}: expected a number")
    return float(v)


def _keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise SceneError(f"{where}: expected an object")
    for k in obj:
        if k not in allowed:
            raise SceneError(f"{where}: unknown key {k!r}")


def scene_from_dict(d: dict) -> Scene:
    _keys(d, {"camera", "materials", "meshes", "differentiable"}, "scene")
    if "camera" not in d:
        raise SceneError("scene: missing key 'camera'")
    c = d["camera"]
    _keys(c, {"position", "look_at", "up", "fov", "resolution"}, "camera")
    pos = _vec(c, "position", 3, "camera")
    look = _vec(c, "look_at", 3, "camera")
    up = _vec(c, "up", 3, "camera", default=[0, 1, 0])
    fov = _num(c, "fov", "camera")
    if not 0 < fov < 180:
        raise SceneError("camera.fov: must lie in (0, 180) degrees")
    res = c.get("resolution")
    if (not isinstance(res, list) or len(res) != 2 or not all(isinstance(x, int) and not isinstance(x, bool) and x > 0 for x in res)):
        raise SceneError("camera.resolution: expected [W, H] positive integers")
    view = look - pos
    if np.linalg.norm(view) == 0 or np.linalg.norm(np.cross(view, up)) <= 1e-12 * np.linalg.norm(view) * np.linalg.norm(up):
        raise SceneError("camera.up: must not be parallel to the view direction")
    camera = Camera(pos, look, up, fov, (res[0], res[1]))

    mats = []
    mlist = d.get("materials", [])
    if not isinstance(mlist, list):
        raise SceneError("materials: expected a list")
    for i, m in enumerate(mlist):
        w = f"materials[{i}]"
        _keys(m, {"diffuse", "specular", "shininess"}, w)
        kd = _vec(m, "diffuse", 3, w, unit=True)
        ks = _vec(m, "specular", 3, w, default=[0, 0, 0], unit=True)
        e = _num(m, "shininess", w, default=1.0)
        if e <= 0:
            raise SceneError(f"{w}.shininess: must be positive")
        if np.any(kd + ks > 1 + 1e-9):
            raise SceneError(f"{w}: diffuse + specular must not exceed 1")
        mats.append(Material(kd, ks, e))

    meshes = []
    mlist = d.get("meshes", [])
    if not isinstance(mlist, list):
        raise SceneError("meshes: expected a list")
    for i, m in enumerate(mlist):
        w = f"meshes[{i}]"
        _keys(m, {"vertices", "indices", "material", "translation", "emission"}, w)
        vs = m.get("vertices")
        if not isinstance(vs, list) or len(vs) % 3 or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in vs):
            raise SceneError(f"{w}.vertices: expected a flat list of 3N numbers")
        V = np.array(vs, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(V)):
            raise SceneError(f"{w}.vertices: values must be finite")
        ix = m.get("indices")
        if not isinstance(ix, list) or len(ix) % 3 or not all(isinstance(x, int) and not isinstance(x, bool) for x in ix):
            raise SceneError(f"{w}.indices: expected a flat list of 3M integers")
        F = np.array(ix, dtype=np.int64).reshape(-1, 3)
        if F.size and (F.min() < 0 or F.max() >= len(V)):
            raise SceneError(f"{w}.indices: vertex index out of range")
        mat = m.get("material", -1)
        if not isinstance(mat, int) or isinstance(mat, bool) or mat < -1 or mat >= len(mats):
            raise SceneError(f"{w}.material: index out of range")
        tr = _vec(m, "translation", 3, w, default=[0, 0, 0])
        em = _vec(m, "emission", 3, w, default=[0, 0, 0], nonneg=True)
        if len(F):
            a, b, cc = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
            area = np.linalg.norm(np.cross(b - a, cc - a), axis=1)
            scale = np.maximum(np.abs(V).max(), 1.0) ** 2
            bad = np.nonzero(area <= 1e-14 * scale)[0]
            if len(bad):
                raise SceneError(f"{w}.indices: degenerate (zero-area) face {int(bad[0])}")
        meshes.append(Mesh(V, F, mat, tr, em))

    diff = d.get("differentiable", [])
    if not isinstance(diff, list):
        raise SceneError("differentiable: expected a list of path strings")
    registry = build_registry(diff, len(meshes), len(mats), [len(m.vertices) for m in meshes])
    scene = Scene(camera, tuple(mats), tuple(meshes), tuple(diff), registry)
    for i, m in enumerate(meshes):
        extract_edges(m, mesh_id=i)  # raises on non-manifold input
    return scene


def load_scene(text: str) -> Scene:
    """Parse and validate a scene from JSON text."""
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneError(f"invalid JSON: {e}") from None
    return scene_from_dict(d)


def load_scene_file(path) -> Scene:
    with open(path, encoding="utf-8") as fh:
        return load_scene(fh.read())


def scene_to_dict(scene: Scene) -> dict:
    c = scene.camera
    out = {
        "camera": {
            "position": c.position.tolist(),
            "look_at": c.look_at.tolist(),
            "up": c.up.tolist(),
            "fov": c.fov,
            "resolution": list(c.resolution),
        },
        "materials": [
            {"diffuse": m.diffuse.tolist(), "specular": m.specular.tolist(), "shininess": m.shininess}
            for m in scene.materials
        ],
        "meshes": [],
    }
    for m in scene.meshes:
        md = {"vertices": m.vertices.reshape(-1).tolist(), "indices": m.indices.reshape(-1).tolist()}
        if m.material_id >= 0:
            md["material"] = m.material_id
        md["translation"] = m.translation.tolist()
        md["emission"] = m.emission.tolist()
        out["meshes"].append(md)
    if scene.differentiable:
        out["differentiable"] = list(scene.differentiable)
    return out


def dump_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), indent=2)


# ---------------------------------------------------------------------------
# edges

def extract_edges(mesh: Mesh, mesh_id: int = 0, vertex_offset: int = 0, face_offset: int = 0) -> list[EdgeRecord]:
    """Unique undirected edges with their one or two adjacent faces."""
    adj: dict[tuple[int, int], list[int]] = {}
    for f, tri in enumerate(np.asarray(mesh.indices)):
        for j in range(3):
            a, b = int(tri[j]), int(tri[(j + 1) % 3])
            key = (a, b) if a < b else (b, a)
            adj.setdefault(key, []).append(f)
    out = []
    for (a, b), fs in adj.items():
        if len(fs) > 2:
            raise NonManifoldError(f"mesh {mesh_id}: edge ({a}, {b}) is shared by {len(fs)} faces")
        out.append(
            EdgeRecord(
                a + vertex_offset,
                b + vertex_offset,
                fs[0] + face_offset,
                fs[1] + face_offset if len(fs) == 2 else None,
                mesh_id,
            )
        )
    return out


def scene_edges(scene: Scene) -> list[EdgeRecord]:
    """Edges of every mesh with scene-global vertex and face indices."""
    out = []
    vo = fo = 0
    for i, m in enumerate(scene.meshes):
        out += extract_edges(m, i, vo, fo)
        vo += len(m.vertices)
        fo += len(m.indices)
    return out


# ---------------------------------------------------------------------------
# parameters

def read_parameters(scene: Scene) -> np.ndarray:
    out = np.zeros(scene.registry.total_dim)
    for g in scene.registry.groups:
        out[g.start : g.start + g.size] = _get(scene, g).reshape(-1)
    return out


def _get(scene: Scene, g: ParamGroup) -> np.ndarray:
    if g.kind == "camera.position":
        return scene.camera.position
    if g.kind == "camera.look_at":
        return scene.camera.look_at
    if g.kind in ("diffuse", "specular"):
        return getattr(scene.materials[g.target], g.kind)
    return getattr(scene.meshes[g.target], g.kind)


def apply_parameters(scene: Scene, values) -> Scene:
    """A new scene with every registered scalar overwritten from ``values``.

    Material and emission values are not range-checked here so that an
    optimizer may pass through out-of-range iterates.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (scene.registry.total_dim,):
        raise ValueError(f"expected {scene.registry.total_dim} parameter values, got {values.shape}")
    camera = scene.camera
    mats = list(scene.materials)
    meshes = list(scene.meshes)
    for g in scene.registry.groups:
        v = values[g.start : g.start + g.size].copy()
        if g.kind == "camera.position":
            camera = replace(camera, position=v)
        elif g.kind == "camera.look_at":
            camera = replace(camera, look_at=v)
        elif g.kind in ("diffuse", "specular"):
            mats[g.target] = replace(mats[g.target], **{g.kind: v})
        elif g.kind == "vertices":
            meshes[g.target] = replace(meshes[g.target], vertices=v.reshape(-1, 3))
        else:
            meshes[g.target] = replace(meshes[g.target], **{g.kind: v})
    return replace(scene, camera=camera, materials=tuple(mats), meshes=tuple(meshes))


def with_differentiable(scene: Scene, paths) -> Scene:
    """Same scene with a different set of registered parameters."""
    d = scene_to_dict(scene)
    d["differentiable"] = list(paths)
    return scene_from_dict(copy.deepcopy(d))
