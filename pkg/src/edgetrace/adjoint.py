"""Reverse-mode propagation of the smooth (interior) gradient.

A pixel adjoint is pushed back through each recorded camera path with the
discrete path structure held fixed: hit faces, sampled light faces and
shadow-ray outcomes do not change, while hit positions move with the scene
by re-intersecting each path segment with the plane of the face it hit.
The kernel accumulates world-space derivatives (vertex positions, camera
position/look-at, material colours, mesh emission); :func:`to_parameters`
maps those onto the registered parameters.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .backend import kernels as _k
from .render import NCI, NCK, PackedScene, PathState, RenderConfig, _packed, resolve_threads, tiles
from .scene import GradientVector


@dataclass(frozen=True)
class PixelAdjoint:
    px: int
    py: int
    weight: np.ndarray  # dLoss/dpixel, RGB


@dataclass
class WorldGrad:
    """World-space derivative buffers for one packed scene."""

    dV: np.ndarray
    dcam: np.ndarray
    dkd: np.ndarray
    dks: np.ndarray
    dLe: np.ndarray

    @classmethod
    def zeros(cls, ps: PackedScene) -> "WorldGrad":
        nm = ps.n_materials + 1
        return cls(np.zeros((len(ps.V), 3)), np.zeros(6), np.zeros((nm, 3)), np.zeros((nm, 3)),
                   np.zeros((max(len(ps.scene.meshes), 1), 3)))

    def buffers(self):
        return _k.GradBuffers(self.dV, self.dcam, self.dkd, self.dks, self.dLe)

    def add(self, other: "WorldGrad") -> None:
        self.dV += other.dV
        self.dcam += other.dcam
        self.dkd += other.dkd
        self.dks += other.dks
        self.dLe += other.dLe


def to_parameters(ps: PackedScene, wg: WorldGrad) -> GradientVector:
    """Chain world-space derivatives into the registry's flat vector."""
    reg = ps.scene.registry
    out = np.zeros(reg.total_dim)
    for g in reg.groups:
        sl = slice(g.start, g.start + g.size)
        if g.kind == "camera.position":
            out[sl] = wg.dcam[0:3]
        elif g.kind == "camera.look_at":
            out[sl] = wg.dcam[3:6]
        elif g.kind == "diffuse":
            out[sl] = wg.dkd[g.target]
        elif g.kind == "specular":
            out[sl] = wg.dks[g.target]
        elif g.kind == "emission":
            out[sl] = wg.dLe[g.target]
        else:
            v0, v1 = ps.vert_offset[g.target], ps.vert_offset[g.target + 1]
            if g.kind == "translation":
                out[sl] = wg.dV[v0:v1].sum(axis=0)
            else:
                out[sl] = wg.dV[v0:v1].reshape(-1)
    return GradientVector(reg, out)


def tangent_buffers(ps: PackedScene, index: int):
    """Kernel buffers that project every accumulation onto parameter ``index``."""
    t = WorldGrad.zeros(ps)
    reg = ps.scene.registry
    for g in reg.groups:
        if not g.start <= index < g.start + g.size:
            continue
        k = index - g.start
        if g.kind == "camera.position":
            t.dcam[k] = 1.0
        elif g.kind == "camera.look_at":
            t.dcam[3 + k] = 1.0
        elif g.kind == "diffuse":
            t.dkd[g.target, k] = 1.0
        elif g.kind == "specular":
            t.dks[g.target, k] = 1.0
        elif g.kind == "emission":
            t.dLe[g.target, k] = 1.0
        elif g.kind == "translation":
            t.dV[ps.vert_offset[g.target] : ps.vert_offset[g.target + 1], k] = 1.0
        else:
            t.dV[ps.vert_offset[g.target] + k // 3, k % 3] = 1.0
    z = WorldGrad.zeros(ps)
    return _k.GradBuffers(z.dV, z.dcam, z.dkd, z.dks, z.dLe, t.dV, t.dcam, t.dkd, t.dks, t.dLe)


def backprop_sample(scene, path_state: PathState, pixel_adjoint: PixelAdjoint, grad_out: GradientVector,
                    *, origin, x: float | None = None, y: float | None = None, key: int = 0,
                    max_bounces: int = 1, spp: int = 1, secondary_samples: int = 0) -> None:
    """Add one recorded sample's smooth derivative to ``grad_out``.

    ``origin`` is the ray origin the path was traced from; when (x, y) are
    given the path is treated as a camera path and the ray direction is
    differentiated through the camera frame.
    """
    ps = _packed(scene)
    ck, ci = path_state.ck, path_state.ci
    nv = int(ci[0, 3])
    nf = len(ps.F)
    for j in range(nv):
        if not (0 <= ci[j, 0] < nf) or not (-1 <= ci[j, 1] < nf):
            raise ValueError("path state does not belong to this scene (face id out of range)")
    w = np.asarray(pixel_adjoint.weight, dtype=np.float64) / spp
    if not np.any(w):
        return
    wg = WorldGrad.zeros(ps)
    gb = wg.buffers()
    camera = x is not None
    _k.py_backprop_path(ps.data, gb, ck, ci, w, camera, x if camera else 0.0, y if camera else 0.0,
                        int(key) & (2**64 - 1), max_bounces, secondary_samples, True,
                        np.asarray(origin, dtype=np.float64))
    grad_out.accumulate(to_parameters(ps, wg))


def _backprop_tiles(ps: PackedScene, adjoint: np.ndarray, config: RenderConfig, secondary_samples: int,
                    project_index: int | None = None):
    W, H = ps.scene.camera.resolution
    adj = np.ascontiguousarray(adjoint, dtype=np.float64)
    seed = int(config.seed) & (2**64 - 1)
    work = list(tiles(W, H))
    out = np.zeros((H, W))
    rows = config.max_bounces + 1

    def run(t):
        x0, x1, y0, y1 = t
        ck = np.zeros((rows, NCK))
        ci = np.zeros((rows, NCI), dtype=np.int32)
        if project_index is None:
            wg = WorldGrad.zeros(ps)
            gb = wg.buffers()
        else:
            wg = None
            gb = tangent_buffers(ps, project_index)
        _k.backprop_tile(ps.data, gb, x0, x1, y0, y1, config.spp, config.max_bounces, seed,
                         int(config.stratified), adj, secondary_samples, ck, ci, out)
        return wg, gb.rejected_samples

    n = resolve_threads(config.threads)
    if n == 1 or len(work) == 1:
        parts = [run(t) for t in work]
    else:
        with ThreadPoolExecutor(n) as ex:
            parts = list(ex.map(run, work))
    return parts, out


def backprop_world(ps: PackedScene, adjoint: np.ndarray, config: RenderConfig,
                   secondary_samples: int = 0) -> tuple[WorldGrad, int]:
    parts, _ = _backprop_tiles(ps, adjoint, config, secondary_samples)
    total = WorldGrad.zeros(ps)
    rejected = 0
    for wg, r in parts:  # tile index order
        total.add(wg)
        rejected += r
    return total, rejected


def backprop_image(scene, images_adjoint: np.ndarray, config: RenderConfig,
                   secondary_samples: int = 0) -> GradientVector:
    """Smooth gradient of sum(adjoint * image) replaying the streams of render().

    With ``secondary_samples > 0`` the replay additionally edge-samples the
    visibility discontinuities seen from every shading point.
    """
    ps = _packed(scene)
    W, H = ps.scene.camera.resolution
    if images_adjoint.shape != (H, W, 3):
        raise ValueError(f"adjoint image must have shape {(H, W, 3)}")
    wg, _ = backprop_world(ps, images_adjoint, config, secondary_samples)
    return to_parameters(ps, wg)


def backprop_projected(scene, images_adjoint: np.ndarray, config: RenderConfig, index: int,
                       secondary_samples: int = 0) -> np.ndarray:
    """Per-pixel smooth derivative (H, W) with respect to parameter ``index``."""
    ps = _packed(scene)
    _, out = _backprop_tiles(ps, images_adjoint, config, secondary_samples, project_index=index)
    return out
