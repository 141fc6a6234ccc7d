"""Full gradient passes and the finite-difference oracle."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .adjoint import WorldGrad, backprop_projected, backprop_world, to_parameters
from .edges import EdgeSampleBudget, sample_primary_edges
from .render import ImageBuffer, RenderConfig, pack, render
from .scene import GradientVector, Scene, apply_parameters, read_parameters

LOSSES = ("L2", "L1")


@dataclass(frozen=True)
class GradConfig:
    render: RenderConfig = field(default_factory=RenderConfig)
    edge_budget: EdgeSampleBudget = field(default_factory=EdgeSampleBudget)
    loss: str = "L2"
    fd_step: float = 1e-3
    primary_edges: bool = True
    secondary_edges: bool = True

    def __post_init__(self):
        if self.fd_step <= 0:
            raise ValueError("fd_step must be positive")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")

    def without_edges(self) -> "GradConfig":
        return replace(self, primary_edges=False, secondary_edges=False)


def _rgb(img) -> np.ndarray:
    return img.rgb if isinstance(img, ImageBuffer) else np.asarray(img, dtype=np.float64)


def loss_and_adjoint(rendered, target, loss: str = "L2", normalize: bool = True) -> tuple[float, np.ndarray]:
    """Scalar loss and its derivative with respect to every pixel channel.

    With ``normalize`` (the default) both the loss and the adjoint are divided
    by the pixel count W*H, so values do not depend on resolution.
    """
    r = _rgb(rendered)
    t = _rgb(target)
    if r.shape != t.shape:
        raise ValueError(f"image shapes differ: {r.shape} vs {t.shape}")
    d = r - t
    if loss == "L2":
        val, adj = float(np.sum(d * d)), 2.0 * d
    elif loss == "L1":
        val, adj = float(np.sum(np.abs(d))), np.sign(d)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    if normalize:
        n = r.shape[0] * r.shape[1]
        val, adj = val / n, adj / n
    return val, adj


@dataclass
class GradientResult:
    image: ImageBuffer
    loss: float
    gradient: GradientVector
    rejected: int = 0


def _world_gradient(ps, adjoint: np.ndarray, cfg: GradConfig) -> tuple[WorldGrad, int]:
    rc = cfg.render
    n_sec = cfg.edge_budget.n_secondary_per_shading_point if cfg.secondary_edges else 0
    wg, rejected = backprop_world(ps, adjoint, rc, n_sec)
    if cfg.primary_edges:
        wg.add(sample_primary_edges(ps, adjoint, cfg.edge_budget.n_primary, rc.seed, rc.max_bounces,
                                    rc.threads))
    return wg, rejected


def render_with_gradients(scene: Scene, target, cfg: GradConfig) -> tuple[ImageBuffer, float, GradientVector]:
    """Render, evaluate the loss and return its gradient (smooth + edge terms)."""
    res = gradient_pass(scene, target, cfg)
    return res.image, res.loss, res.gradient


def gradient_pass(scene: Scene, target, cfg: GradConfig) -> GradientResult:
    ps = pack(scene)
    img = render(ps, cfg.render)
    loss, adj = loss_and_adjoint(img, target, cfg.loss)
    wg, rejected = _world_gradient(ps, adj, cfg)
    return GradientResult(img, loss, to_parameters(ps, wg), rejected)


def gradient_components(scene: Scene, target, cfg: GradConfig) -> dict[str, GradientVector]:
    """Smooth, secondary-edge and primary-edge parts of the gradient, separately."""
    ps = pack(scene)
    img = render(ps, cfg.render)
    _, adj = loss_and_adjoint(img, target, cfg.loss)
    rc = cfg.render
    smooth, _ = backprop_world(ps, adj, rc, 0)
    both, _ = backprop_world(ps, adj, rc, cfg.edge_budget.n_secondary_per_shading_point)
    prim = sample_primary_edges(ps, adj, cfg.edge_budget.n_primary, rc.seed, rc.max_bounces, rc.threads)
    gs = to_parameters(ps, smooth)
    gb = to_parameters(ps, both)
    return {
        "smooth": gs,
        "secondary": GradientVector(gs.registry, gb.values - gs.values),
        "primary": to_parameters(ps, prim),
    }


def linear_gradient(scene: Scene, adjoint: np.ndarray, cfg: GradConfig) -> GradientVector:
    """Gradient of sum(adjoint * image) for a fixed adjoint image."""
    ps = pack(scene)
    wg, _ = _world_gradient(ps, adjoint, cfg)
    return to_parameters(ps, wg)


def gradient_image(scene: Scene, index: int, cfg: GradConfig) -> np.ndarray:
    """Per-pixel derivative (H, W, 3) of the image with respect to parameter ``index``."""
    ps = pack(scene)
    W, H = scene.camera.resolution
    rc = cfg.render
    out = np.zeros((H, W, 3))
    n_sec = cfg.edge_budget.n_secondary_per_shading_point if cfg.secondary_edges else 0
    for c in range(3):
        adj = np.zeros((H, W, 3))
        adj[..., c] = 1.0
        out[..., c] = backprop_projected(ps, adj, rc, index, n_sec)
        if cfg.primary_edges:
            out[..., c] += sample_primary_edges(ps, adj, cfg.edge_budget.n_primary, rc.seed,
                                                rc.max_bounces, rc.threads, project_index=index)
    return out


def fd_gradient(scene: Scene, target, cfg: GradConfig, params=None, render_config: RenderConfig | None = None,
                loss_fn=None, richardson: bool = False) -> GradientVector:
    """Central differences of the loss, rendering +h and -h with the same seed.

    ``h`` must be small enough that the perturbation does not push geometry
    through other geometry.  ``render_config`` overrides ``cfg.render`` for
    the oracle (e.g. more samples); ``params`` restricts which indices are
    evaluated (others are reported as 0).  With ``richardson`` the steps h
    and h/2 are combined as (4 D(h/2) - D(h)) / 3, cancelling the h^2 error
    term; this matters when the loss has pixel-scale curvature.
    """
    rc = render_config or cfg.render
    x0 = read_parameters(scene)
    out = np.zeros_like(x0)
    h = cfg.fd_step
    idx = range(len(x0)) if params is None else params

    def f(x):
        img = render(apply_parameters(scene, x), rc)
        if loss_fn is not None:
            return loss_fn(img.rgb)
        return loss_and_adjoint(img, target, cfg.loss)[0]

    def central(i, step):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += step
        xm[i] -= step
        return (f(xp) - f(xm)) / (2 * step)

    for i in idx:
        if richardson:
            out[i] = (4.0 * central(i, h / 2) - central(i, h)) / 3.0
        else:
            out[i] = central(i, h)
    return GradientVector(scene.registry, out)


def central_difference(fn, x: float, h: float) -> float:
    return (fn(x + h) - fn(x - h)) / (2 * h)


def relative_l1_error(analytic, reference) -> float:
    a = analytic.values if isinstance(analytic, GradientVector) else np.asarray(analytic)
    r = reference.values if isinstance(reference, GradientVector) else np.asarray(reference)
    denom = float(np.sum(np.abs(r)))
    num = float(np.sum(np.abs(a - r)))
    if denom == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return num / denom
