"""Differentiable Monte Carlo ray tracing with edge sampling.

Renders triangle-mesh scenes with a seeded path tracer and computes
gradients of images (or losses over images) with respect to scene
parameters.  Interior derivatives are propagated backwards along recorded
paths; visibility discontinuities are handled by sampling points on
silhouette edges, both in screen space and from every shading point.
"""
__version__ = "0.1.0"

from .backend import BACKEND  # noqa: E402
from .edges import EdgeSampleBudget  # noqa: E402
from .engine import GradConfig, fd_gradient, loss_and_adjoint, render_with_gradients  # noqa: E402
from .optimize import AdamState, OptimizeConfig, adam_step, optimize  # noqa: E402
from .render import ImageBuffer, RenderConfig, render  # noqa: E402
from .scene import GradientVector, Scene, apply_parameters, load_scene, read_parameters  # noqa: E402

__all__ = [
    "BACKEND",
    "AdamState",
    "EdgeSampleBudget",
    "GradConfig",
    "GradientVector",
    "ImageBuffer",
    "OptimizeConfig",
    "RenderConfig",
    "Scene",
    "adam_step",
    "apply_parameters",
    "fd_gradient",
    "load_scene",
    "loss_and_adjoint",
    "optimize",
    "read_parameters",
    "render",
    "render_with_gradients",
]
