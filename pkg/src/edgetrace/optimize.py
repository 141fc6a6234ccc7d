"""Gradient-descent inverse rendering (Adam or plain SGD)."""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .edges import EdgeSampleBudget
from .engine import GradConfig, render_with_gradients
from .render import RenderConfig
from .scene import Scene, apply_parameters, read_parameters

SEED_STRIDE = 0x9E3779B1


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    lr: float | np.ndarray = 1e-2
    eps: float = 1e-8
    bias_correction: bool = False

    @classmethod
    def create(cls, dim: int, **kw) -> "AdamState":
        return cls(np.zeros(dim), np.zeros(dim), **kw)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One Adam update; returns (new params, new state) without mutating inputs."""
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != state.m.shape or np.shape(params) != g.shape:
        raise ValueError("parameter, gradient and state dimensions differ")
    if not np.all(np.isfinite(g)):
        bad = np.nonzero(~np.isfinite(g))[0]
        raise FloatingPointError(f"non-finite gradient at indices {bad.tolist()}")
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    k = state.step_count + 1
    mh, vh = m, v
    if state.bias_correction:
        mh = m / (1.0 - state.beta1**k)
        vh = v / (1.0 - state.beta2**k)
    x = np.asarray(params, dtype=np.float64) - state.lr * mh / (np.sqrt(vh) + state.eps)
    return x, replace(state, m=m, v=v, step_count=k)


def sgd_step(params: np.ndarray, grad: np.ndarray, lr) -> np.ndarray:
    g = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient")
    return np.asarray(params, dtype=np.float64) - lr * g


@dataclass(frozen=True)
class OptimizeConfig:
    iterations: int = 100
    learning_rate: float = 1e-2
    group_learning_rates: dict = field(default_factory=dict)  # parameter path -> rate
    spp: int = 4
    max_bounces: int = 1
    edge_samples: int = 10_000
    secondary_samples: int = 1
    seed: int = 0
    loss: str = "L2"
    method: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    bias_correction: bool = False
    threads: int | None = None

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.method not in ("adam", "sgd"):
            raise ValueError("method must be 'adam' or 'sgd'")


@dataclass
class Trajectory:
    params: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    final_scene: Scene | None = None


def params_digest(x: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(x, dtype="<f8").tobytes()).hexdigest()[:16]


def learning_rates(scene: Scene, config: OptimizeConfig) -> np.ndarray:
    lr = np.full(scene.registry.total_dim, float(config.learning_rate))
    for path, rate in config.group_learning_rates.items():
        g = scene.registry.group(path)
        lr[g.start : g.start + g.size] = rate
    return lr


def iteration_seed(seed: int, it: int) -> int:
    return (int(seed) + (it + 1) * SEED_STRIDE) & (2**64 - 1)


def optimize(scene: Scene, target, config: OptimizeConfig, log=None,
             callback: Callable[[int, Scene, float], None] | None = None) -> Trajectory:
    """Fit the registered parameters of ``scene`` to ``target``.

    Every iteration renders with a fresh seed.  When ``log`` (a text stream)
    is given, one JSON line per iteration is written and flushed.  The input
    scene is never modified.
    """
    x = read_parameters(scene)
    lr = learning_rates(scene, config)
    state = AdamState.create(len(x), beta1=config.beta1, beta2=config.beta2, lr=lr,
                             bias_correction=config.bias_correction)
    traj = Trajectory()
    cur = scene
    for it in range(config.iterations):
        t0 = time.perf_counter()
        cfg = GradConfig(
            render=RenderConfig(spp=config.spp, max_bounces=config.max_bounces,
                                seed=iteration_seed(config.seed, it), threads=config.threads),
            edge_budget=EdgeSampleBudget(config.edge_samples, config.secondary_samples),
            loss=config.loss,
        )
        _, loss, grad = render_with_gradients(cur, target, cfg)
        if config.method == "adam":
            x, state = adam_step(state, x, grad.values)
        else:
            x = sgd_step(x, grad.values, lr)
        cur = apply_parameters(scene, x)
        traj.params.append(x.copy())
        traj.losses.append(loss)
        if log is not None:
            rec = {"iter": it, "loss": loss, "params_digest": params_digest(x),
                   "wall_ms": round(1000.0 * (time.perf_counter() - t0), 3)}
            log.write(json.dumps(rec) + "\n")
            log.flush()
        if callback is not None:
            callback(it, cur, loss)
    traj.final_scene = cur
    return traj
