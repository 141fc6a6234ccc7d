"""Command-line front end: ``edgetrace {render, grad-image, fd-check, optimize}``.

Exit codes: 0 success (or passing check), 1 failed check, 2 usage/load error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .edges import EdgeSampleBudget
from .engine import GradConfig, fd_gradient, gradient_image, relative_l1_error, render_with_gradients
from .imageio import ImageFormatError, read_pfm, save_image, signed_preview, write_pfm, write_png
from .optimize import OptimizeConfig, optimize
from .render import RenderConfig, render
from .scene import SceneError, dump_scene, load_scene_file

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _threads(args) -> int | None:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("EDGETRACE_THREADS")
    return int(env) if env else None


def _common(p: argparse.ArgumentParser, spp: int, edges: bool = False) -> None:
    p.add_argument("--spp", type=int, default=spp, help="samples per pixel (default %(default)s)")
    p.add_argument("--bounces", type=int, default=1, help="maximum indirect bounces (default %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default %(default)s)")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: EDGETRACE_THREADS or CPU count)")
    if edges:
        p.add_argument("--edge-samples", type=int, default=100_000, help="screen-space edge samples (default %(default)s)")
        p.add_argument("--secondary-samples", type=int, default=1,
                       help="edge samples per shading point (default %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="edgetrace", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"edgetrace {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render a scene to PFM")
    p.add_argument("scene")
    p.add_argument("out", help="output .pfm (or .png)")
    p.add_argument("--png", help="also write a gamma-2.2 preview here")
    _common(p, 16)

    p = sub.add_parser("grad-image", help="per-pixel derivative image for one parameter")
    p.add_argument("scene")
    p.add_argument("param", help="registered scalar, e.g. mesh[0].translation.x")
    p.add_argument("out", help="output .pfm")
    p.add_argument("--png", help="also write a red(+)/blue(-) preview here")
    _common(p, 16, edges=True)

    p = sub.add_parser("fd-check", help="compare gradients against central finite differences")
    p.add_argument("scene")
    p.add_argument("--target", help="target PFM (default: black image)")
    p.add_argument("--loss", choices=["L2", "L1"], default="L2")
    p.add_argument("--h", type=float, default=1e-3, help="finite-difference step (default %(default)s)")
    p.add_argument("--fd-spp", type=int, default=None, help="samples per pixel for the FD renders (default: --spp)")
    p.add_argument("--threshold", type=float, default=0.01, help="max aggregate relative L1 error (default %(default)s)")
    p.add_argument("--no-edges", action="store_true", help="disable edge sampling (smooth term only)")
    p.add_argument("--richardson", action="store_true",
                   help="extrapolate the FD estimate from steps h and h/2 (cancels the h^2 error term)")
    p.add_argument("--stratified", action="store_true", help="use stratified pixel samples for the gradient render")
    p.add_argument("--report", help="write the JSON report here (default: stdout)")
    _common(p, 64, edges=True)

    p = sub.add_parser("optimize", help="fit registered parameters to a target image")
    p.add_argument("scene")
    p.add_argument("target", help="target PFM")
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--method", choices=["adam", "sgd"], default="adam")
    p.add_argument("--bias-correction", action="store_true", help="enable Adam bias correction")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--preview-every", type=int, default=10, help="write a preview every N iterations (0: never)")
    p.add_argument("--loss", choices=["L2", "L1"], default="L2")
    _common(p, 4, edges=True)
    p.set_defaults(edge_samples=10_000)
    return ap


def _check_counts(args) -> None:
    if args.spp < 1:
        raise UsageError("--spp must be >= 1")
    if args.bounces < 0:
        raise UsageError("--bounces must be >= 0")
    if getattr(args, "edge_samples", 0) < 0 or getattr(args, "secondary_samples", 0) < 0:
        raise UsageError("edge sample counts must be >= 0")


def _rc(args, spp=None) -> RenderConfig:
    return RenderConfig(spp=spp or args.spp, max_bounces=args.bounces, seed=args.seed, threads=_threads(args))


def _target(args, scene) -> np.ndarray:
    W, H = scene.camera.resolution
    if not getattr(args, "target", None):
        return np.zeros((H, W, 3))
    t = read_pfm(args.target)
    if t.shape != (H, W, 3):
        raise UsageError(f"target is {t.shape[1]}x{t.shape[0]}, camera renders {W}x{H}")
    return t


def cmd_render(args) -> int:
    scene = load_scene_file(args.scene)
    img = render(scene, _rc(args))
    save_image(args.out, img.rgb)
    if args.png:
        save_image(args.png, img.rgb)
    return EXIT_OK


def cmd_grad_image(args) -> int:
    scene = load_scene_file(args.scene)
    try:
        idx = scene.registry.index(args.param)
    except KeyError:
        names = ", ".join(scene.registry.scalar_names()[:12]) or "none registered"
        raise UsageError(f"unknown parameter {args.param!r} (available: {names})") from None
    cfg = GradConfig(render=_rc(args), edge_budget=EdgeSampleBudget(args.edge_samples, args.secondary_samples))
    g = gradient_image(scene, idx, cfg)
    write_pfm(args.out, g)
    if args.png:
        write_png(args.png, signed_preview(g))
    return EXIT_OK


def cmd_fd_check(args) -> int:
    scene = load_scene_file(args.scene)
    if scene.registry.total_dim == 0:
        raise UsageError("scene declares no differentiable parameters")
    if args.h <= 0:
        raise UsageError("--h must be positive")
    target = _target(args, scene)
    rc = RenderConfig(spp=args.spp, max_bounces=args.bounces, seed=args.seed, threads=_threads(args),
                      stratified=args.stratified)
    cfg = GradConfig(render=rc, edge_budget=EdgeSampleBudget(args.edge_samples, args.secondary_samples),
                     loss=args.loss, fd_step=args.h)
    if args.no_edges:
        cfg = cfg.without_edges()
    _, loss, grad = render_with_gradients(scene, target, cfg)
    fd_rc = RenderConfig(spp=args.fd_spp or args.spp, max_bounces=args.bounces, seed=args.seed,
                         threads=_threads(args), stratified=True)
    fd = fd_gradient(scene, target, cfg, render_config=fd_rc, richardson=args.richardson)
    err = relative_l1_error(grad, fd)
    report = {
        "loss": loss,
        "h": args.h,
        "richardson": args.richardson,
        "edges": not args.no_edges,
        "parameters": {
            n: {"analytic": float(a), "fd": float(f), "abs_err": float(abs(a - f))}
            for n, a, f in zip(scene.registry.scalar_names(), grad.values, fd.values)
        },
        "aggregate_rel_l1": err,
        "threshold": args.threshold,
        "pass": bool(err <= args.threshold),
    }
    text = json.dumps(report, indent=2)
    if args.report:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    print(f"fd-check: aggregate relative L1 error {err:.4g} ({'PASS' if report['pass'] else 'FAIL'}, "
          f"threshold {args.threshold})", file=sys.stderr)
    return EXIT_OK if report["pass"] else EXIT_FAIL


def cmd_optimize(args) -> int:
    scene = load_scene_file(args.scene)
    if args.iters < 0:
        raise UsageError("--iters must be >= 0")
    if args.iters > 0 and scene.registry.total_dim == 0:
        raise UsageError("scene declares no differentiable parameters")
    target = _target(args, scene)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = OptimizeConfig(iterations=args.iters, learning_rate=args.lr, spp=args.spp, max_bounces=args.bounces,
                         edge_samples=args.edge_samples, secondary_samples=args.secondary_samples, seed=args.seed,
                         loss=args.loss, method=args.method, bias_correction=args.bias_correction,
                         threads=_threads(args))

    def preview(it, cur, loss):
        if args.preview_every and (it + 1) % args.preview_every == 0:
            img = render(cur, RenderConfig(spp=max(args.spp, 16), max_bounces=args.bounces, seed=args.seed,
                                           threads=_threads(args)))
            save_image(out / f"preview_{it + 1:05d}.png", img.rgb)

    with open(out / "trajectory.ndjson", "w", encoding="utf-8", buffering=1) as log:
        traj = optimize(scene, target, cfg, log=log, callback=preview)
    (out / "final_scene.json").write_text(dump_scene(traj.final_scene) + "\n", encoding="utf-8")
    if traj.losses:
        print(f"optimize: loss {traj.losses[0]:.6g} -> {traj.losses[-1]:.6g} over {len(traj.losses)} iterations",
              file=sys.stderr)
    return EXIT_OK


COMMANDS = {"render": cmd_render, "grad-image": cmd_grad_image, "fd-check": cmd_fd_check, "optimize": cmd_optimize}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _check_counts(args)
        return COMMANDS[args.command](args)
    except (SceneError, ImageFormatError, UsageError, OSError, ValueError) as e:
        print(f"edgetrace {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
