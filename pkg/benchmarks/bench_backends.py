"""Compare the compiled and interpreted kernel backends.

Each backend runs in its own interpreter (the backend is chosen at import
time via EDGETRACE_BACKEND).  Reports wall time for a forward render and a
full gradient pass, and checks the outputs are bitwise identical.

    python benchmarks/bench_backends.py --res 16 --spp 4
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import hashlib, json, sys, time
import numpy as np
from edgetrace import backend, scenes
from edgetrace.edges import EdgeSampleBudget
from edgetrace.engine import GradConfig, render_with_gradients
from edgetrace.render import RenderConfig, render
from edgetrace.scene import scene_from_dict
a = json.loads(sys.argv[1])
s = scene_from_dict(scenes.get(a["scene"], res=a["res"]))
rc = RenderConfig(spp=a["spp"], max_bounces=a["bounces"], seed=1, threads=1)
t = time.perf_counter(); img = render(s, rc).rgb; t_render = time.perf_counter() - t
cfg = GradConfig(render=rc, edge_budget=EdgeSampleBudget(a["edges"], 1))
t = time.perf_counter(); _, _, g = render_with_gradients(s, np.zeros_like(img), cfg); t_grad = time.perf_counter() - t
digest = hashlib.sha256(img.tobytes() + g.values.tobytes()).hexdigest()[:16]
print(json.dumps({"backend": backend.BACKEND, "render_s": t_render, "grad_s": t_grad, "digest": digest}))
"""


def run(name: str, args: dict) -> dict:
    env = dict(os.environ, EDGETRACE_BACKEND=name)
    out = subprocess.run([sys.executable, "-c", WORKER, json.dumps(args)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(out.stdout)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scene", default="shaded_triangle")
    ap.add_argument("--res", type=int, default=16)
    ap.add_argument("--spp", type=int, default=4)
    ap.add_argument("--bounces", type=int, default=1)
    ap.add_argument("--edges", type=int, default=5000)
    ns = ap.parse_args(argv)
    args = vars(ns)
    rows = []
    for name in ("compiled", "python"):
        try:
            rows.append(run(name, args))
        except subprocess.CalledProcessError as e:
            print(f"{name}: unavailable ({e.stderr.strip().splitlines()[-1]})")
    print(f"{'backend':<10}{'render [s]':>12}{'gradient [s]':>14}  digest")
    for r in rows:
        print(f"{r['backend']:<10}{r['render_s']:>12.3f}{r['grad_s']:>14.3f}  {r['digest']}")
    if len(rows) == 2:
        c, p = rows
        print(f"speedup: render {p['render_s'] / c['render_s']:.1f}x, gradient {p['grad_s'] / c['grad_s']:.1f}x; "
              f"outputs {'identical' if c['digest'] == p['digest'] else 'DIFFER'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
