import os
import subprocess
import sys

import pytest

from edgetrace import backend

SNIPPET = r"""
import sys, hashlib
import numpy as np
from edgetrace import backend, scenes
from edgetrace.scene import scene_from_dict
from edgetrace.render import RenderConfig, render
from edgetrace.engine import GradConfig, render_with_gradients
from edgetrace.edges import EdgeSampleBudget
s = scene_from_dict(scenes.get("shadow_floor", res=6))
img = render(s, RenderConfig(spp=2, seed=4, max_bounces=2)).rgb
cfg = GradConfig(render=RenderConfig(spp=2, seed=4, max_bounces=1), edge_budget=EdgeSampleBudget(300, 1))
_, loss, g = render_with_gradients(s, np.zeros_like(img), cfg)
h = hashlib.sha256(img.tobytes() + g.values.tobytes()).hexdigest()
print(backend.BACKEND, h)
"""


def run_with(name):
    env = dict(os.environ, EDGETRACE_BACKEND=name)
    out = subprocess.run([sys.executable, "-c", SNIPPET], env=env, capture_output=True, text=True, check=True)
    return out.stdout.split()


def test_python_backend_always_available():
    assert "python" in backend.available()
    assert backend.load("python").COMPILED is False


def test_unknown_backend():
    with pytest.raises(ValueError):
        backend.load("fortran")


@pytest.mark.skipif("compiled" not in backend.available(), reason="compiled extension not built")
def test_backends_bitwise_identical():
    b_c, h_c = run_with("compiled")
    b_p, h_p = run_with("python")
    assert (b_c, b_p) == ("compiled", "python")
    assert h_c == h_p
