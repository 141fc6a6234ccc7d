import copy

import numpy as np
import pytest

from edgetrace import scenes
from edgetrace.scene import scene_from_dict


def make_scene(name, **kw):
    return scene_from_dict(scenes.get(name, **kw))


@pytest.fixture
def emitter_scene():
    return make_scene("emitter_triangle", res=16)


@pytest.fixture
def lit_triangle():
    """Diffuse triangle lit from the front; translation registered."""
    return make_scene("translated_triangle", res=16, offset=(0.0, 0.0, 0.0))


@pytest.fixture
def minimal_dict():
    return copy.deepcopy({
        "camera": {"position": [0, 0, 3], "look_at": [0, 0, 0], "fov": 40, "resolution": [8, 8]},
        "meshes": [{"vertices": [-1, -1, 0, 1, -1, 0, 0, 1, 0], "indices": [0, 1, 2], "emission": [1, 1, 1]}],
    })


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
