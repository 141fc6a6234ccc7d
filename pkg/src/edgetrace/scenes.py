"""Small built-in scenes used by the test suites, benchmarks and examples.

Each function returns a plain scene dictionary (the JSON schema of
:mod:`edgetrace.scene`) so callers can tweak it before loading.
"""
from __future__ import annotations

import copy

_QUAD = [0, 1, 2, 0, 2, 3]


def _cam(position, look_at, fov, res, up=(0, 1, 0)):
    return {"position": list(position), "look_at": list(look_at), "up": list(up), "fov": fov,
            "resolution": [res, res]}


def emitter_triangle(res: int = 16) -> dict:
    """A single emissive triangle on black."""
    return {
        "camera": _cam([0, 0, 3], [0, 0, 0], 40, res),
        "meshes": [{"vertices": [-0.6, -0.5, 0, 0.7, -0.4, 0, 0.1, 0.6, 0.2], "indices": [0, 1, 2],
                    "emission": [1.0, 0.8, 0.5]}],
    }


def shaded_triangle(res: int = 64) -> dict:
    """A diffuse/glossy triangle on black, lit by an emitter outside the view."""
    return {
        "camera": _cam([0, 0, 3], [0, 0, 0], 40, res),
        "materials": [{"diffuse": [0.7, 0.6, 0.5], "specular": [0.2, 0.2, 0.2], "shininess": 8}],
        "meshes": [
            # vertices project to pixel centres at 64x64, away from pixel edges at 16x16, so that
            # finite-difference steps of a fraction of a pixel never move a vertex across a pixel edge
            {"vertices": [-0.597139, -0.494772, 0, 0.733628, -0.358283, 0, 0.079618, 0.589177, 0.2],
             "indices": [0, 1, 2], "material": 0},
            {"vertices": [-1, 2, 3, 1, 2, 3, 0, 2.5, 1], "indices": [0, 1, 2], "emission": [8, 8, 8]},
        ],
        "differentiable": ["camera.position", "mesh[0].vertices", "material[0].diffuse"],
    }


def occluding_triangles(res: int = 64) -> dict:
    """A blocker triangle partially hiding a larger triangle behind it."""
    return {
        "camera": _cam([0, 0, 3], [0, 0, 0], 40, res),
        "materials": [{"diffuse": [0.8, 0.5, 0.3]}, {"diffuse": [0.3, 0.5, 0.8]}],
        "meshes": [
            {"vertices": [-0.9, -0.7, -0.3, 0.8, -0.8, -0.3, 0.0, 0.8, -0.3], "indices": [0, 1, 2], "material": 0},
            # blocker vertices project to pixel centres at 64x64 (see shaded_triangle)
            {"vertices": [-0.514585, -0.199615, 0.3, 0.437425, -0.322455, 0.3, 0.068905, 0.445295, 0.3],
             "indices": [0, 1, 2], "material": 1,
             "translation": [0.1, 0.0, 0.0]},
            {"vertices": [-1, 1.5, 3, 1, 1.5, 3, 0, 2.2, 2], "indices": [0, 1, 2], "emission": [6, 6, 6]},
        ],
        "differentiable": ["mesh[1].translation"],
    }


def shadow_floor(res: int = 64, shadow_only: bool = True) -> dict:
    """Lambertian floor, square area light and a square blocker between them.

    With ``shadow_only`` the camera looks straight down from below the
    blocker, so only the blocker's shadow is visible.
    """
    cam = (_cam([0, 0.5, 0], [0, 0, 0], 90, res, up=(0, 0, -1)) if shadow_only
           else _cam([0, 2, 2], [0, 0, 0], 40, res))
    return {
        "camera": cam,
        "materials": [{"diffuse": [0.8, 0.8, 0.8]}],
        "meshes": [
            {"vertices": [-3, 0, -3, 3, 0, -3, 3, 0, 3, -3, 0, 3], "indices": [0, 2, 1, 0, 3, 2], "material": 0},
            {"vertices": [-0.4, 0.8, -0.4, 0.4, 0.8, -0.4, 0.4, 0.8, 0.4, -0.4, 0.8, 0.4], "indices": _QUAD,
             "material": 0},
            {"vertices": [-0.6, 3, -0.6, 0.6, 3, -0.6, 0.6, 3, 0.6, -0.6, 3, 0.6], "indices": _QUAD,
             "emission": [6, 6, 6]},
        ],
        "differentiable": ["mesh[1].translation"],
    }


def lit_plane(res: int = 48) -> dict:
    """A square plane in view, lit by a small nearby light (strong falloff)."""
    return {
        "camera": _cam([0, 0, 3], [0, 0, 0], 40, res),
        "materials": [{"diffuse": [0.8, 0.8, 0.8]}],
        "meshes": [
            {"vertices": [-0.6, -0.6, 0, 0.6, -0.6, 0, 0.6, 0.6, 0, -0.6, 0.6, 0], "indices": _QUAD, "material": 0},
            {"vertices": [-0.05, -0.05, 0.5, 0.05, -0.05, 0.5, 0.05, 0.05, 0.5, -0.05, 0.05, 0.5],
             "indices": [0, 2, 1, 0, 3, 2], "emission": [40, 40, 40]},
        ],
        "differentiable": ["mesh[0].translation"],
    }


def translated_triangle(res: int = 32, offset=(0.2, 0.1, 0.0)) -> dict:
    """A lit diffuse triangle on black whose translation is the unknown."""
    d = {
        "camera": _cam([0, 0, 3], [0, 0, 0], 40, res),
        "materials": [{"diffuse": [0.8, 0.8, 0.8]}],
        "meshes": [
            {"vertices": [-0.5, -0.4, 0, 0.5, -0.4, 0, 0.0, 0.5, 0], "indices": [0, 1, 2], "material": 0,
             "translation": list(offset)},
            {"vertices": [-1, -1, 3, 1, -1, 3, 1, 1, 3, -1, 1, 3], "indices": _QUAD, "emission": [3, 3, 3]},
        ],
        "differentiable": ["mesh[0].translation"],
    }
    return d


def cornell_box(res: int = 32) -> dict:
    """A closed-ish box with a ceiling light and one block; exercises indirect light."""
    wall = lambda v, m: {"vertices": v, "indices": _QUAD, "material": m}  # noqa: E731
    return {
        "camera": _cam([0, 1, 3.4], [0, 1, 0], 45, res),
        "materials": [{"diffuse": [0.7, 0.7, 0.7]}, {"diffuse": [0.7, 0.2, 0.2]}, {"diffuse": [0.2, 0.7, 0.2]},
                      {"diffuse": [0.5, 0.5, 0.5], "specular": [0.3, 0.3, 0.3], "shininess": 20}],
        "meshes": [
            wall([-1, 0, -1, 1, 0, -1, 1, 0, 1, -1, 0, 1], 0),
            wall([-1, 2, -1, -1, 2, 1, 1, 2, 1, 1, 2, -1], 0),
            wall([-1, 0, -1, -1, 2, -1, 1, 2, -1, 1, 0, -1], 0),
            wall([-1, 0, -1, -1, 0, 1, -1, 2, 1, -1, 2, -1], 1),
            wall([1, 0, -1, 1, 2, -1, 1, 2, 1, 1, 0, 1], 2),
            {"vertices": [-0.25, 1.99, -0.25, 0.25, 1.99, -0.25, 0.25, 1.99, 0.25, -0.25, 1.99, 0.25],
             "indices": _QUAD, "emission": [12, 12, 12]},
            {"vertices": [-0.3, 0, -0.3, 0.3, 0, -0.3, 0.3, 0.7, -0.3, -0.3, 0.7, -0.3,
                          -0.3, 0, 0.3, 0.3, 0, 0.3, 0.3, 0.7, 0.3, -0.3, 0.7, 0.3],
             "indices": [0, 2, 1, 0, 3, 2, 4, 5, 6, 4, 6, 7, 0, 4, 7, 0, 7, 3,
                         1, 2, 6, 1, 6, 5, 3, 7, 6, 3, 6, 2, 0, 1, 5, 0, 5, 4],
             "material": 3, "translation": [0.2, 0, -0.1]},
        ],
        "differentiable": ["mesh[6].translation"],
    }


CATALOG = {
    "emitter_triangle": emitter_triangle,
    "shaded_triangle": shaded_triangle,
    "occluding_triangles": occluding_triangles,
    "shadow_floor": shadow_floor,
    "lit_plane": lit_plane,
    "translated_triangle": translated_triangle,
    "cornell_box": cornell_box,
}


def get(name: str, **kw) -> dict:
    return copy.deepcopy(CATALOG[name](**kw))
