import json

import numpy as np
import pytest

from edgetrace.render import RenderConfig, render
from edgetrace.scene import (
    GradientVector,
    NonManifoldError,
    SceneError,
    apply_parameters,
    dump_scene,
    extract_edges,
    load_scene,
    read_parameters,
    scene_edges,
    scene_from_dict,
)

from conftest import make_scene

TETRA = {"vertices": [0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1], "indices": [0, 2, 1, 0, 1, 3, 0, 3, 2, 1, 2, 3]}


def test_minimal_scene(minimal_dict):
    s = load_scene(json.dumps(minimal_dict))
    assert len(s.edges) == 3
    assert s.registry.total_dim == 0
    assert s.camera.resolution == (8, 8)
    assert s.meshes[0].is_emitter


def test_translation_registry(minimal_dict):
    minimal_dict["differentiable"] = ["mesh[0].translation"]
    s = scene_from_dict(minimal_dict)
    assert s.registry.total_dim == 3
    assert s.registry.scalar_names() == [f"mesh[0].translation.{c}" for c in "xyz"]
    assert s.registry.index("mesh[0].translation[1]") == 1


def test_registry_indices_dense(minimal_dict):
    minimal_dict["materials"] = [{"diffuse": [0.5, 0.5, 0.5]}]
    minimal_dict["differentiable"] = ["camera.position", "mesh[0].vertices", "material[0].diffuse",
                                      "mesh[0].emission", "camera.look_at"]
    s = scene_from_dict(minimal_dict)
    assert s.registry.total_dim == 3 + 9 + 3 + 3 + 3
    assert [i for _, i in s.registry.entries] == list(range(s.registry.total_dim))
    assert len(set(s.registry.scalar_names())) == s.registry.total_dim
    assert s.registry.index("mesh[0].vertices[2].y") == 3 + 7


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda d: d.update(differentiable=["mesh[0].translation", "mesh[0].translation"]), "duplicate"),
        (lambda d: d.update(differentiable=["mesh[3].translation"]), "missing mesh"),
        (lambda d: d.update(differentiable=["mesh[0].colour"]), "unsupported"),
        (lambda d: d.update(lights=[]), "'lights'"),
        (lambda d: d["camera"].update(fov=180), "fov"),
        (lambda d: d["camera"].update(up=[0, 0, -1]), "parallel"),
        (lambda d: d["camera"].update(resolution=[8]), "resolution"),
        (lambda d: d["camera"].pop("position"), "position"),
        (lambda d: d["meshes"][0].update(indices=[0, 1, 5]), "out of range"),
        (lambda d: d["meshes"][0].update(vertices=[0, 0, 0, 1, 0, 0, 2, 0, 0]), "degenerate"),
        (lambda d: d["meshes"][0].update(material=0), "material"),
        (lambda d: d["meshes"][0].update(emission=[-1, 0, 0]), "non-negative"),
        (lambda d: d["meshes"][0].update(shine=3), "'shine'"),
        (lambda d: d.update(materials=[{"diffuse": [0.8, 0.8, 0.8], "specular": [0.5, 0, 0]}]), "exceed"),
        (lambda d: d.update(materials=[{"diffuse": [1.5, 0, 0]}]), "[0, 1]"),
        (lambda d: d.update(materials=[{"diffuse": [0.5, 0, 0], "shininess": 0}]), "shininess"),
    ],
)
def test_load_errors(minimal_dict, mutate, fragment):
    mutate(minimal_dict)
    with pytest.raises(SceneError, match=None) as exc:
        scene_from_dict(minimal_dict)
    assert fragment in str(exc.value)


def test_invalid_json():
    with pytest.raises(SceneError, match="invalid JSON"):
        load_scene("{not json")


def test_single_triangle_edges(minimal_dict):
    s = scene_from_dict(minimal_dict)
    edges = extract_edges(s.meshes[0])
    assert len(edges) == 3
    assert all(e.face_b is None for e in edges)
    assert all(e.v0 < e.v1 for e in edges)


def test_quad_edges(minimal_dict):
    minimal_dict["meshes"][0] = {"vertices": [0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0], "indices": [0, 1, 2, 0, 2, 3]}
    edges = scene_from_dict(minimal_dict).edges
    assert len(edges) == 5
    interior = [e for e in edges if e.face_b is not None]
    assert len(interior) == 1
    assert (interior[0].v0, interior[0].v1) == (0, 2)


def test_tetrahedron_edges(minimal_dict):
    minimal_dict["meshes"][0] = TETRA
    s = scene_from_dict(minimal_dict)
    edges = s.edges
    V, F = 4, 4
    assert len(edges) == V + F - 2  # Euler: V - E + F = 2
    assert all(e.face_b is not None for e in edges)
    faces = s.meshes[0].indices
    for e in edges:
        for f in (e.face_a, e.face_b):
            assert {e.v0, e.v1} <= set(faces[f].tolist())


def test_non_manifold_rejected(minimal_dict):
    minimal_dict["meshes"][0] = {"vertices": [0, 0, 0, 1, 0, 0, 0, 1, 0, 0, -1, 0, 0, 0, 1],
                                 "indices": [0, 1, 2, 0, 1, 3, 0, 1, 4]}
    with pytest.raises(NonManifoldError):
        scene_from_dict(minimal_dict)


def test_edge_count_additive():
    s = make_scene("cornell_box")
    per_mesh = sum(len(extract_edges(m)) for m in s.meshes)
    assert per_mesh == len(scene_edges(s))
    # global indices stay within the concatenated arrays
    nv = sum(len(m.vertices) for m in s.meshes)
    assert max(max(e.v0, e.v1) for e in s.edges) < nv


def test_apply_read_roundtrip(rng):
    s = make_scene("shaded_triangle", res=8)
    x = rng.normal(size=s.registry.total_dim)
    s2 = apply_parameters(s, x)
    np.testing.assert_array_equal(read_parameters(s2), x)
    np.testing.assert_array_equal(read_parameters(apply_parameters(s, read_parameters(s))), read_parameters(s))


def test_apply_does_not_mutate():
    s = make_scene("translated_triangle", res=8)
    before = read_parameters(s).copy()
    apply_parameters(s, before + 1)
    np.testing.assert_array_equal(read_parameters(s), before)


def test_apply_wrong_length():
    s = make_scene("translated_triangle", res=8)
    with pytest.raises(ValueError):
        apply_parameters(s, np.zeros(2))


def test_translation_shifts_world_vertices():
    s = make_scene("translated_triangle", res=8, offset=(0, 0, 0))
    h = 1e-3
    s2 = apply_parameters(s, np.array([h, 0.0, 0.0]))
    d = s2.meshes[0].world_vertices - s.meshes[0].world_vertices
    np.testing.assert_allclose(d, np.tile([h, 0, 0], (3, 1)), atol=1e-15)


def test_apply_current_values_renders_identically():
    s = make_scene("translated_triangle", res=8)
    cfg = RenderConfig(spp=2, seed=3)
    a = render(s, cfg).rgb
    b = render(apply_parameters(s, read_parameters(s)), cfg).rgb
    np.testing.assert_array_equal(a, b)


def test_dump_load_roundtrip():
    s = make_scene("cornell_box")
    s2 = load_scene(dump_scene(s))
    np.testing.assert_array_equal(read_parameters(s), read_parameters(s2))
    assert dump_scene(s2) == dump_scene(s)


def test_gradient_vector_guards():
    s = make_scene("translated_triangle", res=8)
    g = GradientVector(s.registry)
    g.accumulate(np.ones(3))
    assert g["mesh[0].translation.y"] == 1.0
    with pytest.raises(FloatingPointError):
        g.accumulate(np.array([np.nan, 0, 0]))
    with pytest.raises(ValueError):
        GradientVector(s.registry, np.zeros(4))


def test_camera_project_center():
    s = make_scene("emitter_triangle", res=16)
    assert s.camera.project(s.camera.look_at) == pytest.approx((8.0, 8.0))
