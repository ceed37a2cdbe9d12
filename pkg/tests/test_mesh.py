import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshadv.mesh import (
    SHAPE_KINDS,
    Mesh,
    MeshError,
    MeshParseError,
    ShapeSpec,
    box,
    build_topology,
    generate,
    icosphere,
    make_dataset,
    parse_obj,
    parse_off,
    read_dataset,
    require_closed_manifold,
    serialize_off,
    torus,
    validate_closed_manifold,
    write_dataset,
)

TETRA = Mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float),
             np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]))


def signed_volume(mesh):
    v = mesh.vertices[mesh.faces]
    return np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0


def test_off_roundtrip_is_bit_exact():
    m = generate(ShapeSpec("icosphere", {}, jitter=0.03, seed=4))
    back = parse_off(serialize_off(m))
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.faces, m.faces)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(*[st.floats(-1e6, 1e6, allow_nan=False)] * 3), min_size=4, max_size=4))
def test_off_roundtrip_arbitrary_coordinates(coords):
    m = Mesh(np.array(coords), TETRA.faces)
    assert np.array_equal(parse_off(serialize_off(m)).vertices, m.vertices)


def test_off_header_on_one_line_and_comments():
    text = "OFF 3 1 0\n# a comment\n0 0 0\n1 0 0\n0 1 0 # trailing\n3 0 1 2\n"
    m = parse_off(text)
    assert m.n_vertices == 3 and m.n_faces == 1


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        ("", 1, "empty"),
        ("PLY\n", 1, "OFF"),
        ("OFF\n3 x\n", 2, "counts"),
        ("OFF\n3 1 0\n0 0 0\n1 0 0\n", 4, "only 2 provided"),
        ("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n4 0 1 2 2\n", 6, "triangle"),
        ("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n", 6, "out of range"),
        ("OFF\n3 1 0\n0 0 0\n1 a 0\n", 4, "bad vertex"),
    ],
)
def test_off_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(MeshParseError) as info:
        parse_off(text)
    assert info.value.line == line
    assert fragment in str(info.value)


def test_obj_reader_uses_one_based_indices():
    m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    assert m.faces.tolist() == [[0, 1, 2]]


def test_tetrahedron_topology():
    topo = build_topology(TETRA)
    assert topo.euler_characteristic == 2
    assert topo.n_edges == 6
    assert all(len(r) == 3 for r in topo.one_rings)
    assert np.all(topo.edge_faces >= 0)
    ok, problems = validate_closed_manifold(topo)
    assert ok and problems == []


def test_open_mesh_is_reported():
    open_mesh = Mesh(TETRA.vertices, TETRA.faces[:3])
    topo = build_topology(open_mesh, strict=False)
    ok, problems = validate_closed_manifold(topo)
    assert not ok
    assert any("boundary edge" in p for p in problems)
    with pytest.raises(MeshError):
        require_closed_manifold(open_mesh)


def test_inconsistent_orientation_rejected():
    flipped = TETRA.faces.copy()
    flipped[0] = flipped[0][::-1]
    with pytest.raises(MeshError, match="orientation"):
        build_topology(Mesh(TETRA.vertices, flipped))


def test_nonmanifold_edge_rejected():
    v = np.vstack([TETRA.vertices, [[0.5, 0.5, -1.0]]])
    f = np.vstack([TETRA.faces, [[0, 1, 4]]])
    with pytest.raises(MeshError):
        build_topology(Mesh(v, f))


@pytest.mark.parametrize("kind", SHAPE_KINDS)
def test_generated_shapes_are_closed_and_outward(kind):
    mesh = generate(ShapeSpec(kind, {}, jitter=0.02, seed=1))
    topo = require_closed_manifold(mesh)
    assert topo.euler_characteristic == (0 if kind == "torus" else 2)
    assert 2 * topo.n_edges == 3 * mesh.n_faces
    assert signed_volume(mesh) > 0
    assert mesh.face_areas().min() > 1e-6


def test_icosphere_vertex_counts():
    assert [icosphere(1.0, s).n_vertices for s in range(4)] == [12, 42, 162, 642]
    assert np.allclose(np.linalg.norm(icosphere(2.0, 2).vertices, axis=1), 2.0)


def test_torus_requires_minor_below_major():
    with pytest.raises(MeshError):
        torus(1.0, 1.0)


def test_unknown_shape_parameter():
    with pytest.raises(MeshError, match="unknown parameters"):
        generate(ShapeSpec("box", {"radius": 2.0}))


def test_jitter_is_seeded():
    a = generate(ShapeSpec("box", {}, 0.05, seed=3))
    b = generate(ShapeSpec("box", {}, 0.05, seed=3))
    c = generate(ShapeSpec("box", {}, 0.05, seed=4))
    assert a.checksum() == b.checksum() != c.checksum()
    assert not np.allclose(a.vertices, box().vertices)


def test_dataset_is_deterministic_and_roundtrips(tmp_path):
    templates = [ShapeSpec("icosphere", {"radius_range": (0.8, 1.2)}, 0.02), ShapeSpec("box", {}, 0.02)]
    ds = make_dataset(templates, 5, 0.8, seed=11, class_names=["sphere", "box"])
    again = make_dataset(templates, 5, 0.8, seed=11, class_names=["sphere", "box"])
    assert ds.checksum() == again.checksum()
    assert len(ds.train) == 8 and len(ds.test) == 2
    manifest = write_dataset(ds, tmp_path)
    doc = json.loads(manifest.read_text())
    assert len(doc["meshes"]) == 10
    assert {e["split"] for e in doc["meshes"]} == {"train", "test"}
    back = read_dataset(manifest)
    assert back.checksum() == ds.checksum()
    assert back.class_names == ["sphere", "box"]


def test_dataset_rejects_bad_sizes():
    t = [ShapeSpec("icosphere"), ShapeSpec("box")]
    with pytest.raises(MeshError):
        make_dataset(t[:1], 5)
    with pytest.raises(MeshError):
        make_dataset(t, 1)
    with pytest.raises(MeshError):
        make_dataset(t, 5, split=1.0)


def test_mesh_check_rejects_bad_input():
    with pytest.raises(MeshError):
        Mesh(np.zeros((0, 3)), np.zeros((0, 3), int)).check()
    with pytest.raises(MeshError):
        Mesh(np.full((3, 3), np.nan), [[0, 1, 2]]).check()
    with pytest.raises(MeshError):
        Mesh(np.eye(3), [[0, 1, 1]]).check()
