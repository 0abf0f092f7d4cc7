import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skeleton_ddm.mesh import (
    MeshError, build_mesh, disk_mesh, edge_ids, load_mesh, save_mesh_json, save_mesh_msh2,
    signed_areas, square_mesh,
)


def test_single_triangle_has_three_boundary_edges():
    m = build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    assert m.n_edges == 3
    assert len(m.boundary_edges) == 3


def test_two_triangle_square(two_triangles):
    m = two_triangles
    assert m.n_edges == 5
    assert len(m.boundary_edges) == 4
    interior = np.setdiff1d(np.arange(5), m.boundary_edges)
    assert m.edges[interior].tolist() == [[0, 2]]


@pytest.mark.parametrize("h", [0.5, 0.21, 0.1, 0.047])
def test_disk_euler_characteristic(h):
    m = disk_mesh(1.0, h)
    assert m.n_vertices - m.n_edges + m.n_triangles == 1


def test_disk_geometry():
    m = disk_mesh(2.0, 0.2)
    assert m.areas.sum() == pytest.approx(np.pi * 4, rel=0.02)
    assert np.all(m.areas > 0)
    r = np.linalg.norm(m.vertices[np.unique(m.edges[m.boundary_edges])], axis=1)
    assert np.allclose(r, 2.0)


def test_edges_canonical_and_sorted():
    m = disk_mesh(1.0, 0.3)
    assert np.all(m.edges[:, 0] < m.edges[:, 1])
    order = np.lexsort((m.edges[:, 1], m.edges[:, 0]))
    assert np.array_equal(order, np.arange(m.n_edges))
    t = m.edge_tangents
    d = m.vertices[m.edges[:, 1]] - m.vertices[m.edges[:, 0]]
    assert np.allclose(t * m.edge_lengths[:, None], d)


def test_edge_incidence_counts():
    m = disk_mesh(1.0, 0.25)
    count = np.bincount(m.tri_edges.ravel(), minlength=m.n_edges)
    assert set(count.tolist()) <= {1, 2}
    assert np.array_equal(np.flatnonzero(count == 1), m.boundary_edges)


def test_tri_edges_opposite_local_vertex():
    m = disk_mesh(1.0, 0.4)
    for t in range(m.n_triangles):
        for k in range(3):
            e = m.edges[m.tri_edges[t, k]]
            assert m.triangles[t, k] not in e


def test_triangles_reoriented_ccw():
    m = build_mesh([[0, 0], [0, 1], [1, 0]], [[0, 1, 2]])
    assert signed_areas(m.vertices, m.triangles)[0] > 0


def test_boundary_tangents_counter_clockwise():
    m = disk_mesh(1.0, 0.3)
    b = m.boundary_edges
    mid = m.vertices[m.edges[b]].mean(axis=1)
    t = m.boundary_tangents()[b]
    # ccw on the circle: tangent is the outward normal rotated by +90 degrees
    assert np.all(mid[:, 0] * t[:, 1] - mid[:, 1] * t[:, 0] > 0)


def test_errors():
    with pytest.raises(MeshError):
        build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 5]])
    with pytest.raises(MeshError):
        build_mesh([[0, 0], [1, 0], [2, 0]], [[0, 1, 2]])
    with pytest.raises(MeshError):
        build_mesh([[0, 0], [1, 0]], np.zeros((0, 3)))
    # three triangles on one edge is not a conforming triangulation
    with pytest.raises(MeshError):
        build_mesh([[0, 0], [1, 0], [0, 1], [0, -1], [1, 1]], [[0, 1, 2], [0, 1, 3], [0, 1, 4]])


def test_json_roundtrip(tmp_path):
    m = disk_mesh(1.0, 0.4)
    save_mesh_json(m, tmp_path / "m.json")
    m2 = load_mesh(tmp_path / "m.json")
    assert np.array_equal(m.edges, m2.edges)
    assert np.allclose(m.vertices, m2.vertices)


def test_msh2_roundtrip_with_tags(tmp_path):
    m = square_mesh(2)
    save_mesh_msh2(m, tmp_path / "m.msh", boundary_tag=7)
    m2 = load_mesh(tmp_path / "m.msh")
    assert np.array_equal(m.triangles, m2.triangles)
    assert set(m2.boundary_tags.values()) == {7}
    assert sorted(m2.boundary_tags) == m2.boundary_edges.tolist()


def test_msh2_hand_written(tmp_path):
    text = """$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
4
1 0 0 0
2 1 0 0
3 1 1 0
4 0 1 0
$EndNodes
$Elements
3
1 1 2 5 5 1 2
2 2 2 0 0 1 2 3
3 2 2 0 0 1 3 4
$EndElements
"""
    (tmp_path / "sq.msh").write_text(text)
    m = load_mesh(tmp_path / "sq.msh")
    assert (m.n_vertices, m.n_edges, m.n_triangles) == (4, 5, 2)
    assert m.boundary_tags == {int(edge_ids(m, [[0, 1]])[0]): 5}


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_mesh(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(MeshError):
        load_mesh(tmp_path / "bad.json")
    (tmp_path / "bad.msh").write_text("$MeshFormat\n4.1 0 8\n$EndMeshFormat\n")
    with pytest.raises(MeshError):
        load_mesh(tmp_path / "bad.msh")
    (tmp_path / "empty.json").write_text(json.dumps({"vertices": [], "triangles": []}))
    with pytest.raises(MeshError):
        load_mesh(tmp_path / "empty.json")


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.floats(0.5, 3.0))
def test_square_mesh_counts(n, length):
    m = square_mesh(n, length)
    assert m.n_triangles == 2 * n * n
    assert m.n_vertices - m.n_edges + m.n_triangles == 1
    assert m.areas.sum() == pytest.approx(length**2)
