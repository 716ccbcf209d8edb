import numpy as np
import pytest

from morphpd.errors import GeometryError, MeshParseError, ParameterError
from morphpd.mesh import (
    CE, DE, Mesh, convert_to_discrete, find_bond_candidates, generate_perforated_mesh,
    generate_structured_quad_mesh, insert_pre_notch, load_unstructured_mesh, min_edge_length, segments_cross,
    write_mesh,
)


def two_quads():
    nodes = [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (2, 1)]
    return Mesh(nodes, [[0, 1, 4, 3], [1, 2, 5, 4]], [4, 4])


def two_tris():
    return Mesh([(0, 0), (1, 0), (1, 1), (0, 1)], [[0, 1, 2, -1], [0, 2, 3, -1]], [3, 3])


@pytest.mark.parametrize("size, h, ne, nn", [(10.0, 1.0, 100, 121), (1.0, 1.0, 1, 4), (100.0, 0.5, 40000, 201 * 201)])
def test_structured_counts(size, h, ne, nn):
    m = generate_structured_quad_mesh(((0, 0), (size, size)), h)
    assert m.n_elements == ne and m.n_nodes == nn
    assert np.all(m.kind == CE)
    assert np.allclose(m.areas, h * h)


def test_structured_rejects_bad_spacing():
    with pytest.raises(ParameterError):
        generate_structured_quad_mesh(((0, 0), (1, 1)), 0.0)


def test_load_single_triangle(tmp_path):
    f = tmp_path / "t.mesh"
    f.write_text("nodes 3 elements 1\n1 0 0\n2 1 0\n3 0 1\n7 n3 1 2 3\n")
    m = load_unstructured_mesh(f)
    assert m.n_elements == 1 and m.kind[0] == CE
    assert m.areas[0] == pytest.approx(0.5)


def test_load_errors_carry_line_numbers(tmp_path):
    f = tmp_path / "dup.mesh"
    f.write_text("nodes 3 elements 2\n1 0 0\n2 1 0\n3 0 1\n1 n3 1 2 3\n1 n3 1 2 3\n")
    with pytest.raises(MeshParseError) as exc:
        load_unstructured_mesh(f)
    assert exc.value.line == 6
    f.write_text("nodes 3 elements 1\n1 0 0\n2 1 zero\n3 0 1\n1 n3 1 2 3\n")
    with pytest.raises(MeshParseError) as exc:
        load_unstructured_mesh(f)
    assert exc.value.line == 3


def test_inverted_element_is_geometry_error(tmp_path):
    f = tmp_path / "inv.mesh"
    f.write_text("nodes 3 elements 1\n1 0 0\n2 0 1\n3 1 0\n1 n3 1 2 3\n")
    with pytest.raises(GeometryError):
        load_unstructured_mesh(f)


def test_write_then_load_roundtrip(tmp_path, patch4):
    write_mesh(patch4, tmp_path / "m.mesh")
    m = load_unstructured_mesh(tmp_path / "m.mesh")
    assert np.array_equal(m.nodes, patch4.nodes) and np.array_equal(m.conn, patch4.conn)


def test_blast_disk_mesh_is_valid():
    m = generate_perforated_mesh(("disk", (0.0, 0.0, 72.0)), [(0.0, 0.0, 3.225)], 2.0)
    assert m.n_nodes > 0 and np.all(m.areas > 0)
    r = np.hypot(*m.centroids.T)
    assert r.min() > 3.225 and r.max() < 72.0
    # total area close to the annulus
    assert m.areas.sum() == pytest.approx(np.pi * (72.0**2 - 3.225**2), rel=0.01)


def test_pre_notch_duplicates_interior_segment_nodes():
    m = generate_structured_quad_mesh(((0, 0), (40, 100)), 1.0)
    cut = insert_pre_notch(m, ((20.0, 0.0), (20.0, 50.0)))
    # 49 interior nodes plus the boundary end; the tip at y = 50 stays shared
    assert cut.n_nodes == m.n_nodes + 50
    assert len(cut.slits) == 1
    # site consistency: copies stand where their originals stand
    for site in np.unique(cut.sites):
        xs = cut.nodes[cut.sites == site]
        assert np.all(xs == xs[0])


def test_pre_notch_zero_length_and_outside(patch4):
    assert insert_pre_notch(patch4, ((1.0, 0.0), (1.0, 0.0))) is patch4
    with pytest.raises(GeometryError):
        insert_pre_notch(patch4, ((10.0, 10.0), (10.0, 12.0)))


def test_bond_candidates_pairs_and_slits():
    m = two_quads()
    assert len(find_bond_candidates(m, 0.5, "centroid")) == 0
    t = find_bond_candidates(m, 3.0, "centroid")
    assert len(t) == 1 and t.length[0] == pytest.approx(1.0)
    m.slits = [((1.0, -1.0), (1.0, 2.0))]
    assert len(find_bond_candidates(m, 3.0, "centroid")) == 0


def test_bond_table_unordered_and_slit_free():
    m = generate_structured_quad_mesh(((0, 0), (8, 8)), 1.0)
    m = insert_pre_notch(m, ((4.0, 0.0), (4.0, 4.0)))
    t = find_bond_candidates(m, 2.0)
    pairs = set(zip(t.p.tolist(), t.q.tolist()))
    assert not any((q, p) in pairs for p, q in pairs)
    assert len(pairs) == len(t)
    assert np.all(t.length <= 2.0 + 1e-12)
    pts = m.pd_points()
    assert not segments_cross(pts.x[t.p], pts.x[t.q], (4.0, 0.0), (4.0, 4.0)).any()
    # brute-force count of pairs
    d = np.linalg.norm(pts.x[:, None] - pts.x[None], axis=2)
    blocked = segments_cross(pts.x[:, None].repeat(len(pts), 1), pts.x[None].repeat(len(pts), 0),
                             (4.0, 0.0), (4.0, 4.0))
    expect = np.triu((d <= 2.0) & (d > 0) & ~blocked, 1).sum()
    assert len(t) == expect


def test_convert_two_quads():
    m = two_quads()
    out, nm = convert_to_discrete(m, [0, 1])
    assert out.n_nodes == 8 and np.all(out.kind == DE)
    assert sorted(len(v) for v in nm.pairs.values() if len(v) > 1) == [2, 2]
    # geometry is shared and bit-identical
    assert out.geometry is m.geometry
    assert np.array_equal(out.centroids, m.centroids)


def test_convert_empty_and_idempotent():
    m = two_quads()
    out, nm = convert_to_discrete(m, [])
    assert out.n_nodes == m.n_nodes and len(nm) == 0
    once, _ = convert_to_discrete(m, [0])
    twice, nm2 = convert_to_discrete(once, [0])
    assert np.array_equal(once.conn, twice.conn) and once.n_nodes == twice.n_nodes
    assert len(nm2) == 0


def test_convert_one_triangle():
    m = two_tris()
    out, _ = convert_to_discrete(m, [0])
    a, b = set(out.conn[0, :3].tolist()), set(out.conn[1, :3].tolist())
    assert a.isdisjoint(b)
    assert b == {0, 2, 3}


def test_min_edge_length():
    assert min_edge_length(generate_structured_quad_mesh(((0, 0), (5, 5)), 0.5)) == pytest.approx(0.5)
    tri = Mesh([(0, 0), (3, 0), (0, 4)], [[0, 1, 2, -1]], [3])
    assert min_edge_length(tri) == pytest.approx(3.0)
    mixed = Mesh([(0, 0), (1, 0), (1, 1), (0, 1), (1.2, 0.5)], [[0, 1, 2, 3], [1, 4, 2, -1]], [4, 3])
    assert min_edge_length(mixed) == pytest.approx(np.hypot(0.2, 0.5))


def test_segments_cross_excludes_endpoints():
    assert segments_cross(np.array([0.0, 0.0]), np.array([2.0, 0.0]), (1.0, -1.0), (1.0, 1.0))
    assert not segments_cross(np.array([0.0, 0.0]), np.array([1.0, 0.0]), (1.0, -1.0), (1.0, 1.0))
