import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import meshtally as mt
from meshtally.mesh import FACE_VERTICES

from .oracles import brute_force_face_counts
from .conftest import REF_TET


class TestBuildCubeMesh:
    def test_single_cell(self, cube1):
        assert cube1.num_elements == 6
        assert cube1.num_vertices == 8
        assert cube1.volumes.sum() == pytest.approx(1.0, rel=1e-14)

    def test_n10_counts(self, cube10):
        assert cube10.num_elements == 6000
        assert cube10.num_vertices == 11 ** 3
        np.testing.assert_array_equal(cube10.bounding_box[0], [0, 0, 0])
        np.testing.assert_array_equal(cube10.bounding_box[1], [1, 1, 1])

    def test_n12_matches_10k_study_size(self):
        mesh = mt.build_cube_mesh(12)
        assert mesh.num_elements == 10368

    @pytest.mark.parametrize("n,edge", [(1, 1.0), (3, 2.5), (5, 0.1)])
    def test_volume_partition(self, n, edge):
        mesh = mt.build_cube_mesh(n, edge)
        assert mesh.num_elements == 6 * n ** 3
        assert mesh.num_vertices == (n + 1) ** 3
        total = mesh.volumes.sum()
        assert abs(total - edge ** 3) <= 1e-12 * edge ** 3

    @pytest.mark.parametrize("n", [1, 2, 4])
    def test_boundary_triangle_count(self, n):
        mesh = mt.build_cube_mesh(n)
        assert int((mesh.adj_elem < 0).sum()) == 12 * n ** 2

    def test_positive_volumes(self, cube4):
        assert (cube4.volumes > 0).all()

    def test_all_invariants_valid(self, cube4):
        assert mt.validate(cube4) == []

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            mt.build_cube_mesh(0)
        with pytest.raises(ValueError):
            mt.build_cube_mesh(2, -1.0)
        with pytest.raises(ValueError):
            mt.build_cube_mesh(2, 0.0)


class TestBuildAdjacency:
    def test_single_tet_all_boundary(self):
        elements = np.array([[0, 1, 2, 3]])
        adj_e, adj_f = mt.build_adjacency(elements, 4)
        assert (adj_e == -1).all()
        assert (adj_f == -1).all()

    def test_two_tets_one_shared_face(self):
        # tets share face (1, 2, 3)
        elements = np.array([[0, 1, 2, 3], [4, 1, 2, 3]])
        adj_e, adj_f = mt.build_adjacency(elements, 5)
        interior = int((adj_e >= 0).sum())
        assert interior == 2  # one face, two half-entries
        assert adj_e[0, 0] == 1 and adj_e[1, 0] == 0
        assert int((adj_e == -1).sum()) == 6

    def test_n4_boundary_count_vs_bruteforce(self, cube4):
        interior, boundary, most = brute_force_face_counts(cube4.elements)
        assert most == 2
        assert boundary == 2 * 6 * 4 ** 2 == 192
        assert int((cube4.adj_elem < 0).sum()) == boundary
        assert int((cube4.adj_elem >= 0).sum()) == 2 * interior

    def test_symmetry_exhaustive(self, cube4):
        adj_e, adj_f = cube4.adj_elem, cube4.adj_face
        for e in range(cube4.num_elements):
            for f in range(4):
                nb, nf = adj_e[e, f], adj_f[e, f]
                if nb >= 0:
                    assert adj_e[nb, nf] == e
                    assert adj_f[nb, nf] == f

    def test_adjacent_faces_share_vertices(self, cube2):
        for e in range(cube2.num_elements):
            for f in range(4):
                nb, nf = cube2.adj_elem[e, f], cube2.adj_face[e, f]
                if nb < 0:
                    continue
                mine = set(cube2.elements[e, FACE_VERTICES[f]].tolist())
                theirs = set(cube2.elements[nb, FACE_VERTICES[nf]].tolist())
                assert mine == theirs

    def test_face_shared_three_times_rejected(self):
        elements = np.array([[0, 1, 2, 3], [4, 1, 2, 3], [5, 1, 2, 3]])
        with pytest.raises(mt.MalformedMeshError):
            mt.build_adjacency(elements, 6)

    def test_duplicated_element_rejected(self):
        elements = np.array([[0, 1, 2, 3], [0, 1, 2, 3]])
        with pytest.raises(mt.MalformedMeshError):
            mt.build_adjacency(elements, 4)


class TestElementVolume:
    def test_reference_tet(self):
        mesh = mt.TetMesh.from_arrays(REF_TET, np.array([[0, 1, 2, 3]]))
        assert mt.element_volume(mesh, 0) == pytest.approx(1 / 6, rel=1e-15)

    def test_degenerate_rejected_at_build(self):
        flat = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.0]])
        with pytest.raises(mt.MalformedMeshError):
            mt.TetMesh.from_arrays(flat, np.array([[0, 1, 2, 3]]))

    def test_repeated_vertex_rejected_at_build(self):
        with pytest.raises(mt.MalformedMeshError):
            mt.TetMesh.from_arrays(REF_TET, np.array([[0, 1, 2, 2]]))

    def test_partition_of_unity(self, cube10):
        total = sum(mt.element_volume(cube10, e)
                    for e in range(0, cube10.num_elements, 97))
        direct = cube10.volumes[::97].sum()
        assert total == pytest.approx(direct, rel=1e-12)
        assert cube10.volumes.sum() == pytest.approx(1.0, rel=1e-12)

    def test_out_of_range(self, cube1):
        with pytest.raises(IndexError):
            mt.element_volume(cube1, 6)
        with pytest.raises(IndexError):
            mt.element_volume(cube1, -1)


class TestValidate:
    def test_valid_mesh_empty_report(self, cube2):
        assert mt.validate(cube2) == []

    def test_corrupted_adjacency_reported(self):
        mesh = mt.build_cube_mesh(2)
        mesh.adj_elem[0, 0] = 7  # break symmetry
        report = mt.validate(mesh)
        assert any("asymmetric" in line or "disagrees" in line
                   for line in report)

    def test_matches_faces_check(self):
        mesh = mt.build_cube_mesh(1)
        # swap an adjacency pair wholesale: symmetric but wrong vertex sets
        e = 0
        f = int(np.nonzero(mesh.adj_elem[e] >= 0)[0][0])
        nb, nf = int(mesh.adj_elem[e, f]), int(mesh.adj_face[e, f])
        other_f = (nf + 1) % 4
        mesh.adj_face[e, f] = other_f
        mesh.adj_elem[nb, nf] = -1
        mesh.adj_elem[nb, other_f] = e
        mesh.adj_face[nb, other_f] = f
        assert mt.validate(mesh) != []


class TestTextFormat:
    def test_round_trip(self, tmp_path, cube2):
        path = tmp_path / "cube.tet"
        mt.write_tetmesh(cube2, path)
        back = mt.read_tetmesh(path)
        np.testing.assert_array_equal(back.elements, cube2.elements)
        np.testing.assert_allclose(back.vertices, cube2.vertices, rtol=0,
                                   atol=0)
        np.testing.assert_array_equal(back.adj_elem, cube2.adj_elem)

    def test_header(self, tmp_path, cube1):
        path = tmp_path / "cube.tet"
        mt.write_tetmesh(cube1, path)
        first = path.read_text().splitlines()[0]
        assert first == "tetmesh 8 6"

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.tet"
        path.write_text("trimesh 3 1\n")
        with pytest.raises(mt.MalformedMeshError):
            mt.read_tetmesh(path)

    def test_truncated_body_rejected(self, tmp_path):
        path = tmp_path / "short.tet"
        path.write_text("tetmesh 4 1\n0 0 0\n1 0 0\n0 1 0\n")
        with pytest.raises(mt.MalformedMeshError):
            mt.read_tetmesh(path)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(min_value=1, max_value=3),
       edge=st.floats(min_value=0.1, max_value=10.0,
                      allow_nan=False, allow_infinity=False))
def test_cube_mesh_properties(n, edge):
    mesh = mt.build_cube_mesh(n, edge)
    assert mesh.num_elements == 6 * n ** 3
    assert mesh.num_vertices == (n + 1) ** 3
    assert abs(mesh.volumes.sum() - edge ** 3) <= 1e-12 * edge ** 3
    assert int((mesh.adj_elem < 0).sum()) == 12 * n ** 2
    # symmetry
    adj_e, adj_f = mesh.adj_elem, mesh.adj_face
    interior = np.nonzero(adj_e >= 0)
    for e, f in zip(*interior):
        assert adj_e[adj_e[e, f], adj_f[e, f]] == e
