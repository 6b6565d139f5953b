import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshblend import mesh as msh
from meshblend.mesh import (
    MeshError,
    MeshFormatError,
    MotionSequence,
    Permutation,
    TriMesh,
    apply_permutation,
    build_adjacency,
    load_obj,
    load_sequence,
    neighbors,
    save_obj,
    save_sequence,
    shared_neighbors,
    validate_watertight_manifold,
)
from meshblend.shapes import icosahedron, tetrahedron, torus_grid


def strip_mesh(k: int) -> TriMesh:
    """Open triangle strip with k+2 vertices."""
    verts = [[i * 0.5, i % 2 * 1.0, 0.0] for i in range(k + 2)]
    faces = [(i, i + 1, i + 2) if i % 2 == 0 else (i + 1, i, i + 2) for i in range(k)]
    return TriMesh(verts, faces)


def glued_tetrahedra() -> TriMesh:
    """Two tetrahedra sharing exactly one vertex (vertex 0)."""
    t = np.asarray(tetrahedron().vertices)
    verts = np.vstack([t, t[1:] + 5.0])
    faces = [(0, 1, 2), (0, 3, 1), (0, 2, 3), (1, 3, 2),
             (0, 4, 5), (0, 6, 4), (0, 5, 6), (4, 6, 5)]
    return TriMesh(verts, faces)


class TestBuildAdjacency:
    def test_single_triangle(self):
        adj = build_adjacency([(0, 1, 2)], 3)
        assert np.array_equal(adj, np.ones((3, 3)) - np.eye(3))

    def test_tetrahedron_is_k4(self):
        adj = np.asarray(tetrahedron().adjacency)
        assert np.array_equal(adj, np.ones((4, 4)) - np.eye(4))

    def test_icosahedron_degree_five(self):
        adj = np.asarray(icosahedron().adjacency)
        assert (adj.sum(axis=1) == 5).all()

    def test_out_of_range_index(self):
        with pytest.raises(MeshError):
            build_adjacency([(0, 1, 3)], 3)

    def test_degenerate_face(self):
        with pytest.raises(MeshError):
            build_adjacency([(0, 1, 1)], 3)

    @given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9), st.integers(0, 9)),
                    min_size=1, max_size=30))
    @settings(max_examples=50, deadline=None)
    def test_symmetric_zero_diagonal(self, faces):
        faces = [f for f in faces if len(set(f)) == 3]
        if not faces:
            return
        adj = build_adjacency(faces, 10)
        assert np.array_equal(adj, adj.T)
        assert (np.diag(adj) == 0).all()


class TestValidation:
    def test_tetrahedron_passes(self):
        assert validate_watertight_manifold(tetrahedron()).ok

    def test_single_triangle_fails_with_boundary(self):
        report = validate_watertight_manifold(TriMesh(np.eye(3), [(0, 1, 2)]))
        assert not report.ok
        assert set(report.boundary_edges) == {(0, 1), (0, 2), (1, 2)}

    def test_glued_tetrahedra_nonmanifold_vertex(self):
        report = validate_watertight_manifold(glued_tetrahedra())
        assert not report.ok
        assert 0 in report.nonmanifold_vertices
        assert not report.boundary_edges

    def test_manifold_edge_has_two_shared_neighbors(self):
        for mesh in (icosahedron(), torus_grid(6, 6)):
            assert validate_watertight_manifold(mesh).ok
            adj = np.asarray(mesh.adjacency)
            for u, v in zip(*np.nonzero(np.triu(adj))):
                assert len(shared_neighbors(mesh, int(u), int(v))) == 2


class TestPermutation:
    def test_identity_leaves_mesh_unchanged(self):
        mesh = icosahedron()
        out = apply_permutation(mesh, Permutation.identity(mesh.n))
        assert np.array_equal(out.vertices, mesh.vertices)
        assert out.faces == mesh.faces

    def test_inverse_round_trip(self):
        mesh = icosahedron()
        p = Permutation.random(mesh.n, np.random.default_rng(0))
        back = apply_permutation(apply_permutation(mesh, p), p.inverse())
        assert np.array_equal(back.vertices, mesh.vertices)
        assert back.faces == mesh.faces
        assert np.array_equal(back.adjacency, mesh.adjacency)

    def test_conjugation_matches_matrix_product(self):
        mesh = icosahedron()
        p = Permutation.random(12, np.random.default_rng(1))
        out = apply_permutation(mesh, p)
        pm = p.matrix()
        expected = pm @ np.asarray(mesh.adjacency, float) @ pm.T
        assert np.array_equal(np.asarray(out.adjacency, float), expected)

    def test_point_set_preserved(self):
        mesh = icosahedron()
        p = Permutation.random(12, np.random.default_rng(2))
        out = apply_permutation(mesh, p)
        a = np.asarray(sorted(map(tuple, np.asarray(mesh.vertices))))
        b = np.asarray(sorted(map(tuple, np.asarray(out.vertices))))
        assert np.array_equal(a, b)

    def test_size_mismatch(self):
        with pytest.raises(MeshError):
            apply_permutation(tetrahedron(), Permutation.identity(5))

    def test_non_bijection_rejected(self):
        with pytest.raises(MeshError):
            Permutation(np.array([0, 0, 1]))

    def test_matrix_orthogonality(self):
        p = Permutation.random(8, np.random.default_rng(3))
        pm = p.matrix()
        assert np.array_equal(pm @ pm.T, np.eye(8))


class TestNeighbors:
    def test_tetrahedron_shared(self):
        assert shared_neighbors(tetrahedron(), 0, 1) == {2, 3}

    def test_icosahedron_edge_shared_two(self):
        mesh = icosahedron()
        adj = np.asarray(mesh.adjacency)
        u, v = map(int, np.argwhere(adj)[0])
        assert len(shared_neighbors(mesh, u, v)) == 2

    def test_strip_far_vertices_share_nothing(self):
        mesh = strip_mesh(8)
        assert shared_neighbors(mesh, 0, mesh.n - 1) == set()

    def test_invalid_index(self):
        with pytest.raises(MeshError):
            neighbors(tetrahedron(), 4)


class TestObjIO:
    def test_round_trip(self, tmp_path):
        mesh = tetrahedron()
        path = tmp_path / "tet.obj"
        save_obj(mesh, path)
        loaded = load_obj(path)
        assert loaded.faces == mesh.faces
        assert np.abs(loaded.vertices - mesh.vertices).max() < 1e-9

    def test_quad_face_reports_line(self, tmp_path):
        path = tmp_path / "quad.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        with pytest.raises(MeshFormatError, match="5"):
            load_obj(path)

    def test_slash_attributes_ignored(self, tmp_path):
        path = tmp_path / "attr.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3\n")
        assert load_obj(path).faces == ((0, 1, 2),)

    def test_out_of_range_face_index(self, tmp_path):
        path = tmp_path / "bad.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n")
        with pytest.raises(MeshFormatError, match="4"):
            load_obj(path)

    def test_malformed_vertex(self, tmp_path):
        path = tmp_path / "badv.obj"
        path.write_text("v 0 zero 0\n")
        with pytest.raises(MeshFormatError, match="1"):
            load_obj(path)

    def test_unknown_records_skipped(self, tmp_path):
        path = tmp_path / "extra.obj"
        path.write_text(
            "# comment\no thing\nvn 0 0 1\nvt 0 0\ns off\n"
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"
        )
        assert load_obj(path).n == 3

    @given(seed=st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=20, deadline=None)
    def test_vertex_precision_property(self, tmp_path_factory, seed):
        rng = np.random.default_rng(seed)
        mesh = TriMesh(rng.uniform(-2, 2, size=(3, 3)), [(0, 1, 2)])
        path = tmp_path_factory.mktemp("obj") / "m.obj"
        save_obj(mesh, path)
        loaded = load_obj(path)
        assert np.abs(loaded.vertices - mesh.vertices).max() < 1e-8


class TestSequences:
    def test_round_trip(self, tmp_path):
        mesh = tetrahedron()
        frames = [np.asarray(mesh.vertices) + i * 0.1 for i in range(3)]
        seq = MotionSequence(frames, mesh.faces, [0, 2, 5])
        save_sequence(seq, tmp_path / "seq")
        loaded = load_sequence(tmp_path / "seq")
        assert loaded.frame_indices == [0, 2, 5]
        assert len(loaded) == 3
        assert loaded.faces == mesh.faces
        for a, b in zip(loaded.frames, frames):
            assert np.abs(a - b).max() < 1e-9

    def test_meta_mismatch_detected(self, tmp_path):
        mesh = tetrahedron()
        seq = MotionSequence([np.asarray(mesh.vertices)], mesh.faces)
        save_sequence(seq, tmp_path / "seq")
        (tmp_path / "seq" / "sequence.meta").write_text("2\n0\n")
        with pytest.raises(MeshFormatError):
            load_sequence(tmp_path / "seq")

    def test_frames_must_share_shape(self):
        mesh = tetrahedron()
        with pytest.raises(MeshError):
            MotionSequence([np.zeros((4, 3)), np.zeros((5, 3))], mesh.faces)
