import numpy as np
import pytest

from meshblend import numeric as nm
from meshblend.checkpoint import CheckpointError
from meshblend.correspondence import (
    CorrespondenceParams,
    SoftCorrespondence,
    binarize,
    build_augmented,
    load_correspondence_params,
    rbmpnn_forward,
    save_correspondence_params,
)
from meshblend.mesh import MeshError, Permutation, TriMesh, apply_permutation
from meshblend.numeric import Matrix
from meshblend.shapes import tetrahedron, icosahedron


def triangle_mesh(offset=0.0):
    return TriMesh(np.eye(3) + offset, [(0, 1, 2)])


class TestBuildAugmented:
    def test_two_triangles(self):
        aug = build_augmented(triangle_mesh(), triangle_mesh(1.0)).data
        assert aug.shape == (6, 6)
        assert np.allclose(aug[:3, 3:], 1.0 / 3)
        assert np.allclose(aug[3:, :3], 1.0 / 3)

    def test_blue_blocks_are_adjacencies(self):
        g0, g1 = tetrahedron(), tetrahedron()
        aug = build_augmented(g0, g1).data
        assert np.array_equal(aug[:4, :4], np.asarray(g0.adjacency, float))
        assert np.array_equal(aug[4:, 4:], np.asarray(g1.adjacency, float))

    def test_k4_row_sums(self):
        aug = build_augmented(tetrahedron(), tetrahedron()).data
        assert np.allclose(aug.sum(axis=1), 4.0)

    def test_count_mismatch(self):
        with pytest.raises(MeshError):
            build_augmented(triangle_mesh(), tetrahedron())


class TestForward:
    def test_shape_and_range(self):
        g0 = icosahedron()
        params = CorrespondenceParams.initialize(k=2, dim=8, seed=0)
        soft = rbmpnn_forward(g0, g0, params)
        data = soft.matrix.data
        assert data.shape == (12, 12)
        assert np.isfinite(data).all()
        assert ((data > 0.0) & (data < 1.0)).all()

    def test_label_equivariance(self):
        g0 = icosahedron()
        params = CorrespondenceParams.initialize(k=3, dim=16, seed=1)
        rng = np.random.default_rng(5)
        base = rbmpnn_forward(g0, g0, params).matrix.data
        for _ in range(5):
            q = Permutation.random(g0.n, rng)
            g1 = apply_permutation(g0, q)
            out = rbmpnn_forward(g0, g1, params).matrix.data
            assert np.abs(out - base[q.mapping]).max() < 1e-9

    def test_straight_line_oracle_k1(self):
        g0 = tetrahedron()
        q = Permutation.random(4, np.random.default_rng(3))
        g1 = apply_permutation(g0, q)
        params = CorrespondenceParams.initialize(
            k=1, dim=8, lambda_s=1.0, lambda_r=0.0, sinkhorn_iters=7, sinkhorn_tau=0.9, seed=2
        )
        out = rbmpnn_forward(g0, g1, params).matrix.data

        # Independent re-implementation of the K=1 pass in plain numpy.
        w = {name: np.asarray(m.data) for name, m in params.matrices()}

        def mlp(x):
            h = np.maximum(x @ w["w1"] + w["b1"], 0.0)
            h = np.maximum(h @ w["w2"] + w["b2"], 0.0)
            return np.maximum(h @ w["w3"] + w["b3"], 0.0)

        def l2n(x):
            norms = np.linalg.norm(x, axis=1, keepdims=True)
            return np.where(norms >= 1e-12, x / np.where(norms >= 1e-12, norms, 1.0), x)

        def sink(x, iters, tau):
            m = np.exp(x / tau)
            for _ in range(iters):
                m = m / m.sum(axis=1, keepdims=True)
                m = m / m.sum(axis=0, keepdims=True)
            return m

        a0 = np.asarray(g0.adjacency, float)
        a1 = np.asarray(g1.adjacency, float)
        v0 = mlp(g0.vertices - g0.vertices.mean(axis=0))
        v1 = mlp(g1.vertices - g1.vertices.mean(axis=0))
        r0 = np.full((4, 4), 0.25)
        v0n = np.maximum(a0 @ v0 @ w["wb0"] + r0 @ v1 @ w["wr0"], 0.0)
        v1n = np.maximum(a1 @ v1 @ w["wb0"] + r0.T @ v0 @ w["wr0"], 0.0)
        r_hat = (l2n(v0n) @ w["wt"]) @ (l2n(v1n) @ w["wt"]).T
        r1 = sink(r_hat, 7, 0.9)
        expected = 1.0 / (1.0 + np.exp(-r1.T))
        assert np.abs(out - expected).max() < 1e-12

    def test_frozen_red_edges_give_constant_output(self):
        g0 = icosahedron()
        params = CorrespondenceParams.initialize(k=3, dim=8, lambda_s=0.0, lambda_r=1.0, seed=4)
        out = rbmpnn_forward(g0, g0, params).matrix.data
        expected = 1.0 / (1.0 + np.exp(-1.0 / g0.n))
        assert np.abs(out - expected).max() < 1e-15

    def test_records_on_tape(self):
        g0 = tetrahedron()
        params = CorrespondenceParams.initialize(k=1, dim=4, seed=0)
        weight = Matrix(np.random.default_rng(0).normal(size=(4, 4)))
        with nm.Tape() as tape:
            soft = rbmpnn_forward(g0, g0, params)
            loss = nm.total(nm.mul(soft.logits, weight))
        grads = nm.backward(loss, tape)
        assert np.abs(grads.get(params.weights["wt"])).max() > 0.0

    def test_custom_hidden_widths(self):
        g0 = tetrahedron()
        params = CorrespondenceParams.initialize(k=1, dim=4, hidden=(10, 6), seed=0)
        assert rbmpnn_forward(g0, g0, params).matrix.shape == (4, 4)


class TestBinarize:
    def test_simple(self):
        hard = binarize([[0.9, 0.1], [0.2, 0.8]])
        assert np.array_equal(hard.matrix, np.eye(2))
        assert hard.is_valid_permutation

    def test_tie_breaks_to_lowest_column(self):
        hard = binarize([[0.5, 0.5]])
        assert np.array_equal(hard.matrix, [[1, 0]])

    def test_column_collision_not_a_permutation(self):
        hard = binarize([[0.9, 0.1], [0.8, 0.2]])
        assert np.array_equal(hard.matrix, [[1, 0], [1, 0]])
        assert not hard.is_valid_permutation

    def test_one_per_row_always(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            hard = binarize(rng.normal(size=(7, 7)))
            assert (hard.matrix.sum(axis=1) == 1).all()

    def test_monotone_sigmoid_invariance(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(6, 6))
        sig = 1.0 / (1.0 + np.exp(-x))
        assert np.array_equal(binarize(x).matrix, binarize(sig).matrix)

    def test_accepts_soft_correspondence(self):
        m = Matrix([[0.9, 0.1], [0.1, 0.9]])
        soft = SoftCorrespondence(m, m)
        assert binarize(soft).is_valid_permutation


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = CorrespondenceParams.initialize(
            k=3, dim=8, hidden=(12, 10), lambda_s=0.7, lambda_r=0.2,
            sinkhorn_iters=15, sinkhorn_tau=0.5, seed=9,
        )
        path = tmp_path / "model.ckpt"
        save_correspondence_params(params, path)
        loaded = load_correspondence_params(path)
        assert (loaded.k, loaded.dim, loaded.hidden) == (3, 8, (12, 10))
        assert (loaded.lambda_s, loaded.lambda_r) == (0.7, 0.2)
        assert (loaded.sinkhorn_iters, loaded.sinkhorn_tau) == (15, 0.5)
        assert loaded.seed == 9
        for (_, a), (_, b) in zip(params.matrices(), loaded.matrices()):
            assert np.array_equal(a.data, b.data)

    def test_magic_enforced(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTMAGX{}\n")
        with pytest.raises(CheckpointError):
            load_correspondence_params(path)

    def test_truncated_payload_fails_fast(self, tmp_path):
        params = CorrespondenceParams.initialize(k=1, dim=4, seed=0)
        path = tmp_path / "model.ckpt"
        save_correspondence_params(params, path)
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(CheckpointError):
            load_correspondence_params(path)


class TestParamsValidation:
    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            CorrespondenceParams.initialize(k=0, dim=4)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            CorrespondenceParams.initialize(k=1, dim=4, lambda_s=-0.1)

    def test_shape_mismatch_rejected(self):
        params = CorrespondenceParams.initialize(k=1, dim=4, seed=0)
        weights = dict(params.weights)
        weights["wt"] = Matrix.zeros(3, 3)
        with pytest.raises(ValueError):
            CorrespondenceParams(1, 4, (4, 4), 0.5, 0.5, 20, 1.0, 0, weights)
