"""Temporal fusion: align the second mesh to the first, extract graph
features, and synthesize blended vertices for an arbitrary time t.

Both meshes run through one shared encoder (a 2-layer MLP followed by
six residual normalized-propagation layers); the decoder sees the two
feature sets, their linear blend and a constant time channel, and a
final linear projection brings the residual stack's width down to 3-D
coordinates. Connectivity is never altered: the output mesh keeps the
first mesh's faces and adjacency.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numeric as nm
from .checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from .mesh import MeshError, TriMesh
from .numeric import Matrix
from .refinement import EXACT, FALLBACK, PARTIAL, RefinementResult

__all__ = [
    "FusionParams",
    "AlignedPair",
    "BlendedMesh",
    "BmpnnBlock",
    "normalized_propagation",
    "align",
    "bmpnn",
    "encoder_features",
    "linear_feature_blend",
    "blend",
    "save_fusion_params",
    "load_fusion_params",
    "MAGIC",
]

MAGIC = b"FUSNET1"
N_RESIDUAL = 6

PERMUTED = "permuted"
PROPAGATED = "propagated"
ORIGINAL = "original"


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Matrix:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Matrix(rng.uniform(-bound, bound, size=(fan_in, fan_out)))


def fusion_weight_names() -> list[str]:
    names = ["enc_w1", "enc_b1", "enc_w2", "enc_b2"]
    names += [f"enc_res{i}" for i in range(1, N_RESIDUAL + 1)]
    names += ["dec_w1", "dec_b1", "dec_w2", "dec_b2"]
    names += [f"dec_res{i}" for i in range(1, N_RESIDUAL + 1)]
    names += ["out_w", "out_b"]
    return names


@dataclass(frozen=True)
class BmpnnBlock:
    """Weights of one feature extractor: leading MLP plus six residual
    propagation layers."""

    w1: Matrix
    b1: Matrix
    w2: Matrix
    b2: Matrix
    residual: tuple[Matrix, ...]


@dataclass
class FusionParams:
    """All learnable weights of the blender; ``dim`` is the feature
    width used throughout (the decoder input is 4*dim wide)."""

    dim: int
    seed: int
    weights: dict[str, Matrix] = field(repr=False)

    def __post_init__(self):
        expected = self.expected_shapes(self.dim)
        for name in fusion_weight_names():
            got = self.weights[name].shape
            if got != expected[name]:
                raise ValueError(f"weight {name} has shape {got}, expected {expected[name]}")

    @staticmethod
    def expected_shapes(dim: int) -> dict[str, tuple[int, int]]:
        shapes = {
            "enc_w1": (3, dim), "enc_b1": (1, dim),
            "enc_w2": (dim, dim), "enc_b2": (1, dim),
            "dec_w1": (4 * dim, dim), "dec_b1": (1, dim),
            "dec_w2": (dim, dim), "dec_b2": (1, dim),
            "out_w": (dim, 3), "out_b": (1, 3),
        }
        for i in range(1, N_RESIDUAL + 1):
            shapes[f"enc_res{i}"] = (dim, dim)
            shapes[f"dec_res{i}"] = (dim, dim)
        return shapes

    @classmethod
    def initialize(cls, dim: int = 32, seed: int = 0) -> "FusionParams":
        rng = np.random.default_rng(seed)
        shapes = cls.expected_shapes(dim)
        weights: dict[str, Matrix] = {}
        for name in fusion_weight_names():
            r, c = shapes[name]
            if "_b" in name:
                weights[name] = Matrix.zeros(r, c)
            else:
                weights[name] = _glorot(rng, r, c)
        return cls(dim, seed, weights)

    def matrices(self) -> list[tuple[str, Matrix]]:
        return [(name, self.weights[name]) for name in fusion_weight_names()]

    def encoder(self) -> BmpnnBlock:
        w = self.weights
        return BmpnnBlock(
            w["enc_w1"], w["enc_b1"], w["enc_w2"], w["enc_b2"],
            tuple(w[f"enc_res{i}"] for i in range(1, N_RESIDUAL + 1)),
        )

    def decoder(self) -> BmpnnBlock:
        w = self.weights
        return BmpnnBlock(
            w["dec_w1"], w["dec_b1"], w["dec_w2"], w["dec_b2"],
            tuple(w[f"dec_res{i}"] for i in range(1, N_RESIDUAL + 1)),
        )


@dataclass(frozen=True)
class AlignedPair:
    """The two vertex sets in a common indexing, plus the shared
    connectivity. ``provenance[i]`` records how slot i of the aligned
    second mesh was filled: permuted, propagated or original."""

    v0: np.ndarray
    v1_aligned: np.ndarray
    adjacency: np.ndarray
    faces: tuple
    provenance: tuple


@dataclass(frozen=True)
class BlendedMesh:
    """Synthesized vertices at time t; faces and adjacency are the first
    mesh's, bit-exactly."""

    vertices: Matrix
    faces: tuple
    adjacency: np.ndarray
    t: float

    def to_mesh(self) -> TriMesh:
        return TriMesh(self.vertices.data, self.faces)


def align(g0: TriMesh, g1: TriMesh, refinement: RefinementResult) -> AlignedPair:
    """Reorder g1's vertices into g0's indexing using the refinement
    outcome.

    Matched slots copy the corresponding g1 coordinates; the rest are
    filled by repeated passes assigning each empty slot the mean of its
    already-filled neighbors, and any slot never reached copies g0's own
    coordinate.
    """
    if g0.n != g1.n:
        raise MeshError(f"vertex counts differ: {g0.n} vs {g1.n}")
    n = g0.n
    v1 = np.asarray(g1.vertices)
    if refinement.kind == EXACT:
        inv = refinement.permutation.inverse().mapping
        aligned = v1[inv]  # P^T V_1
        provenance = (PERMUTED,) * n
        return AlignedPair(
            np.asarray(g0.vertices), aligned, np.asarray(g0.adjacency), g0.faces, provenance
        )

    if refinement.kind == PARTIAL:
        pairs = dict(refinement.pairs or {})
    else:  # FALLBACK: keep injective rows of the binarized matrix
        hard = np.asarray(refinement.fallback.matrix)
        claims = hard.argmax(axis=1)  # second-mesh vertex -> first-mesh claim
        col_counts = np.bincount(claims, minlength=n)
        pairs = {int(claims[u1]): int(u1) for u1 in range(n) if col_counts[claims[u1]] == 1}

    aligned = np.array(g0.vertices, dtype=np.float64)
    state = np.full(n, ORIGINAL, dtype=object)
    filled = np.zeros(n, dtype=bool)
    for u0, u1 in pairs.items():
        aligned[u0] = v1[u1]
        state[u0] = PERMUTED
        filled[u0] = True
    adj = np.asarray(g0.adjacency, dtype=np.float64)
    for _ in range(n):
        if filled.all():
            break
        counts = adj @ filled.astype(np.float64)
        reachable = (~filled) & (counts > 0)
        if not reachable.any():
            break
        sums = adj[reachable] @ np.where(filled[:, None], aligned, 0.0)
        aligned[reachable] = sums / counts[reachable, None]
        state[reachable] = PROPAGATED
        filled[reachable] = True
    return AlignedPair(
        np.asarray(g0.vertices), aligned, np.asarray(g0.adjacency), g0.faces, tuple(state)
    )


def normalized_propagation(adjacency) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    a_hat = np.asarray(adjacency, dtype=np.float64) + np.eye(len(adjacency))
    d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return d_inv_sqrt[:, None] * a_hat * d_inv_sqrt[None, :]


def bmpnn(v: Matrix, adjacency, block: BmpnnBlock) -> Matrix:
    """Leading MLP then six residual layers h(V) = relu(S V W) + V,
    where S is the normalized propagation matrix of the adjacency."""
    prop = Matrix(normalized_propagation(adjacency))
    return _bmpnn(v, prop, block)


def _bmpnn(v: Matrix, prop: Matrix, block: BmpnnBlock) -> Matrix:
    h = nm.relu(v @ block.w1 + block.b1) @ block.w2 + block.b2
    for w in block.residual:
        h = nm.relu(prop @ h @ w) + h
    return h


def encoder_features(aligned: AlignedPair, params: FusionParams) -> tuple[Matrix, Matrix]:
    """Shared-weight encoder features of both aligned vertex sets."""
    prop = Matrix(normalized_propagation(aligned.adjacency))
    enc = params.encoder()
    return _bmpnn(Matrix(aligned.v0), prop, enc), _bmpnn(Matrix(aligned.v1_aligned), prop, enc)


def linear_feature_blend(f0: Matrix, f1: Matrix, t: float) -> Matrix:
    """(1 - t) f0 + t f1; reproduces f0 exactly at t=0 and f1 at t=1."""
    return (1.0 - float(t)) * f0 + float(t) * f1


def blend(aligned: AlignedPair, t: float, params: FusionParams) -> BlendedMesh:
    """Encode both vertex sets, linearly blend, append the time channel,
    decode and project to coordinates."""
    t = float(t)
    n = aligned.v0.shape[0]
    prop = Matrix(normalized_propagation(aligned.adjacency))
    enc = params.encoder()
    f0 = _bmpnn(Matrix(aligned.v0), prop, enc)
    f1 = _bmpnn(Matrix(aligned.v1_aligned), prop, enc)
    lb = linear_feature_blend(f0, f1, t)
    time_block = Matrix.full(n, params.dim, t)
    z = nm.concat_cols(f0, f1, lb, time_block)
    h = _bmpnn(z, prop, params.decoder())
    out = h @ params.weights["out_w"] + params.weights["out_b"]
    return BlendedMesh(out, aligned.faces, aligned.adjacency, t)


# ---------------------------------------------------------------------------
# Checkpoints


def _shapes_from_header(header: dict) -> list[tuple[int, int]]:
    try:
        dim = int(header["d"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid header: {header}") from exc
    shapes = FusionParams.expected_shapes(dim)
    return [shapes[name] for name in fusion_weight_names()]


def save_fusion_params(params: FusionParams, path) -> None:
    header = {"d": params.dim, "seed": params.seed}
    write_checkpoint(path, MAGIC, header, [m.data for _, m in params.matrices()])


def load_fusion_params(path) -> FusionParams:
    header, arrays = read_checkpoint(path, MAGIC, _shapes_from_header)
    dim = int(header["d"])
    weights = {name: Matrix(arr) for name, arr in zip(fusion_weight_names(), arrays)}
    return FusionParams(dim=dim, seed=int(header["seed"]), weights=weights)
