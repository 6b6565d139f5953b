"""Soft vertex correspondence between two isomorphic meshes.

The matcher runs message passing on an augmented graph: the two meshes
keep their own (blue) edges while a dense set of weighted cross (red)
edges connects every vertex of one mesh to every vertex of the other.
After K update rounds the red-edge weight matrix, transposed and passed
through a sigmoid, is the soft correspondence: entry (i, j) scores how
likely vertex i of the second mesh matches vertex j of the first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numeric as nm
from .checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from .mesh import MeshError, TriMesh
from .numeric import Matrix

__all__ = [
    "CorrespondenceParams",
    "SoftCorrespondence",
    "HardCorrespondence",
    "build_augmented",
    "rbmpnn_forward",
    "binarize",
    "save_correspondence_params",
    "load_correspondence_params",
    "MAGIC",
]

MAGIC = b"RBMPNN1"


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Matrix:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Matrix(rng.uniform(-bound, bound, size=(fan_in, fan_out)))


def weight_names(k: int) -> list[str]:
    names = ["w1", "b1", "w2", "b2", "w3", "b3"]
    for i in range(k):
        names += [f"wb{i}", f"wr{i}"]
    names.append("wt")
    return names


@dataclass
class CorrespondenceParams:
    """Learnable weights and hyperparameters of the matcher.

    ``hidden`` holds the two inner widths of the 3-layer input MLP
    (3 -> hidden[0] -> hidden[1] -> dim); ``lambda_s`` and ``lambda_r``
    weight the running average of the red-edge update.
    """

    k: int
    dim: int
    hidden: tuple[int, int]
    lambda_s: float
    lambda_r: float
    sinkhorn_iters: int
    sinkhorn_tau: float
    seed: int
    weights: dict[str, Matrix] = field(repr=False)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.lambda_s < 0 or self.lambda_r < 0:
            raise ValueError("lambda_s and lambda_r must be >= 0")
        d1, d2 = self.hidden
        expected = self.expected_shapes(self.k, self.dim, (d1, d2))
        for name in weight_names(self.k):
            got = self.weights[name].shape
            if got != expected[name]:
                raise ValueError(f"weight {name} has shape {got}, expected {expected[name]}")

    @staticmethod
    def expected_shapes(k: int, dim: int, hidden: tuple[int, int]) -> dict[str, tuple[int, int]]:
        d1, d2 = hidden
        shapes = {
            "w1": (3, d1), "b1": (1, d1),
            "w2": (d1, d2), "b2": (1, d2),
            "w3": (d2, dim), "b3": (1, dim),
        }
        for i in range(k):
            shapes[f"wb{i}"] = (dim, dim)
            shapes[f"wr{i}"] = (dim, dim)
        shapes["wt"] = (dim, dim)
        return shapes

    @classmethod
    def initialize(
        cls,
        k: int = 4,
        dim: int = 32,
        hidden: tuple[int, int] | None = None,
        lambda_s: float = 0.5,
        lambda_r: float = 0.5,
        sinkhorn_iters: int = 20,
        sinkhorn_tau: float = 1.0,
        seed: int = 0,
    ) -> "CorrespondenceParams":
        """Seeded uniform (Glorot-bound) weights, zero biases."""
        if hidden is None:
            hidden = (dim, dim)
        rng = np.random.default_rng(seed)
        shapes = cls.expected_shapes(k, dim, hidden)
        weights: dict[str, Matrix] = {}
        for name in weight_names(k):
            r, c = shapes[name]
            if name.startswith("b"):
                weights[name] = Matrix.zeros(r, c)
            else:
                weights[name] = _glorot(rng, r, c)
        return cls(k, dim, hidden, lambda_s, lambda_r, sinkhorn_iters, sinkhorn_tau, seed, weights)

    def matrices(self) -> list[tuple[str, Matrix]]:
        return [(name, self.weights[name]) for name in weight_names(self.k)]


@dataclass(frozen=True)
class SoftCorrespondence:
    """Soft match scores, oriented so row i scores matches for vertex i
    of the second mesh against every vertex of the first.

    ``matrix`` is the sigmoid output in (0, 1); ``logits`` is the same
    matrix before the sigmoid (useful for losses, and binarization is
    identical on either since sigmoid is monotone).
    """

    matrix: Matrix
    logits: Matrix


@dataclass(frozen=True)
class HardCorrespondence:
    """Row-argmax binarization: exactly one 1 per row; a valid
    permutation additionally has one 1 per column."""

    matrix: np.ndarray
    is_valid_permutation: bool


def build_augmented(g0: TriMesh, g1: TriMesh) -> Matrix:
    """2n x 2n adjacency of the augmented graph: blue blocks are the two
    mesh adjacencies, red blocks start uniform at 1/n."""
    if g0.n != g1.n:
        raise MeshError(f"vertex counts differ: {g0.n} vs {g1.n}")
    n = g0.n
    red = np.full((n, n), 1.0 / n)
    top = np.hstack([np.asarray(g0.adjacency, dtype=np.float64), red])
    bottom = np.hstack([red.T, np.asarray(g1.adjacency, dtype=np.float64)])
    return Matrix(np.vstack([top, bottom]))


def _f_init(v: Matrix, p: CorrespondenceParams) -> Matrix:
    w = p.weights
    h = nm.relu(v @ w["w1"] + w["b1"])
    h = nm.relu(h @ w["w2"] + w["b2"])
    return nm.relu(h @ w["w3"] + w["b3"])


def rbmpnn_forward(g0: TriMesh, g1: TriMesh, params: CorrespondenceParams) -> SoftCorrespondence:
    """Run K rounds of red-blue message passing and return the soft
    correspondence.

    Coordinates are centered per mesh before the input MLP so the match
    is translation-insensitive. Records onto the active tape, if any.
    """
    if g0.n != g1.n:
        raise MeshError(f"vertex counts differ: {g0.n} vs {g1.n}")
    n = g0.n
    a0 = Matrix(np.asarray(g0.adjacency, dtype=np.float64))
    a1 = Matrix(np.asarray(g1.adjacency, dtype=np.float64))
    c0 = Matrix(g0.vertices - g0.vertices.mean(axis=0, keepdims=True))
    c1 = Matrix(g1.vertices - g1.vertices.mean(axis=0, keepdims=True))

    v0 = _f_init(c0, params)
    v1 = _f_init(c1, params)
    r = Matrix.full(n, n, 1.0 / n)
    w = params.weights
    for i in range(params.k):
        wb, wr = w[f"wb{i}"], w[f"wr{i}"]
        v0_next = nm.relu(a0 @ v0 @ wb + r @ v1 @ wr)
        v1_next = nm.relu(a1 @ v1 @ wb + r.T @ v0 @ wr)
        e0 = nm.l2_normalize_rows(v0_next) @ w["wt"]
        e1 = nm.l2_normalize_rows(v1_next) @ w["wt"]
        r_hat = e0 @ e1.T
        r = params.lambda_s * nm.sinkhorn(r_hat, params.sinkhorn_iters, params.sinkhorn_tau) \
            + params.lambda_r * r
        v0, v1 = v0_next, v1_next
    logits = r.T
    return SoftCorrespondence(nm.sigmoid(logits), logits)


def _as_array(soft) -> np.ndarray:
    if isinstance(soft, SoftCorrespondence):
        return np.asarray(soft.matrix.data)
    if isinstance(soft, Matrix):
        return np.asarray(soft.data)
    return np.asarray(soft, dtype=np.float64)


def binarize(soft) -> HardCorrespondence:
    """One-hot the largest entry of every row; ties break toward the
    lowest column index."""
    arr = _as_array(soft)
    if arr.ndim != 2:
        raise ValueError("binarize needs a 2-D matrix")
    hard = np.zeros(arr.shape, dtype=np.uint8)
    hard[np.arange(arr.shape[0]), arr.argmax(axis=1)] = 1
    valid = bool((hard.sum(axis=0) == 1).all()) and arr.shape[0] == arr.shape[1]
    return HardCorrespondence(hard, valid)


# ---------------------------------------------------------------------------
# Checkpoints


def _shapes_from_header(header: dict) -> list[tuple[int, int]]:
    try:
        k = int(header["K"])
        dim = int(header["d"])
        widths = [int(x) for x in header["widths"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid header: {header}") from exc
    if len(widths) != 4 or widths[0] != 3 or widths[3] != dim:
        raise CheckpointError(f"inconsistent widths {widths} for d={dim}")
    shapes = CorrespondenceParams.expected_shapes(k, dim, (widths[1], widths[2]))
    return [shapes[name] for name in weight_names(k)]


def save_correspondence_params(params: CorrespondenceParams, path) -> None:
    d1, d2 = params.hidden
    header = {
        "K": params.k,
        "d": params.dim,
        "widths": [3, d1, d2, params.dim],
        "lambda_s": params.lambda_s,
        "lambda_r": params.lambda_r,
        "sinkhorn_iters": params.sinkhorn_iters,
        "sinkhorn_tau": params.sinkhorn_tau,
        "seed": params.seed,
    }
    write_checkpoint(path, MAGIC, header, [m.data for _, m in params.matrices()])


def load_correspondence_params(path) -> CorrespondenceParams:
    header, arrays = read_checkpoint(path, MAGIC, _shapes_from_header)
    k = int(header["K"])
    dim = int(header["d"])
    widths = [int(x) for x in header["widths"]]
    weights = {name: Matrix(arr) for name, arr in zip(weight_names(k), arrays)}
    return CorrespondenceParams(
        k=k,
        dim=dim,
        hidden=(widths[1], widths[2]),
        lambda_s=float(header["lambda_s"]),
        lambda_r=float(header["lambda_r"]),
        sinkhorn_iters=int(header["sinkhorn_iters"]),
        sinkhorn_tau=float(header["sinkhorn_tau"]),
        seed=int(header["seed"]),
        weights=weights,
    )
