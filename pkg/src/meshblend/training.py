"""Losses, sampling protocols, the synthetic sequence generator and the
optimization loops for both networks.

Correspondence training samples a frame, relabels it by a random
permutation and penalizes the predicted match for violating the two
adjacency conjugation identities and the two orthogonality identities
(four Frobenius norms). Blending training cycles through interpolation,
future and past extrapolation triplets and penalizes a symmetric
nearest-neighbor (Chamfer) distance to the target frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import numeric as nm
from .correspondence import CorrespondenceParams, rbmpnn_forward, save_correspondence_params
from .fusion import FusionParams, align, blend, save_fusion_params
from .mesh import MeshError, MotionSequence, Permutation, TriMesh, apply_permutation, load_sequence, save_sequence
from .numeric import Matrix, NonFiniteError, ShapeError, Tape, backward
from .refinement import EXACT, RefinementResult, RefinementStats, conditional_refine
from .shapes import icosphere, torus_grid

__all__ = [
    "TASKS",
    "TrainingTriplet",
    "TrainConfig",
    "DatasetSpec",
    "Dataset",
    "TrainingDiverged",
    "frobenius",
    "correspondence_loss",
    "chamfer_loss",
    "sample_correspondence_batch",
    "sample_blend_triplet",
    "generate_synthetic_dataset",
    "save_dataset",
    "load_dataset",
    "train_correspondence",
    "train_blending",
    "eval_correspondence",
    "linear_blend_baseline",
]

TASKS = ("interpolate", "future", "past")


class TrainingDiverged(RuntimeError):
    """Raised when a training step produces a non-finite loss."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


# ---------------------------------------------------------------------------
# Losses


def frobenius(m: Matrix) -> Matrix:
    return nm.sqrt(nm.total(nm.mul(m, m)))


def correspondence_loss(p_hat: Matrix, a0: Matrix, a1: Matrix) -> Matrix:
    """Sum of four Frobenius norms: both adjacency conjugation residuals
    and both orthogonality residuals of the estimated permutation."""
    n = p_hat.rows
    if p_hat.shape != (n, n) or a0.shape != (n, n) or a1.shape != (n, n):
        raise ShapeError(
            f"correspondence_loss needs three n x n matrices, got "
            f"{p_hat.shape}, {a0.shape}, {a1.shape}"
        )
    eye = Matrix.identity(n)
    pt = p_hat.T
    loss = frobenius(p_hat @ a0 @ pt - a1)
    loss = loss + frobenius(pt @ a1 @ p_hat - a0)
    loss = loss + frobenius(p_hat @ pt - eye)
    loss = loss + frobenius(pt @ p_hat - eye)
    return loss


def chamfer_loss(v_pred: Matrix, v_gt: Matrix) -> Matrix:
    """Mean squared distance to the nearest point, summed over both
    directions. Gradients flow through the selected nearest pairs only."""
    if v_pred.rows < 1 or v_gt.rows < 1:
        raise ShapeError("chamfer_loss needs non-empty point sets")
    d = nm.pairwise_sqdist(v_pred, v_gt)
    fwd = nm.total(nm.row_min(d)) * (1.0 / v_pred.rows)
    rev = nm.total(nm.row_min(d.T)) * (1.0 / v_gt.rows)
    return fwd + rev


# ---------------------------------------------------------------------------
# Sampling


@dataclass(frozen=True)
class TrainingTriplet:
    """Three frames of one sequence plus the blending task built on them.

    The second input mesh is relabeled by ``perm``; ``t`` follows the
    task's time formula, so interpolation lands in (0, 1), future
    extrapolation above 1 and past extrapolation below 0.
    """

    g_a: TriMesh
    g_b: TriMesh
    g_c: TriMesh
    t_a: int
    t_b: int
    t_c: int
    task: str
    t: float
    perm: Permutation
    first: TriMesh
    second_permuted: TriMesh
    target: TriMesh


def _triplet_time(task: str, t_a: int, t_b: int, t_c: int) -> float:
    if task == "interpolate":
        return (t_b - t_a) / (t_c - t_a)
    if task == "future":
        return (t_c - t_a) / (t_b - t_a)
    if task == "past":
        return (t_a - t_b) / (t_c - t_b)
    raise ValueError(f"unknown task {task!r}")


def sample_correspondence_batch(
    sequences: list[MotionSequence], rng: np.random.Generator
) -> tuple[TriMesh, TriMesh, Permutation]:
    """Uniform sequence, uniform frame, uniform random relabeling; the
    returned pair satisfies A1 = P A0 P^T by construction."""
    if not sequences:
        raise ValueError("empty dataset")
    seq = sequences[rng.integers(len(sequences))]
    g0 = seq.mesh(int(rng.integers(len(seq))))
    p = Permutation.random(g0.n, rng)
    return g0, apply_permutation(g0, p), p


def sample_blend_triplet(
    sequences: list[MotionSequence], rng: np.random.Generator, task: str
) -> TrainingTriplet:
    """Three distinct sorted frames of a random sequence, assembled into
    one of the three blending tasks; sequences shorter than 3 frames are
    resampled."""
    if not sequences:
        raise ValueError("empty dataset")
    eligible = [s for s in sequences if len(s) >= 3]
    if not eligible:
        raise ValueError("no sequence has >= 3 frames")
    while True:
        seq = sequences[rng.integers(len(sequences))]
        if len(seq) >= 3:
            break
    picks = np.sort(rng.choice(len(seq), size=3, replace=False))
    ia, ib, ic = (int(x) for x in picks)
    g_a, g_b, g_c = seq.mesh(ia), seq.mesh(ib), seq.mesh(ic)
    t_a, t_b, t_c = (seq.frame_indices[i] for i in (ia, ib, ic))
    t = _triplet_time(task, t_a, t_b, t_c)
    if task == "interpolate":
        first, second, target = g_a, g_c, g_b
    elif task == "future":
        first, second, target = g_a, g_b, g_c
    else:
        first, second, target = g_b, g_c, g_a
    perm = Permutation.random(first.n, rng)
    return TrainingTriplet(
        g_a, g_b, g_c, t_a, t_b, t_c, task, t, perm,
        first, apply_permutation(second, perm), target,
    )


# ---------------------------------------------------------------------------
# Synthetic dataset


@dataclass(frozen=True)
class DatasetSpec:
    """Shape family, sequence/frame counts and deformation bounds for
    the procedural generator."""

    sequences: int = 4
    frames: int = 8
    shape: str = "icosphere"
    level: int = 1
    amplitude: float = 0.3
    max_step: float = 0.15
    split: float = 0.8

    def base_mesh(self) -> TriMesh:
        if self.shape == "icosphere":
            return icosphere(self.level)
        if self.shape == "torus":
            size = 4 + 4 * self.level
            return torus_grid(size, size)
        raise ValueError(f"unknown shape {self.shape!r}")


@dataclass
class Dataset:
    sequences: list[MotionSequence]
    labels: list[str]  # "train" | "test" per sequence

    @property
    def train(self) -> list[MotionSequence]:
        return [s for s, l in zip(self.sequences, self.labels) if l == "train"]

    @property
    def test(self) -> list[MotionSequence]:
        return [s for s, l in zip(self.sequences, self.labels) if l == "test"]


def _displacement_field(base: np.ndarray, rng: np.random.Generator):
    """Random smooth displacement field: a twist-like swirl, a vertical
    bending wave and an anisotropic scaling term, each on its own
    temporal sinusoid. Linear in the master amplitude."""
    x, y, z = base[:, 0], base[:, 1], base[:, 2]
    swirl = np.stack([-y * z, x * z, np.zeros_like(z)], axis=1)
    bendwave = np.stack([np.zeros_like(x), np.zeros_like(x), np.sin(np.pi * x)], axis=1)
    axis_w = rng.uniform(-1.0, 1.0, size=3)
    aniso = base * axis_w[None, :]
    gains = rng.uniform(0.5, 1.0, size=3)
    freqs = rng.uniform(0.5, 1.5, size=3)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=3)

    def u(tau: float) -> np.ndarray:
        waves = np.sin(2.0 * np.pi * freqs * tau + phases) * gains
        return waves[0] * swirl + waves[1] * bendwave + waves[2] * aniso

    return u


def generate_synthetic_dataset(spec: DatasetSpec, rng: np.random.Generator) -> Dataset:
    """Procedurally deformed copies of a watertight base mesh.

    Connectivity is constant across frames; the per-frame displacement
    is rescaled so no vertex moves more than ``spec.max_step`` between
    consecutive frames. Split is 80/20 (``spec.split``) by sequence.
    """
    if spec.sequences < 1 or spec.frames < 1:
        raise ValueError("need at least one sequence and one frame")
    base = spec.base_mesh()
    base_v = np.asarray(base.vertices)
    sequences = []
    for _ in range(spec.sequences):
        u = _displacement_field(base_v, rng)
        taus = np.linspace(0.0, 1.0, spec.frames)
        disp = [spec.amplitude * u(float(tau)) for tau in taus]
        if spec.frames > 1:
            step = max(
                float(np.linalg.norm(d1 - d0, axis=1).max())
                for d0, d1 in zip(disp, disp[1:])
            )
            if step > spec.max_step:
                scale = spec.max_step / step
                disp = [d * scale for d in disp]
        frames = [base_v + d for d in disp]
        sequences.append(MotionSequence(frames, base.faces, list(range(spec.frames))))
    if spec.sequences == 1:
        n_train = 1
    else:
        n_train = min(spec.sequences - 1, max(1, round(spec.split * spec.sequences)))
    labels = ["train" if i < n_train else "test" for i in range(spec.sequences)]
    return Dataset(sequences, labels)


def save_dataset(dataset: Dataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (seq, label) in enumerate(zip(dataset.sequences, dataset.labels)):
        name = f"seq_{i:05d}"
        save_sequence(seq, directory / name)
        lines.append(f"{name} {label}")
    (directory / "split.txt").write_text("\n".join(lines) + "\n")


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    split_path = directory / "split.txt"
    if not split_path.exists():
        raise MeshError(f"{directory}: missing split.txt")
    sequences, labels = [], []
    for line in split_path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        name, label = line.split()
        sequences.append(load_sequence(directory / name))
        labels.append(label)
    return Dataset(sequences, labels)


# ---------------------------------------------------------------------------
# Optimizers


@dataclass
class TrainConfig:
    """Optimization settings; everything here is seeded and replayable."""

    seed: int = 0
    steps: int = 100
    lr: float = 1e-3
    optimizer: str = "adam"  # "adam" | "sgd"
    split: float = 0.8
    checkpoint_every: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if not 0.0 < self.split < 1.0:
            raise ValueError("split must be in (0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_file(self, path) -> None:
        lines = [f"{f.name}={getattr(self, f.name)}" for f in fields(self)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        kwargs = {}
        casts = {f.name: f.type for f in fields(cls)}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in casts:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            if key == "optimizer":
                kwargs[key] = value
            elif key in ("seed", "steps", "checkpoint_every"):
                kwargs[key] = int(value)
            else:
                kwargs[key] = float(value)
        return cls(**kwargs)


class _Sgd:
    def __init__(self, cfg: TrainConfig):
        self.lr = cfg.lr

    def step(self, weights: dict[str, Matrix], grads) -> None:
        for name, w in weights.items():
            weights[name] = Matrix(w.data - self.lr * grads.get(w))


class _Adam:
    def __init__(self, cfg: TrainConfig):
        self.lr = cfg.lr
        self.b1 = cfg.adam_beta1
        self.b2 = cfg.adam_beta2
        self.eps = cfg.adam_eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, weights: dict[str, Matrix], grads) -> None:
        self.t += 1
        for name, w in weights.items():
            g = grads.get(w)
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m = self.b1 * m + (1.0 - self.b1) * g
            v = self.b2 * v + (1.0 - self.b2) * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1.0 - self.b1 ** self.t)
            v_hat = v / (1.0 - self.b2 ** self.t)
            weights[name] = Matrix(w.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))


def _make_optimizer(cfg: TrainConfig):
    return _Adam(cfg) if cfg.optimizer == "adam" else _Sgd(cfg)


# ---------------------------------------------------------------------------
# Training loops


def train_correspondence(
    sequences: list[MotionSequence],
    cfg: TrainConfig,
    params: CorrespondenceParams | None = None,
    checkpoint_path=None,
):
    """Sample permuted pairs and descend the four-term matching loss.

    The loss is evaluated on the pre-sigmoid correspondence (binarization
    is unaffected since the sigmoid is monotone). Returns the trained
    params and a history of (step, task, loss) rows.
    """
    if params is None:
        params = CorrespondenceParams.initialize(seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = _make_optimizer(cfg)
    history: list[tuple[int, str, float]] = []
    for step in range(cfg.steps):
        g0, g1, _ = sample_correspondence_batch(sequences, rng)
        a0 = Matrix(np.asarray(g0.adjacency, dtype=np.float64))
        a1 = Matrix(np.asarray(g1.adjacency, dtype=np.float64))
        try:
            with Tape() as tape:
                soft = rbmpnn_forward(g0, g1, params)
                loss = correspondence_loss(soft.logits, a0, a1)
        except NonFiniteError as exc:
            raise TrainingDiverged(step, f"step {step}: {exc}") from exc
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(step)
        history.append((step, "corr", value))
        grads = backward(loss, tape)
        opt.step(params.weights, grads)
        if checkpoint_path and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_correspondence_params(params, f"{checkpoint_path}.step{step + 1:06d}")
    return params, history


def _oracle_alignment(triplet: TrainingTriplet) -> RefinementResult:
    n = triplet.first.n
    pairs = {int(triplet.perm.mapping[i]): i for i in range(n)}
    return RefinementResult(
        EXACT,
        RefinementStats(matched=n, rounds=0, verified=n),
        permutation=triplet.perm,
        pairs=pairs,
    )


def train_blending(
    sequences: list[MotionSequence],
    cfg: TrainConfig,
    params: FusionParams | None = None,
    corr_params: CorrespondenceParams | None = None,
    checkpoint_path=None,
):
    """Round-robin over the three blending tasks, one triplet per step.

    Alignment uses the known sampling permutation (oracle mode) unless
    ``corr_params`` is given, in which case the trained matcher plus
    refinement aligns the inputs and gradients flow only through the
    fusion weights.
    """
    if params is None:
        params = FusionParams.initialize(seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = _make_optimizer(cfg)
    history: list[tuple[int, str, float]] = []
    for step in range(cfg.steps):
        task = TASKS[step % 3]
        triplet = sample_blend_triplet(sequences, rng, task)
        if corr_params is None:
            refinement = _oracle_alignment(triplet)
        else:
            soft = rbmpnn_forward(triplet.first, triplet.second_permuted, corr_params)
            refinement = conditional_refine(triplet.first, triplet.second_permuted, soft)
        aligned = align(triplet.first, triplet.second_permuted, refinement)
        target = Matrix(np.asarray(triplet.target.vertices))
        try:
            with Tape() as tape:
                blended = blend(aligned, triplet.t, params)
                loss = chamfer_loss(blended.vertices, target)
        except NonFiniteError as exc:
            raise TrainingDiverged(step, f"step {step}: {exc}") from exc
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(step)
        history.append((step, task, value))
        grads = backward(loss, tape)
        opt.step(params.weights, grads)
        if checkpoint_path and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_fusion_params(params, f"{checkpoint_path}.step{step + 1:06d}")
    return params, history


def linear_blend_baseline(aligned, t: float) -> np.ndarray:
    """Plain per-vertex linear interpolation of the aligned coordinates."""
    return (1.0 - t) * aligned.v0 + t * aligned.v1_aligned


def eval_correspondence(
    params: CorrespondenceParams,
    sequences: list[MotionSequence],
    samples: int,
    rng: np.random.Generator,
) -> dict[str, float]:
    """Verified-vertex fraction, exact-recovery rate and mean matching
    loss over freshly sampled permuted pairs. Correctness is adjacency
    consistency, so any automorphism-equivalent answer counts."""
    verified_frac = []
    exact = 0
    losses = []
    for _ in range(samples):
        g0, g1, _ = sample_correspondence_batch(sequences, rng)
        soft = rbmpnn_forward(g0, g1, params)
        a0 = Matrix(np.asarray(g0.adjacency, dtype=np.float64))
        a1 = Matrix(np.asarray(g1.adjacency, dtype=np.float64))
        losses.append(correspondence_loss(soft.logits, a0, a1).item())
        result = conditional_refine(g0, g1, soft)
        verified_frac.append(result.stats.verified / g0.n)
        if result.is_exact:
            exact += 1
    return {
        "samples": float(samples),
        "verified_fraction": float(np.mean(verified_frac)),
        "exact_rate": exact / samples,
        "mean_loss": float(np.mean(losses)),
    }
