"""Dense float64 matrix arithmetic with reverse-mode differentiation.

A :class:`Matrix` wraps an immutable 2-D float64 array. Operations are
pure functions; while a :class:`Tape` is active on the current thread
they additionally record how to push gradients back to their inputs, and
:func:`backward` replays those records from a scalar loss to produce one
gradient per matrix that influenced it.

The primitive set is deliberately small: exactly what the correspondence
and fusion networks and their losses need. There is no general
broadcasting; the only broadcast form is adding a 1-row bias to every row.
"""

from __future__ import annotations

import threading

import numpy as np
from scipy.special import expit

__all__ = [
    "Matrix",
    "Tape",
    "Gradients",
    "ShapeError",
    "NonFiniteError",
    "backward",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "relu",
    "sigmoid",
    "l2_normalize_rows",
    "sinkhorn",
    "concat_cols",
    "total",
    "sqrt",
    "row_min",
    "pairwise_sqdist",
]

_NORM_EPS = 1e-12
_SUM_FLOOR = 1e-300


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's precondition."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or infinity."""


class Matrix:
    """Immutable 2-D float64 matrix.

    Entries are validated to be finite on construction, so any exported
    operation that would produce NaN/Inf raises :class:`NonFiniteError`
    instead of propagating garbage.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, order="C")
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"Matrix must be 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteError("matrix contains NaN or Inf entries")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return cls(np.zeros((rows, cols)))

    @classmethod
    def ones(cls, rows: int, cols: int) -> "Matrix":
        return cls(np.ones((rows, cols)))

    @classmethod
    def identity(cls, n: int) -> "Matrix":
        return cls(np.eye(n))

    @classmethod
    def full(cls, rows: int, cols: int, value: float) -> "Matrix":
        return cls(np.full((rows, cols), float(value)))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def T(self) -> "Matrix":
        return transpose(self)

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 matrix, got {self.shape}")
        return float(self.data[0, 0])

    def __setattr__(self, name, value):
        raise AttributeError("Matrix is immutable")

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols})"

    # Arithmetic sugar; Matrix * scalar scales, Matrix * Matrix is
    # elementwise. Identity-based hashing is intentional: parameters are
    # distinct objects and gradients are looked up per object.
    def __add__(self, other: "Matrix") -> "Matrix":
        return add(self, other)

    def __sub__(self, other: "Matrix") -> "Matrix":
        return sub(self, other)

    def __matmul__(self, other: "Matrix") -> "Matrix":
        return matmul(self, other)

    def __mul__(self, other):
        if isinstance(other, Matrix):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self) -> "Matrix":
        return scale(self, -1.0)


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Use as a context manager around the forward computation; exactly one
    tape may be active per thread (single-writer). Records hold the
    output matrix, its input matrices and a closure mapping the output
    gradient to input gradients.
    """

    def __init__(self):
        self._records: list[tuple[Matrix, tuple[Matrix, ...], object]] = []

    def __enter__(self) -> "Tape":
        stack = _tapes()
        if stack:
            raise RuntimeError("a Tape is already active on this thread")
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tapes().pop()
        return False

    def __len__(self) -> int:
        return len(self._records)


_TLS = threading.local()


def _tapes() -> list[Tape]:
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = []
        _TLS.stack = stack
    return stack


def _active() -> Tape | None:
    stack = _tapes()
    return stack[-1] if stack else None


def _record(out: Matrix, inputs: tuple[Matrix, ...], bwd) -> None:
    tape = _active()
    if tape is not None:
        tape._records.append((out, inputs, bwd))


class Gradients:
    """Per-matrix gradients produced by :func:`backward`.

    Lookup is by object identity; a matrix that never influenced the
    loss gets a zero gradient of its own shape.
    """

    def __init__(self, table: dict[int, np.ndarray]):
        self._table = table

    def get(self, m: Matrix) -> np.ndarray:
        g = self._table.get(id(m))
        if g is None:
            return np.zeros(m.shape)
        return g

    def __getitem__(self, m: Matrix) -> np.ndarray:
        return self.get(m)

    def __contains__(self, m: Matrix) -> bool:
        return id(m) in self._table


def backward(loss: Matrix, tape: Tape) -> Gradients:
    """Accumulate d(loss)/d(input) for every matrix on the tape.

    ``loss`` must be 1x1 and must have been produced while ``tape`` was
    active; otherwise there is nothing to differentiate through.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"loss must be a 1x1 matrix, got {loss.shape}")
    produced = {id(out) for out, _, _ in tape._records}
    if id(loss) not in produced:
        raise ValueError("loss was not produced on this tape")

    table: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for out, inputs, bwd in reversed(tape._records):
        g = table.get(id(out))
        if g is None:
            continue
        for inp, gin in zip(inputs, bwd(g)):
            if gin is None:
                continue
            acc = table.get(id(inp))
            if acc is None:
                table[id(inp)] = gin.copy() if gin.base is not None else gin
            else:
                table[id(inp)] = acc + gin
    return Gradients(table)


# ---------------------------------------------------------------------------
# Primitives


def add(a: Matrix, b: Matrix) -> Matrix:
    """Elementwise sum; a 1-row operand is broadcast to every row (bias)."""
    if a.shape == b.shape:
        out = Matrix(a.data + b.data)
        _record(out, (a, b), lambda g: (g, g))
        return out
    if b.rows == 1 and b.cols == a.cols:
        out = Matrix(a.data + b.data)
        _record(out, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)))
        return out
    if a.rows == 1 and a.cols == b.cols:
        out = Matrix(a.data + b.data)
        _record(out, (a, b), lambda g: (g.sum(axis=0, keepdims=True), g))
        return out
    raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")


def sub(a: Matrix, b: Matrix) -> Matrix:
    if a.shape != b.shape:
        raise ShapeError(f"cannot subtract shapes {a.shape} and {b.shape}")
    out = Matrix(a.data - b.data)
    _record(out, (a, b), lambda g: (g, -g))
    return out


def mul(a: Matrix, b: Matrix) -> Matrix:
    """Elementwise (Hadamard) product of same-shape matrices."""
    if a.shape != b.shape:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    out = Matrix(ad * bd)
    _record(out, (a, b), lambda g: (g * bd, g * ad))
    return out


def scale(a: Matrix, c: float) -> Matrix:
    c = float(c)
    out = Matrix(a.data * c)
    _record(out, (a,), lambda g: (g * c,))
    return out


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.cols != b.rows:
        raise ShapeError(f"matmul needs inner dims to agree: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = Matrix(ad @ bd)
    _record(out, (a, b), lambda g: (g @ bd.T, ad.T @ g))
    return out


def transpose(a: Matrix) -> Matrix:
    out = Matrix(a.data.T)
    _record(out, (a,), lambda g: (g.T,))
    return out


def relu(a: Matrix) -> Matrix:
    """Elementwise max(0, x); the subgradient at exactly 0 is 0."""
    mask = a.data > 0.0
    out = Matrix(np.where(mask, a.data, 0.0))
    _record(out, (a,), lambda g: (g * mask,))
    return out


def sigmoid(a: Matrix) -> Matrix:
    """Elementwise logistic function, saturation-safe at large |x|."""
    s = expit(a.data)
    out = Matrix(s)
    _record(out, (a,), lambda g: (g * s * (1.0 - s),))
    return out


def l2_normalize_rows(a: Matrix) -> Matrix:
    """Divide each row by its Euclidean norm.

    Rows with norm below 1e-12 pass through unchanged and receive zero
    gradient; the true derivative is undefined there.
    """
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    live = norms >= _NORM_EPS
    safe = np.where(live, norms, 1.0)
    out_d = np.where(live, a.data / safe, a.data)
    out = Matrix(out_d)

    def bwd(g):
        dots = (g * out_d).sum(axis=1, keepdims=True)
        return (np.where(live, (g - dots * out_d) / safe, 0.0),)

    _record(out, (a,), bwd)
    return out


def sinkhorn(a: Matrix, iters: int = 20, tau: float = 1.0) -> Matrix:
    """Drive exp(a/tau) toward a doubly stochastic matrix.

    Exponentiates elementwise (the input may be negative), then
    alternates row-sum and column-sum normalization ``iters`` times,
    ending on the column step. Output entries lie in (0, 1).
    """
    if a.rows != a.cols:
        raise ShapeError(f"sinkhorn needs a square matrix, got {a.shape}")
    if iters < 0:
        raise ValueError("iters must be >= 0")
    with np.errstate(over="ignore"):
        e = np.exp(a.data / tau)
    if not np.isfinite(e).all():
        raise NonFiniteError("sinkhorn: exp(a/tau) overflowed")
    m = e
    halves: list[tuple[int, np.ndarray, np.ndarray]] = []
    for _ in range(iters):
        for axis in (1, 0):
            s = np.maximum(m.sum(axis=axis, keepdims=True), _SUM_FLOOR)
            m = m / s
            halves.append((axis, m, s))
    out = Matrix(m)

    def bwd(g):
        for axis, normed, s in reversed(halves):
            g = (g - (g * normed).sum(axis=axis, keepdims=True)) / s
        return ((g * e) / tau,)

    _record(out, (a,), bwd)
    return out


def concat_cols(*ms: Matrix) -> Matrix:
    """Column-wise concatenation of matrices with equal row counts."""
    if not ms:
        raise ShapeError("concat_cols needs at least one matrix")
    rows = ms[0].rows
    if any(m.rows != rows for m in ms):
        raise ShapeError("concat_cols needs equal row counts")
    out = Matrix(np.hstack([m.data for m in ms]))
    offsets = np.cumsum([m.cols for m in ms])[:-1]
    _record(out, tuple(ms), lambda g: tuple(np.hsplit(g, offsets)))
    return out


def total(a: Matrix) -> Matrix:
    """Sum of all entries, as a 1x1 matrix."""
    rows, cols = a.shape
    out = Matrix([[a.data.sum()]])
    _record(out, (a,), lambda g: (np.full((rows, cols), g[0, 0]),))
    return out


def sqrt(a: Matrix) -> Matrix:
    """Elementwise square root; the gradient is clamped near 0."""
    if (a.data < 0.0).any():
        raise ValueError("sqrt of a negative entry")
    r = np.sqrt(a.data)
    out = Matrix(r)
    denom = 2.0 * np.maximum(r, _NORM_EPS)
    _record(out, (a,), lambda g: (g / denom,))
    return out


def row_min(a: Matrix) -> Matrix:
    """Per-row minimum as an n x 1 column.

    The gradient flows only through the selected entry; ties break
    toward the lowest column index.
    """
    idx = a.data.argmin(axis=1)
    out = Matrix(a.data.min(axis=1, keepdims=True))
    rows, cols = a.shape

    def bwd(g):
        ga = np.zeros((rows, cols))
        ga[np.arange(rows), idx] = g[:, 0]
        return (ga,)

    _record(out, (a,), bwd)
    return out


def pairwise_sqdist(a: Matrix, b: Matrix) -> Matrix:
    """Squared Euclidean distances between the rows of two point sets.

    Entry (i, j) is ||a_i - b_j||^2, computed from explicit differences
    so identical rows give an exact 0 and every entry is nonnegative.
    """
    if a.cols != b.cols:
        raise ShapeError(f"point dimensions differ: {a.shape} vs {b.shape}")
    diff = a.data[:, None, :] - b.data[None, :, :]
    out = Matrix(np.einsum("ijk,ijk->ij", diff, diff))

    def bwd(g):
        ga = 2.0 * np.einsum("ij,ijk->ik", g, diff)
        gb = -2.0 * np.einsum("ij,ijk->jk", g, diff)
        return (ga, gb)

    _record(out, (a, b), bwd)
    return out
