"""Shared test utilities: finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from meshblend.numeric import Matrix, Tape, backward


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-based relative error between two gradient arrays."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / max(na, nb, 1e-12))


def fd_gradient(loss_fn, w: Matrix, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar loss w.r.t. one matrix.

    ``loss_fn`` maps a replacement Matrix for ``w`` to a 1x1 Matrix.
    """
    base = np.asarray(w.data)
    fd = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    for _ in it:
        ij = it.multi_index
        plus = base.copy()
        plus[ij] += h
        minus = base.copy()
        minus[ij] -= h
        fd[ij] = (loss_fn(Matrix(plus)).item() - loss_fn(Matrix(minus)).item()) / (2.0 * h)
    return fd


def check_gradients(make_loss, weights: dict[str, Matrix], h: float = 1e-5) -> float:
    """Worst norm-based relative error between tape gradients and central
    finite differences over a dict of named parameters.

    ``make_loss`` maps the (possibly modified) weights dict to a scalar
    Matrix; it is re-run from scratch for every probe.
    """
    with Tape() as tape:
        loss = make_loss(weights)
    grads = backward(loss, tape)
    worst = 0.0
    for name, w in weights.items():
        def loss_with(replacement: Matrix, _name=name) -> Matrix:
            probe = dict(weights)
            probe[_name] = replacement
            return make_loss(probe)

        fd = fd_gradient(loss_with, w, h)
        worst = max(worst, rel_err(grads.get(w), fd))
    return worst
