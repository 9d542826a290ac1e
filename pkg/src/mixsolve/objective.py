"""Penalized negative log-likelihood and its derivatives.

The solved objective is

    f*(x) = -(1/n) sum_j log((L x)_j + delta) + sum_k x_k,    x >= 0,

whose gradient and Hessian are g = -(1/n) L^T d + 1 and
H = (1/n) L^T diag(d)^2 L with d_j = 1 / ((L x)_j + delta). ``L`` is
either held densely or through a :class:`~mixsolve.lowrank.LowRankFactor`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lowrank
from .problem import as_array

# rows per block for dense Hessian accumulation; fixes the summation order
CHUNK_ROWS = 8192
DEFAULT_LOWRANK_DELTA = 1e-8


class InfeasibleEvaluationError(ArithmeticError):
    """A guarded logarithm argument ``(Lx)_j + delta`` was not positive."""


class LikelihoodOperator:
    """Uniform access to ``L x``, ``L^T d`` and ``L^T diag(d)^2 L``.

    Parameters
    ----------
    backing : ndarray or LowRankFactor
    delta : float, optional
        Constant added inside every logarithm. Defaults to 0 for a dense
        backing and 1e-8 for a low-rank one.
    """

    def __init__(self, backing, delta=None):
        if isinstance(backing, lowrank.LowRankFactor):
            self.factor = backing
            self.dense = None
            self.n, self.m = backing.shape
            if delta is None:
                delta = DEFAULT_LOWRANK_DELTA
            if not delta > 0:
                raise ValueError("a low-rank backing needs a positive log guard delta")
        else:
            self.factor = None
            self.dense = np.asarray(as_array(backing), dtype=float)
            self.n, self.m = self.dense.shape
            if delta is None:
                delta = 0.0
            if delta < 0:
                raise ValueError("delta must be non-negative")
        self.delta = float(delta)

    @property
    def is_lowrank(self):
        return self.factor is not None

    @property
    def rank(self):
        return self.factor.rank if self.factor is not None else 0

    def apply(self, x):
        if self.factor is not None:
            return lowrank.apply(self.factor, x)
        return self.dense @ x

    def apply_transpose(self, d):
        if self.factor is not None:
            return lowrank.apply_transpose(self.factor, d)
        return self.dense.T @ d

    def gram_weighted(self, d):
        if self.factor is not None:
            return lowrank.gram_weighted(self.factor, d)
        A = self.dense
        H = np.zeros((self.m, self.m))
        for start in range(0, self.n, CHUNK_ROWS):
            block = A[start:start + CHUNK_ROWS] * d[start:start + CHUNK_ROWS, None]
            H += block.T @ block
        return 0.5 * (H + H.T)


def from_matrix(L, lowrank_approx=False, rtol=1e-10, rank=None, delta=None):
    """Build an operator for ``L``, optionally through a truncated pivoted QR."""
    if lowrank_approx:
        return LikelihoodOperator(lowrank.rrqr(L, rtol=rtol, rank=rank), delta)
    return LikelihoodOperator(L, delta)


@dataclass(frozen=True)
class DerivativeBundle:
    objective: float
    gradient: np.ndarray
    hessian: np.ndarray
    d: np.ndarray
    fitted: np.ndarray  # (L x)_j + delta


def _guarded(op, x):
    u = op.apply(x)
    if op.delta:
        u = u + op.delta
    if not np.all(u > 0):
        j = int(np.argmin(u))
        raise InfeasibleEvaluationError(f"(Lx)_{j} + delta = {u[j]!r} is not positive")
    return u


def eval_objective(op, x):
    """f*(x); raises :class:`InfeasibleEvaluationError` off the log domain."""
    x = np.asarray(x, dtype=float)
    u = _guarded(op, x)
    return float(-np.mean(np.log(u)) + np.sum(x))


def eval_derivatives(op, x):
    """Objective, gradient, Hessian and weights ``d`` at ``x``.

    ``d`` is computed once and reused for the gradient and the Hessian.
    """
    x = np.asarray(x, dtype=float)
    u = _guarded(op, x)
    n = op.n
    d = 1.0 / u
    g = 1.0 - op.apply_transpose(d) / n
    H = op.gram_weighted(d) / n
    f = float(-np.mean(np.log(u)) + np.sum(x))
    return DerivativeBundle(f, g, H, d, u)


def dual_residual(g):
    """``max(0, -min_k g_k)``: zero exactly when the gradient is non-negative."""
    return max(0.0, -float(np.min(g)))


def mixture_loss(L, x):
    """f(x) = -(1/n) sum_j log((Lx)_j) on the dense matrix, with no penalty."""
    u = as_array(L) @ np.asarray(x, dtype=float)
    if not np.all(u > 0):
        return float("inf")
    return float(-np.mean(np.log(u)))
