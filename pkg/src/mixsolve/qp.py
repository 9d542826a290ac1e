"""Primal active-set method for  min 1/2 y'Hy + y'a  subject to  y >= 0.

The working set W holds coordinates pinned at zero. Each iteration solves
the equality-constrained problem on the free coordinates, then either
takes the full step, stops at a blocking bound (adding it to W), or, once
the step is zero, releases the working-set coordinate with the most
negative multiplier.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg


# refinement passes allowed after an unblocked step before the free-set
# minimum is taken as found; nearly collinear columns otherwise make the
# ridged refinement crawl along directions where the objective is flat
MAX_REFINEMENT = 2


class SingularSubproblemError(np.linalg.LinAlgError):
    """The free block of the Hessian could not be factorized even with ridging."""


@dataclass(frozen=True)
class QpSubproblem:
    hessian: np.ndarray
    lin: np.ndarray
    working_set: frozenset = field(default_factory=frozenset)
    ridge: float = 0.0

    def __post_init__(self):
        H = np.asarray(self.hessian, dtype=float)
        a = np.asarray(self.lin, dtype=float)
        m = len(a)
        if H.shape != (m, m):
            raise ValueError(f"hessian shape {H.shape} does not match linear term of length {m}")
        W = frozenset(int(i) for i in self.working_set)
        if any(i < 0 or i >= m for i in W):
            raise ValueError("working set index out of range")
        if len(W) >= m:
            raise ValueError("working set must leave at least one coordinate free")
        ridge = self.ridge
        if np.ndim(ridge):
            ridge = np.asarray(ridge, dtype=float)
            if ridge.shape != (m,):
                raise ValueError(f"ridge vector must have length {m}")
        if np.any(np.asarray(ridge) < 0):
            raise ValueError("ridge must be non-negative")
        object.__setattr__(self, "ridge", ridge)
        object.__setattr__(self, "hessian", H)
        object.__setattr__(self, "lin", a)
        object.__setattr__(self, "working_set", W)

    def objective(self, y):
        return float(0.5 * y @ self.hessian @ y + y @ self.lin)


class QpSolution(NamedTuple):
    y: np.ndarray
    working_set: frozenset
    converged: bool
    n_iter: int
    # objective value of every iterate, y^(0) first; filled when requested
    history: list


def default_ridge(H):
    """Per-coordinate ridge: 1e-10 times each diagonal entry of the Hessian.

    Hessian diagonals of mixture problems can span many orders of magnitude,
    and a single scalar ridge sized to the largest ones swamps the small
    ones. Entries with a zero diagonal fall back to 1e-10 times the mean
    diagonal.
    """
    diag = np.diag(H).astype(float)
    floor = 1e-10 * float(np.mean(diag))
    return np.where(diag > 0, 1e-10 * diag, floor)


def eq_constrained_step(H, b, W, ridge=0.0):
    """Minimize 1/2 q'Hq + q'b with q_i = 0 on ``W``.

    On the free set F this is the linear system (H_FF + R) q_F = -b_F, where
    R is diagonal: ``ridge`` is either a scalar or one entry per coordinate.
    """
    H = np.asarray(H, dtype=float)
    b = np.asarray(b, dtype=float)
    m = len(b)
    inW = np.zeros(m, dtype=bool)
    inW[list(W)] = True
    F = np.flatnonzero(~inW)
    if F.size == 0:
        raise ValueError("free set is empty")
    HF = H[np.ix_(F, F)]
    if np.ndim(ridge):
        HF[np.diag_indices_from(HF)] += np.asarray(ridge, dtype=float)[F]
    elif ridge:
        HF[np.diag_indices_from(HF)] += ridge
    try:
        c = scipy.linalg.cho_factor(HF, lower=True, check_finite=False)
        qF = -scipy.linalg.cho_solve(c, b[F], check_finite=False)
    except np.linalg.LinAlgError as err:
        raise SingularSubproblemError(
            f"free block of size {F.size} is not positive definite even with a ridge") from err
    if not np.all(np.isfinite(qF)):
        raise SingularSubproblemError("non-finite step from the free-block solve")
    q = np.zeros(m)
    q[F] = qF
    return q


def blocking_step(y, q, W):
    """Largest alpha in [0, 1] keeping ``y + alpha q`` non-negative.

    Returns ``(alpha, blocker)`` where ``blocker`` is the index of the bound
    that limits the step, or None when the full step is feasible.
    """
    y = np.asarray(y, dtype=float)
    q = np.asarray(q, dtype=float)
    cand = q < 0
    if W:
        cand[list(W)] = False
    idx = np.flatnonzero(cand)
    if idx.size == 0:
        return 1.0, None
    ratios = -y[idx] / q[idx]
    i = int(np.argmin(ratios))
    alpha = float(ratios[i])
    if alpha >= 1.0:
        return 1.0, None
    return max(alpha, 0.0), int(idx[i])


def solve_qp(sub, eps_as=1e-10, max_iter=None, record=False):
    """Active-set solve of a non-negatively constrained convex QP.

    Parameters
    ----------
    sub : QpSubproblem
        ``working_set`` is the initial working set; the starting point puts
        zero on it and ``1/k`` on the ``k`` free coordinates.
    eps_as : float
        Step-norm threshold treated as a zero step, and tolerance on the
        working-set multipliers.
    max_iter : int, optional
        Defaults to ``100 * m``.
    record : bool
        Keep the objective value of every iterate in ``history``.

    Returns
    -------
    QpSolution
        ``converged`` is False when ``max_iter`` ran out; ``y`` is then the
        last (feasible, lowest-objective) iterate.
    """
    H, a = sub.hessian, sub.lin
    m = len(a)
    if max_iter is None:
        max_iter = 100 * m
    W = set(sub.working_set)
    y = np.zeros(m)
    free = [i for i in range(m) if i not in W]
    y[free] = 1.0 / len(free)
    history = [sub.objective(y)] if record else []
    # consecutive unblocked steps on the same free set; each one after the
    # first is an iterative-refinement pass against the ridge
    unblocked = 0

    for it in range(max_iter):
        b = H @ y + a
        if unblocked > MAX_REFINEMENT or len(W) == m:
            # a blocking step can pin the last free coordinate; the step
            # over an empty free set is zero
            q = None
        else:
            q = eq_constrained_step(H, b, W, sub.ridge)
            if np.max(np.abs(q)) <= eps_as:
                q = None
        if q is None:
            unblocked = 0
            if not W:
                return QpSolution(y, frozenset(W), True, it, history)
            Wl = sorted(W)
            bw = b[Wl]
            j = int(np.argmin(bw))  # first minimum -> smallest index on ties
            if bw[j] >= -eps_as:
                return QpSolution(y, frozenset(W), True, it, history)
            W.discard(Wl[j])
            continue
        alpha, blocker = blocking_step(y, q, W)
        y = y + alpha * q
        if blocker is not None:
            y[blocker] = 0.0
            W.add(blocker)
            unblocked = 0
        else:
            unblocked += 1
        # rounding can leave tiny negatives on coordinates that were not
        # candidates for blocking
        np.maximum(y, 0.0, out=y)
        if record:
            history.append(sub.objective(y))
    return QpSolution(y, frozenset(W), False, max_iter, history)
