"""First-order reference solvers: EM and projected gradient descent.

Both stay on the simplex throughout and report the same
:class:`~mixsolve.sqp.SolverResult` as mix-SQP, so their traces can be
raced against it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .objective import dual_residual
from .problem import InvalidInputError, LikelihoodMatrix, as_array, validate
from .sqp import CONVERGED, LINE_SEARCH_FAILED, MAX_ITER, SolverResult, TraceRecord


@dataclass(frozen=True)
class FirstOrderConfig:
    max_iter: int = 1000
    tol: float = 1e-10
    initial_step: float = 1.0
    record_trace: bool = True
    # Armijo constants for projected gradient, matching SqpConfig defaults
    xi: float = 0.01
    rho: float = 0.5
    max_linesearch: int = 60

    def __post_init__(self):
        if self.max_iter < 1:
            raise InvalidInputError("max_iter must be at least 1")
        if self.tol < 0:
            raise InvalidInputError("tol must be non-negative")
        if not self.initial_step > 0:
            raise InvalidInputError("initial_step must be positive")


def _prepare(L, x0):
    A = as_array(L)
    if not isinstance(L, LikelihoodMatrix):
        validate(A)
    m = A.shape[1]
    if x0 is None:
        x = np.full(m, 1.0 / m)
    else:
        x = np.array(x0, dtype=float)
        if x.shape != (m,) or np.any(x < 0) or abs(x.sum() - 1.0) > 1e-8:
            raise InvalidInputError("x0 must be a non-negative length-m vector summing to 1")
    return A, x


def _fit(A, x):
    u = A @ x
    if not np.all(u > 0):
        j = int(np.argmin(u))
        raise InvalidInputError(f"(Lx)_{j} = {u[j]!r}: zero likelihood for row {j}")
    return u


def em_step(L, x):
    """One fused E/M update: x_k <- x_k * (1/n) sum_j L_jk / (Lx)_j.

    The responsibilities are never stored; the result is renormalized so
    it sums to one despite rounding.
    """
    A = as_array(L)
    x = np.asarray(x, dtype=float)
    u = _fit(A, x)
    x_new = x * (A.T @ (1.0 / u)) / A.shape[0]
    return x_new / x_new.sum()


def _record(trace, it, f, g, x, alpha, t0, trials=1):
    trace.append(TraceRecord(iter=it, objective=f + float(x.sum()), loss=f,
                             dual_residual=dual_residual(g), nnz=int(np.count_nonzero(x)),
                             alpha=alpha, wall_time=time.perf_counter() - t0,
                             n_linesearch=trials))


def mixem(L, cfg=None, x0=None):
    """EM iterations until the objective changes by at most ``cfg.tol``."""
    cfg = cfg or FirstOrderConfig()
    t_start = time.perf_counter()
    A, x = _prepare(L, x0)
    n = A.shape[0]
    trace = []
    u = _fit(A, x)
    f = float(-np.mean(np.log(u)))
    # w = L^T d / n drives the next update and is 1 - gradient of f*
    w = A.T @ (1.0 / u) / n
    status = MAX_ITER
    it = 0
    while it < cfg.max_iter:
        x = x * w
        x /= x.sum()
        u = _fit(A, x)
        f_new = float(-np.mean(np.log(u)))
        w = A.T @ (1.0 / u) / n
        it += 1
        if cfg.record_trace:
            _record(trace, it, f_new, 1.0 - w, x, 1.0, t_start)
        done = abs(f - f_new) <= cfg.tol
        f = f_new
        if done:
            status = CONVERGED
            break
    g = 1.0 - w
    return SolverResult(x=x, objective=f, pre_normalization_sum=float(x.sum()), status=status,
                        trace=trace, factor_rank=0, dual_residual=dual_residual(g), n_iter=it,
                        solver="em", timings={"derivatives": time.perf_counter() - t_start},
                        total_time=time.perf_counter() - t_start)


def project_simplex(v):
    """Euclidean projection onto {x : sum(x) = 1, x >= 0} by sorting.

    Finds the threshold tau with sum(max(v - tau, 0)) = 1 from the sorted
    entries, O(m log m).
    """
    v = np.asarray(v, dtype=float)
    # shifting by the maximum keeps the first test u_0 - css_0 = 1 exact
    # however large the entries are
    shift = v.max()
    u = np.sort(v - shift)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, len(v) + 1)
    rho = np.flatnonzero(u - css / ks > 0)[-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(v - shift - tau, 0.0)


def mixpgd(L, cfg=None, x0=None):
    """Projected gradient descent on the simplex with Armijo backtracking.

    The direction at x is ``P(x - grad f(x)) - x``. Backtracking starts at
    ``cfg.initial_step`` and shrinks by ``cfg.rho`` until sufficient
    decrease holds. The very first trial is capped at ``1 / |grad|_1``, as
    in the usual SPG reference code. Later searches start from
    ``min(initial_step, alpha_prev / rho)``: once a unit step has pushed
    some (Lx)_j to ~1e-40 the accepted steps are ~1e-35, and restarting
    each search from 1 would spend a hundred function values per iteration
    rediscovering that.
    """
    cfg = cfg or FirstOrderConfig()
    t_start = time.perf_counter()
    A, x = _prepare(L, x0)
    n = A.shape[0]
    trace = []
    u = _fit(A, x)
    f = float(-np.mean(np.log(u)))
    grad = -(A.T @ (1.0 / u)) / n
    status = MAX_ITER
    it = 0
    t_grad = t_ls = 0.0
    while it < cfg.max_iter:
        direction = project_simplex(x - grad) - x
        if np.max(np.abs(direction)) <= 1e-15:
            status = CONVERGED
            break
        slope = float(grad @ direction)
        if slope >= 0:
            # projection residual is not a descent direction only at rounding level
            status = CONVERGED
            break
        t0 = time.perf_counter()
        if it == 0:
            alpha = min(cfg.initial_step, 1.0 / float(np.abs(grad).sum()))
        else:
            alpha = min(cfg.initial_step, alpha / cfg.rho)
        accepted = False
        for trials in range(1, cfg.max_linesearch + 1):
            x_try = np.maximum(x + alpha * direction, 0.0)
            u_try = A @ x_try
            if np.all(u_try > 0):
                f_try = float(-np.mean(np.log(u_try)))
                if f_try <= f + cfg.xi * alpha * slope:
                    accepted = True
                    break
            alpha *= cfg.rho
        t_ls += time.perf_counter() - t0
        if not accepted:
            status = LINE_SEARCH_FAILED
            break
        s = x_try.sum()
        x = x_try / s
        u = u_try / s
        f_new = float(-np.mean(np.log(u)))
        t0 = time.perf_counter()
        grad = -(A.T @ (1.0 / u)) / n
        t_grad += time.perf_counter() - t0
        it += 1
        if cfg.record_trace:
            _record(trace, it, f_new, grad + 1.0, x, alpha, t_start, trials)
        done = abs(f - f_new) <= cfg.tol
        f = f_new
        if done:
            status = CONVERGED
            break
    return SolverResult(x=x, objective=f, pre_normalization_sum=float(x.sum()), status=status,
                        trace=trace, factor_rank=0, dual_residual=dual_residual(grad + 1.0),
                        n_iter=it, solver="pgd",
                        timings={"derivatives": t_grad, "line_search": t_ls},
                        total_time=time.perf_counter() - t_start)
