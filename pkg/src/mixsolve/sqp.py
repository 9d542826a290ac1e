"""mix-SQP: sequential quadratic programming for mixture proportions.

Each iteration forms the gradient and Hessian of the penalized objective
f*(x) = f(x) + sum(x) at the current non-negative iterate, solves the
non-negatively constrained quadratic subproblem with the active-set method
(warm-started from the zero pattern of x), and backtracks along
p = y - x until the Armijo condition holds. The penalized problem has its
minimizer on the simplex already, so the returned weights only need a
final renormalization against rounding.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import objective as obj
from .problem import InvalidInputError, LikelihoodMatrix, as_array, validate
from .qp import QpSubproblem, default_ridge, solve_qp

CONVERGED = "converged"
MAX_ITER = "max_iter"
LINE_SEARCH_FAILED = "line_search_failed"

PHASES = ("factorization", "derivatives", "subproblem", "line_search")

# log guard used by the solver on both backings when SqpConfig.delta is None;
# with delta = 0 a dense run can drive (Lx)_j of outlying rows to underflow
# and stall the Newton steps
DEFAULT_DELTA = 1e-8


@dataclass(frozen=True)
class SqpConfig:
    """Tunable constants of mix-SQP.

    ``callback``, when set, is called with each :class:`TraceRecord` as it
    is completed; it is the hook used by the benchmark harness.
    """

    xi: float = 0.01
    rho: float = 0.5
    eps_dual: float = 1e-8
    eps_active_set: float = 1e-10
    delta: Optional[float] = None
    max_iter: int = 1000
    max_linesearch: int = 60
    support_threshold: float = 0.0
    rtol_qr: float = 1e-10
    use_lowrank: bool = True
    rank: Optional[int] = None
    qp_max_iter: Optional[int] = None
    callback: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if not 0 < self.xi < 1:
            raise InvalidInputError(f"xi must lie in (0, 1), got {self.xi}")
        if not 0 < self.rho < 1:
            raise InvalidInputError(f"rho must lie in (0, 1), got {self.rho}")
        if self.eps_dual < 0 or self.eps_active_set < 0:
            raise InvalidInputError("tolerances must be non-negative")
        if self.max_iter < 0 or self.max_linesearch < 1:
            raise InvalidInputError("iteration caps must be positive")
        if not 0 < self.rtol_qr < 1:
            raise InvalidInputError(f"rtol_qr must lie in (0, 1), got {self.rtol_qr}")


@dataclass(frozen=True)
class TraceRecord:
    """State after one accepted step.

    ``objective`` is f* at the unnormalized iterate, ``loss`` is f at the
    iterate rescaled onto the simplex (identical to ``objective - 1`` for
    solvers that stay on the simplex), and ``dual_residual`` is measured at
    the new iterate.
    """

    iter: int
    objective: float
    loss: float
    dual_residual: float
    nnz: int
    alpha: float
    wall_time: float
    n_linesearch: int


@dataclass(frozen=True)
class SolverResult:
    x: np.ndarray
    objective: float
    pre_normalization_sum: float
    status: str
    trace: list
    factor_rank: int
    dual_residual: float
    n_iter: int
    solver: str = "sqp"
    timings: dict = field(default_factory=dict)
    total_time: float = 0.0

    @property
    def converged(self):
        return self.status == CONVERGED

    @property
    def nnz(self):
        return int(np.count_nonzero(self.x))


def normalize_solution(x_raw):
    """Rescale onto the simplex; the last positive entry absorbs rounding.

    Zero entries stay zero, so the support is unchanged. If the last entry
    cannot absorb the residual exactly (its spacing is too coarse against
    the summation order), earlier positive entries are tried in turn.
    """
    x = np.array(x_raw, dtype=float)
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise InvalidInputError("weights must be finite and non-negative")
    total = x.sum()
    if not total > 0:
        raise InvalidInputError("cannot normalize an all-zero weight vector")
    x /= total
    for k in np.flatnonzero(x)[::-1][:16]:
        keep = x[k]
        for _ in range(4):
            err = 1.0 - x.sum()
            if err == 0.0:
                return x
            if x[k] + err <= 0.0:
                break
            x[k] += err
        if x.sum() != 1.0:
            x[k] = keep
    return x


def line_search(opr, x, p, g, f_x, cfg):
    """Backtrack alpha = rho^j until f(x + alpha p) <= f_x + xi alpha g'p.

    Evaluations outside the log domain count as failed trials.

    Returns
    -------
    (alpha, f_new, trials) on success, or (None, f_x, trials) when
    ``cfg.max_linesearch`` trials all fail.
    """
    slope = float(g @ p)
    alpha = 1.0
    for trial in range(1, cfg.max_linesearch + 1):
        try:
            f_new = obj.eval_objective(opr, x + alpha * p)
        except obj.InfeasibleEvaluationError:
            f_new = np.inf
        if f_new <= f_x + cfg.xi * alpha * slope:
            return alpha, f_new, trial
        alpha *= cfg.rho
    return None, f_x, cfg.max_linesearch


def _row_normalized(A):
    """Rows scaled to max 1, with the log scale factors (no copy if already so)."""
    rowmax = A.max(axis=1)
    if np.all(rowmax == 1.0):
        return A, np.zeros(len(rowmax))
    return A / rowmax[:, None], np.log(rowmax)


def mixsqp(L, cfg=None, x0=None):
    """Maximum-likelihood mixture proportions by SQP with an active-set inner solver.

    Parameters
    ----------
    L : LikelihoodMatrix or array_like, shape (n, m)
        Non-negative likelihood matrix with no all-zero row. Rows need not
        be scaled; the solver works on a row-normalized copy, which leaves
        the solution unchanged.
    cfg : SqpConfig, optional
    x0 : array_like, optional
        Starting point on the simplex; defaults to uniform weights.

    Returns
    -------
    SolverResult
        ``objective`` is the unpenalized f(x) of the caller's ``L`` at the
        normalized solution.
    """
    cfg = cfg or SqpConfig()
    t_start = time.perf_counter()
    timings = dict.fromkeys(PHASES, 0.0)
    A = as_array(L)
    if not isinstance(L, LikelihoodMatrix):
        validate(A)
    A, log_scale = _row_normalized(A)
    n, m = A.shape

    if x0 is None:
        x = np.full(m, 1.0 / m)
    else:
        x = np.array(x0, dtype=float)
        if x.shape != (m,) or np.any(x < 0) or abs(x.sum() - 1.0) > 1e-8:
            raise InvalidInputError("x0 must be a non-negative length-m vector summing to 1")

    t0 = time.perf_counter()
    opr = obj.from_matrix(A, lowrank_approx=cfg.use_lowrank, rtol=cfg.rtol_qr,
                          rank=cfg.rank,
                          delta=DEFAULT_DELTA if cfg.delta is None else cfg.delta)
    timings["factorization"] = time.perf_counter() - t0

    trace = []
    pending = None
    status = MAX_ITER
    t = 0
    while True:
        t0 = time.perf_counter()
        try:
            bundle = obj.eval_derivatives(opr, x)
        except obj.InfeasibleEvaluationError as err:
            if t == 0:
                raise InvalidInputError(f"starting point is outside the log domain: {err}") from err
            raise
        if not np.isfinite(bundle.objective) or not np.all(np.isfinite(bundle.gradient)):
            raise FloatingPointError(f"non-finite objective or gradient at iteration {t}")
        timings["derivatives"] += time.perf_counter() - t0
        g = bundle.gradient
        resid = obj.dual_residual(g)
        if pending is not None:
            rec = TraceRecord(dual_residual=resid, **pending)
            trace.append(rec)
            if cfg.callback is not None:
                cfg.callback(rec)
        if resid <= cfg.eps_dual:
            status = CONVERGED
            break
        if t >= cfg.max_iter:
            break

        t0 = time.perf_counter()
        H = bundle.hessian
        working = frozenset(np.flatnonzero(x <= cfg.support_threshold).tolist())
        # g - Hx reduces to 2g - 1 only when delta = 0 and L is exact
        sub = QpSubproblem(H, g - H @ x, working, default_ridge(H))
        y = solve_qp(sub, cfg.eps_active_set, cfg.qp_max_iter).y
        p = y - x
        timings["subproblem"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        alpha, f_new, trials = line_search(opr, x, p, g, bundle.objective, cfg)
        timings["line_search"] += time.perf_counter() - t0
        if alpha is None:
            status = LINE_SEARCH_FAILED
            break
        # a unit step lands exactly on y, zeros included
        x = x + alpha * p
        np.maximum(x, 0.0, out=x)
        t += 1
        s = float(x.sum())
        # f at x / s, from the same guarded fit used by the next evaluation
        pending = dict(iter=t, objective=f_new, loss=f_new - s + np.log(s),
                       nnz=int(np.count_nonzero(x)), alpha=alpha,
                       wall_time=time.perf_counter() - t_start, n_linesearch=trials)

    raw_sum = float(x.sum())
    xn = normalize_solution(x)
    f = obj.mixture_loss(A, xn) - float(np.mean(log_scale))
    return SolverResult(
        x=xn, objective=f, pre_normalization_sum=raw_sum, status=status, trace=trace,
        factor_rank=opr.rank, dual_residual=resid, n_iter=t,
        solver="sqp" if cfg.use_lowrank else "sqp-dense", timings=timings,
        total_time=time.perf_counter() - t_start)


def with_overrides(cfg, **kw):
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
