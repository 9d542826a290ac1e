"""Independent reference computations used as test oracles.

None of these share code with the package: they use brute force, direct
KKT systems or scipy routines so that agreement is meaningful.
"""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np
import scipy.optimize
import scipy.stats

from mixsolve import build_likelihood_matrix, select_grid, simulate_observations
from mixsolve.simulate import SimulationSpec


def normal_density(z, var):
    return scipy.stats.norm.pdf(z, loc=0.0, scale=np.sqrt(var))


def enumerate_nonneg_qp(H, a):
    """Minimize 1/2 y'Hy + a'y over y >= 0 by trying every free set.

    For each candidate free set F the stationary point of the reduced
    problem is checked for primal feasibility and non-negative multipliers
    on the complement; the best such point is returned.
    """
    m = len(a)
    best, best_val = None, np.inf
    for size in range(0, m + 1):
        for F in itertools.combinations(range(m), size):
            y = np.zeros(m)
            if F:
                idx = list(F)
                y[idx] = np.linalg.solve(H[np.ix_(idx, idx)], -a[idx])
            if np.any(y < -1e-12):
                continue
            mult = H @ y + a
            rest = [i for i in range(m) if i not in F]
            if rest and np.min(mult[rest]) < -1e-10:
                continue
            val = 0.5 * y @ H @ y + a @ y
            if val < best_val:
                best, best_val = np.maximum(y, 0.0), val
    return best


def kkt_equality_step(H, b, W):
    """Solve min 1/2 q'Hq + q'b s.t. q_i = 0 (i in W) via the bordered KKT matrix."""
    m = len(b)
    W = sorted(W)
    E = np.zeros((len(W), m))
    for r, i in enumerate(W):
        E[r, i] = 1.0
    K = np.block([[H, E.T], [E, np.zeros((len(W), len(W)))]])
    rhs = np.concatenate([-b, np.zeros(len(W))])
    return np.linalg.solve(K, rhs)[:m]


def project_simplex_michelot(v):
    """Euclidean simplex projection by repeated equality-constrained solves.

    Each pass projects onto the affine hull {sum x = 1} of the current free
    coordinates and drops the ones that come out negative.
    """
    v = np.asarray(v, dtype=float)
    free = np.ones(len(v), dtype=bool)
    while True:
        x = np.zeros(len(v))
        k = free.sum()
        x[free] = v[free] - (v[free].sum() - 1.0) / k
        neg = free & (x < 0)
        if not neg.any():
            return x
        free &= ~neg


def project_simplex_bisection(v):
    """Projection via the threshold tau solving sum(max(v - tau, 0)) = 1."""
    v = np.asarray(v, dtype=float)
    phi = lambda tau: np.maximum(v - tau, 0.0).sum() - 1.0  # noqa: E731
    tau = scipy.optimize.brentq(phi, v.max() - 2.0, v.max(), xtol=1e-15, rtol=1e-15)
    return np.maximum(v - tau, 0.0)


def simplex_grid_min(L, step=1e-3):
    """min over the 2-simplex grid at ``step`` resolution of -(1/n) sum log(Lx)."""
    k = int(round(1.0 / step))
    i, j = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
    keep = i + j <= k
    X = np.stack([i[keep], j[keep], k - i[keep] - j[keep]], axis=1) / k
    U = X @ L.T
    with np.errstate(divide="ignore"):
        vals = -np.mean(np.log(U), axis=1)
    return float(np.min(vals))


def loss(L, x):
    return float(-np.mean(np.log(L @ x)))


def central_gradient(fun, x, h=1e-6):
    g = np.empty_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


@lru_cache(maxsize=None)
def simulated_matrix(n, m, seed=1):
    obs = simulate_observations(SimulationSpec(n, seed))
    return build_likelihood_matrix(obs, select_grid(obs, m))


def random_likelihood(rng, n, m):
    """Random positive matrix with rows scaled to max 1."""
    A = rng.uniform(0.01, 1.0, size=(n, m))
    return A / A.max(axis=1, keepdims=True)
