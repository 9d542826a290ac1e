"""Truncated column-pivoted QR of a tall likelihood matrix.

``L[:, perm] ~= q @ r_mat`` with ``q`` orthonormal (n x r) and ``r_mat``
upper trapezoidal (r x m). The factor is only ever used through
matrix-vector products and the weighted Gram product, so the approximated
matrix is never formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import InvalidInputError, as_array

# chunk of rows used when recomputing residual column norms
_CHUNK = 16384
# recompute residual norms once a downdated norm^2 falls below this
# fraction of its value at the last recomputation; the downdated estimate
# then carries relative error at most ~eps / ratio
_RECOMPUTE_RATIO = 1e-8


@dataclass(frozen=True)
class LowRankFactor:
    q: np.ndarray
    r_mat: np.ndarray
    perm: np.ndarray
    rank: int
    rtol: float

    @property
    def shape(self):
        return self.q.shape[0], self.r_mat.shape[1]

    @property
    def inv_perm(self):
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(len(self.perm))
        return inv

    def reconstruct(self):
        """Dense ``Q R P^T``; for tests and diagnostics only."""
        out = np.empty(self.shape)
        out[:, self.perm] = self.q @ self.r_mat
        return out


def _residual_sq_norms(A, Q, R):
    """Exact ||a_j - Q Q^T a_j||^2 for every column, by chunked rows."""
    out = np.zeros(A.shape[1])
    for start in range(0, A.shape[0], _CHUNK):
        block = A[start:start + _CHUNK]
        if Q.shape[1]:
            block = block - Q[start:start + _CHUNK] @ R
        out += np.einsum("ij,ij->j", block, block)
    return out


def rrqr(L, rtol=1e-10, rank=None):
    """Column-pivoted QR truncated at the first negligible diagonal.

    Columns are chosen greedily by largest residual norm. Factorization
    stops at step k once ``|R_kk| <= rtol * |R_00|``, or after ``rank``
    steps when a rank is forced. Cost is O(n m r) for final rank r.

    Parameters
    ----------
    L : LikelihoodMatrix or array_like, shape (n, m)
    rtol : float
        Relative truncation tolerance, 0 < rtol < 1.
    rank : int, optional
        Force exactly this many columns (capped at min(n, m), and earlier if
        the residual vanishes exactly).

    Returns
    -------
    LowRankFactor
    """
    A = np.asarray(as_array(L), dtype=float)
    if A.ndim != 2 or 0 in A.shape:
        raise InvalidInputError(f"expected a non-empty 2-d matrix, got shape {A.shape}")
    if not 0 < rtol < 1:
        raise InvalidInputError(f"rtol must lie in (0, 1), got {rtol}")
    n, m = A.shape
    kmax = min(n, m)
    if rank is not None:
        if rank < 1:
            raise InvalidInputError(f"forced rank must be positive, got {rank}")
        kmax = min(kmax, int(rank))

    Q = np.zeros((n, kmax))
    R = np.zeros((kmax, m))
    perm = np.arange(m)
    res = _residual_sq_norms(A, Q[:, :0], R[:0])
    ref = res.copy()
    r00 = None
    k = 0
    while k < kmax:
        # remaining candidates are perm[k:]
        cand = perm[k:]
        j = k + int(np.argmax(res[cand]))
        perm[[k, j]] = perm[[j, k]]
        col = perm[k]

        v = A[:, col].copy()
        Qk = Q[:, :k]
        nrm0 = np.linalg.norm(v)
        for _ in range(3):
            if k:
                v -= Qk @ (Qk.T @ v)
            nrm = np.linalg.norm(v)
            if nrm > 0.5 * nrm0:
                break
            nrm0 = nrm
        if r00 is None:
            r00 = nrm
        if nrm == 0.0 or (rank is None and nrm <= rtol * r00):
            break
        qk = v / nrm
        Q[:, k] = qk
        row = A.T @ qk
        row[perm[:k]] = 0.0
        row[col] = nrm
        R[k] = row

        res -= row**2
        res[perm[:k + 1]] = 0.0
        k += 1
        rest = perm[k:]
        if rest.size and np.any(res[rest] < _RECOMPUTE_RATIO * ref[rest]):
            res = _residual_sq_norms(A, Q[:, :k], R[:k])
            res[perm[:k]] = 0.0
            ref = res.copy()

    q = np.ascontiguousarray(Q[:, :k])
    # rows of R were accumulated in original column order
    r_mat = np.ascontiguousarray(R[:k][:, perm])
    for a in (q, r_mat, perm):
        a.setflags(write=False)
    return LowRankFactor(q, r_mat, perm, k, float(rtol))


def apply(F, x):
    """``Q (R (P^T x))``."""
    return F.q @ (F.r_mat @ np.asarray(x, dtype=float)[F.perm])


def apply_transpose(F, d):
    """``P (R^T (Q^T d))``."""
    out = np.empty(F.r_mat.shape[1])
    out[F.perm] = F.r_mat.T @ (F.q.T @ np.asarray(d, dtype=float))
    return out


def gram_weighted(F, d):
    """``P R^T (Q^T diag(d)^2 Q) R P^T`` without forming the n x m matrix.

    The r x r core costs O(n r^2); expansion to m x m costs O(m^2 r).
    """
    qd = F.q * np.asarray(d, dtype=float)[:, None]
    core = qd.T @ qd
    core = 0.5 * (core + core.T)
    rt = F.r_mat.T
    hp = rt @ core @ F.r_mat
    hp = 0.5 * (hp + hp.T)
    inv = F.inv_perm
    return hp[np.ix_(inv, inv)]
