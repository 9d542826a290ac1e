"""Likelihood matrices for scale mixtures of zero-mean normals.

Observations are pairs (z_j, s_j) of effect estimates and standard errors.
Component k of the mixture prior is N(0, sigma_k^2), so the marginal
density of z_j under component k is N(z_j; 0, sigma_k^2 + s_j^2).
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))
BINARY_MAGIC = b"MIXL1"


class InvalidInputError(ValueError):
    """Raised when observations, grids or matrices violate their invariants.

    ``index`` carries the offending position (row, or (row, col)) when one
    exists.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ObservationSet:
    z: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        z, s = _frozen(self.z), _frozen(self.s)
        if z.ndim != 1 or s.ndim != 1 or len(z) != len(s):
            raise InvalidInputError("z and s must be 1-d vectors of equal length")
        if len(z) == 0:
            raise InvalidInputError("need at least one observation")
        bad = np.flatnonzero(~np.isfinite(z) | ~np.isfinite(s))
        if bad.size:
            raise InvalidInputError(f"non-finite observation at row {bad[0]}", int(bad[0]))
        bad = np.flatnonzero(s <= 0)
        if bad.size:
            raise InvalidInputError(f"non-positive standard error at row {bad[0]}", int(bad[0]))
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "s", s)

    def __len__(self):
        return len(self.z)


@dataclass(frozen=True)
class VarianceGrid:
    """Component standard deviations, strictly increasing, first entry >= 0."""

    sigma: np.ndarray

    def __post_init__(self):
        sigma = _frozen(self.sigma)
        if sigma.ndim != 1 or len(sigma) < 1:
            raise InvalidInputError("grid must be a non-empty 1-d vector")
        if not np.all(np.isfinite(sigma)) or sigma[0] < 0:
            raise InvalidInputError("grid values must be finite and non-negative")
        if np.any(np.diff(sigma) <= 0):
            raise InvalidInputError("grid must be strictly increasing")
        object.__setattr__(self, "sigma", sigma)

    @property
    def m(self):
        return len(self.sigma)


@dataclass(frozen=True)
class LikelihoodMatrix:
    """Row-scaled likelihood matrix.

    ``values[j] * exp(log_row_scale[j])`` recovers the unscaled densities of
    row j; the scale is kept in log form because it underflows for extreme
    observations. Every row of ``values`` has maximum exactly 1.
    """

    values: np.ndarray
    log_row_scale: np.ndarray
    sigma: np.ndarray | None = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.flags.writeable:
            values = values.copy()
            values.setflags(write=False)
        log_scale = _frozen(self.log_row_scale)
        validate(values, require_scaled=True)
        if log_scale.shape != (values.shape[0],):
            raise InvalidInputError("log_row_scale must have one entry per row")
        if not np.all(np.isfinite(log_scale)):
            raise InvalidInputError("log_row_scale entries must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "log_row_scale", log_scale)
        if self.sigma is not None:
            object.__setattr__(self, "sigma", _frozen(self.sigma))

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def m(self):
        return self.values.shape[1]

    @property
    def row_scale(self):
        """Factor divided out of each row (may underflow to 0; prefer the log)."""
        return np.exp(self.log_row_scale)

    @classmethod
    def from_values(cls, values, sigma=None):
        """Wrap an arbitrary non-negative matrix, dividing each row by its max."""
        values = np.array(values, dtype=float)
        validate(values)
        scale = values.max(axis=1)
        values /= scale[:, None]
        values.setflags(write=False)
        return cls(values, np.log(scale), sigma)

    def log_row_scale_sum(self):
        return float(np.sum(self.log_row_scale))


def as_array(L):
    """Return the dense values of ``L`` (a LikelihoodMatrix or array-like)."""
    if isinstance(L, LikelihoodMatrix):
        return L.values
    return np.asarray(L, dtype=float)


def validate(values, require_scaled=False):
    """Check a likelihood matrix, raising on the first violated invariant.

    Parameters
    ----------
    values : array_like, shape (n, m)
    require_scaled : bool
        Also require every row maximum to equal 1.

    Raises
    ------
    InvalidInputError
        With ``index`` set to the offending (row, col) or row.
    """
    L = np.asarray(values, dtype=float)
    if L.ndim != 2 or L.shape[0] < 1 or L.shape[1] < 1:
        raise InvalidInputError(f"expected a non-empty 2-d matrix, got shape {L.shape}")
    finite = np.isfinite(L)
    if not finite.all():
        j, k = np.argwhere(~finite)[0]
        raise InvalidInputError(f"non-finite entry at ({j},{k})", (int(j), int(k)))
    neg = L < 0
    if neg.any():
        j, k = np.argwhere(neg)[0]
        raise InvalidInputError(f"negative entry at ({j},{k})", (int(j), int(k)))
    rowmax = L.max(axis=1)
    zero = np.flatnonzero(rowmax == 0)
    if zero.size:
        raise InvalidInputError(f"all-zero row {zero[0]}", int(zero[0]))
    if require_scaled:
        off = np.flatnonzero(rowmax != 1.0)
        if off.size:
            raise InvalidInputError(f"row {off[0]} has max {rowmax[off[0]]!r}, expected 1", int(off[0]))


def build_likelihood_matrix(obs, grid, chunk_rows=65536):
    """Evaluate L_jk = N(z_j; 0, sigma_k^2 + s_j^2) with each row scaled to max 1.

    Densities are formed in log space and the row maximum is subtracted
    before exponentiating, so extreme observations do not underflow.
    """
    z, s, sigma = obs.z, obs.s, grid.sigma
    n, m = len(z), len(sigma)
    values = np.empty((n, m))
    log_scale = np.empty(n)
    sig2 = sigma**2
    for start in range(0, n, chunk_rows):
        stop = min(start + chunk_rows, n)
        v = sig2[None, :] + (s[start:stop] ** 2)[:, None]
        block = values[start:stop]
        with np.errstate(over="ignore", invalid="ignore"):
            np.divide(z[start:stop, None] ** 2, v, out=block)
            block += np.log(v)
            block += LOG_2PI
            block *= -0.5
            rmax = block.max(axis=1)
            block -= rmax[:, None]
        bad = np.flatnonzero(~np.isfinite(rmax) | ~np.isfinite(block).all(axis=1))
        if bad.size:
            row = start + int(bad[0])
            raise InvalidInputError(f"non-finite density in row {row}", row)
        np.exp(block, out=block)
        log_scale[start:stop] = rmax
    values.setflags(write=False)
    return LikelihoodMatrix(values, log_scale, sigma)


def select_grid(obs, m, max_sigma=None):
    """Pick ``m`` component standard deviations for the data.

    The first component is a point mass (sigma = 0); the remaining ``m - 1``
    are geometrically spaced from ``min(s) / 10`` up to twice the largest
    excess spread ``sqrt(max(z^2 - s^2, 0))``, floored at twice the lower end.
    """
    if m < 2:
        raise InvalidInputError(f"grid size must be at least 2, got {m}")
    lo = float(np.min(obs.s)) / 10.0
    if max_sigma is None:
        hi = 2.0 * float(np.sqrt(np.max(np.maximum(obs.z**2 - obs.s**2, 0.0))))
        hi = max(hi, 2.0 * lo)
    else:
        hi = float(max_sigma)
        if not hi > lo:
            raise InvalidInputError(f"max sigma {hi} must exceed the grid minimum {lo}")
    if m == 2:
        rest = np.array([lo])
    else:
        rest = np.geomspace(lo, hi, m - 1)
        rest[-1] = hi
    return VarianceGrid(np.concatenate([[0.0], rest]))


# -- ingestion ---------------------------------------------------------------

def _resolve_column(header, col, default):
    if col is None:
        col = default
    if isinstance(col, int) or (isinstance(col, str) and col.isdigit() and col not in header):
        idx = int(col)
        if header is not None and idx >= len(header):
            raise InvalidInputError(f"column index {idx} out of range")
        return idx
    if header is None or col not in header:
        raise InvalidInputError(f"missing column {col!r}")
    return header.index(col)


def _numeric_row(fields, effect_col, se_col):
    """True when the selected integer columns of ``fields`` parse as numbers."""
    if not (isinstance(effect_col, int) and isinstance(se_col, int)):
        return False
    try:
        float(fields[effect_col])
        float(fields[se_col])
    except (IndexError, ValueError):
        return False
    return True


def read_observations(path, effect_col=None, se_col=None, delimiter=None):
    """Read effect estimates and standard errors from a TSV/CSV file.

    Columns are chosen by header name (defaults ``"b"`` and ``"SE"``) or by
    0-based index. Lines starting with ``#`` are skipped. When both columns
    are integers and the first line parses as numbers, the file is taken to
    have no header.

    Raises
    ------
    InvalidInputError
        On missing columns or unparsable values, naming the line number.
    """
    path = Path(path)
    text = path.read_text()
    if delimiter is None:
        delimiter = "," if path.suffix.lower() == ".csv" else "\t"
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines())
             if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise InvalidInputError(f"{path}: no data")
    header = None
    if not _numeric_row(lines[0][1].split(delimiter), effect_col, se_col):
        header = [h.strip() for h in lines[0][1].split(delimiter)]
        lines = lines[1:]
    ie = _resolve_column(header, effect_col, "b")
    isd = _resolve_column(header, se_col, "SE")
    z = np.empty(len(lines))
    s = np.empty(len(lines))
    for row, (lineno, ln) in enumerate(lines):
        fields = ln.split(delimiter)
        try:
            z[row] = float(fields[ie])
            s[row] = float(fields[isd])
        except (IndexError, ValueError):
            raise InvalidInputError(f"{path}:{lineno}: cannot parse effect/SE from {ln!r}",
                                    lineno) from None
    try:
        return ObservationSet(z, s)
    except InvalidInputError as err:
        lineno = lines[err.index][0] if isinstance(err.index, int) else None
        raise InvalidInputError(f"{path}:{lineno}: {err}", lineno) from None


def write_observations(obs, path):
    """Write observations as a two-column TSV with header ``b<TAB>SE``."""
    buf = io.StringIO()
    buf.write("b\tSE\n")
    for z, s in zip(obs.z, obs.s):
        buf.write(f"{z:.17g}\t{s:.17g}\n")
    Path(path).write_text(buf.getvalue())


# -- matrix export/import ------------------------------------------------------

def write_matrix_csv(L, path):
    """Write ``L.values`` as CSV; the header row holds the sigma grid if known."""
    m = L.m
    header = L.sigma if L.sigma is not None else np.arange(m)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{v:.17g}" for v in header])
        for row in L.values:
            w.writerow([f"{v:.17g}" for v in row])


def read_matrix_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise InvalidInputError(f"{path}: expected a header row and at least one data row")
    try:
        sigma = np.array([float(v) for v in rows[0]])
        values = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as err:
        raise InvalidInputError(f"{path}: {err}") from None
    try:
        VarianceGrid(sigma)
    except InvalidInputError:
        sigma = None
    return LikelihoodMatrix.from_values(values, sigma)


def write_matrix_binary(L, path):
    """Binary layout: b"MIXL1", n and m as little-endian uint64, row-major float64."""
    values = np.ascontiguousarray(L.values if isinstance(L, LikelihoodMatrix) else L,
                                  dtype="<f8")
    n, m = values.shape
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<QQ", n, m))
        fh.write(values.tobytes(order="C"))


def read_matrix_binary(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(BINARY_MAGIC))
        if magic != BINARY_MAGIC:
            raise InvalidInputError(f"{path}: bad magic {magic!r}")
        head = fh.read(16)
        if len(head) != 16:
            raise InvalidInputError(f"{path}: truncated header")
        n, m = struct.unpack("<QQ", head)
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n * m:
        raise InvalidInputError(f"{path}: expected {n * m} values, found {data.size}")
    return LikelihoodMatrix.from_values(data.reshape(n, m).astype(float))


def is_binary_matrix(path):
    with open(path, "rb") as fh:
        return fh.read(len(BINARY_MAGIC)) == BINARY_MAGIC
