"""Synthetic normal-means data with a heavy-tailed symmetric prior.

theta_j ~ 0.5 N(0, 1) + 0.2 t_4 + 0.3 t_6, and z_j = theta_j + N(0, 1)
noise with s_j = 1.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .problem import ObservationSet

# (weight, degrees of freedom); None marks the standard normal component
MIXTURE = ((0.5, None), (0.2, 4.0), (0.3, 6.0))
NOISE_SD = 1.0


@dataclass(frozen=True)
class SimulationSpec:
    n: int
    seed: int = 1

    def __post_init__(self):
        if int(self.n) < 1:
            raise ValueError(f"n must be at least 1, got {self.n}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")


def stream(seed, purpose):
    """Independent PCG64 generator for a (seed, purpose) pair.

    The purpose string is hashed into the seed sequence's spawn key, so
    streams for different purposes never overlap and adding a new purpose
    leaves existing streams untouched.
    """
    key = zlib.crc32(purpose.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(key,))))


def sample_student_t(df, rng, size=None):
    """Student-t draws as Z / sqrt(V / df), Z ~ N(0, 1), V ~ chi^2(df).

    The chi-square variate is 2 * Gamma(df / 2).
    """
    if not df > 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    z = rng.standard_normal(size)
    v = 2.0 * rng.standard_gamma(df / 2.0, size)
    return z / np.sqrt(v / df)


def simulate_observations(spec):
    """Draw ``spec.n`` observations; output depends only on (n, seed)."""
    n = int(spec.n)
    weights = np.array([w for w, _ in MIXTURE])
    comp = np.searchsorted(np.cumsum(weights), stream(spec.seed, "component").random(n),
                           side="right")
    comp = np.minimum(comp, len(MIXTURE) - 1)
    theta = np.empty(n)
    rng = stream(spec.seed, "theta")
    for k, (_, df) in enumerate(MIXTURE):
        idx = np.flatnonzero(comp == k)
        if df is None:
            theta[idx] = rng.standard_normal(idx.size)
        else:
            theta[idx] = sample_student_t(df, rng, idx.size)
    z = theta + NOISE_SD * stream(spec.seed, "noise").standard_normal(n)
    return ObservationSet(z, np.full(n, NOISE_SD))
