"""Stepsize, bandwidth and pilot-bandwidth sequences."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DegenerateSampleError(ValueError):
    """Sample has no spread, so no data-driven scale exists."""


def _check_index(k):
    k = np.asarray(k)
    if np.any(k < 1):
        raise ValueError("sequence index starts at 1")
    return k


@dataclass(frozen=True)
class StepsizeSchedule:
    """gamma_k = gamma0 / k."""

    gamma0: float

    def __post_init__(self):
        if not (self.gamma0 > 0 and math.isfinite(self.gamma0)):
            raise ValueError(f"gamma0 must be positive, got {self.gamma0}")

    def __call__(self, k):
        return stepsize(self, k)

    def values(self, n: int) -> np.ndarray:
        return self.gamma0 / np.arange(1, n + 1, dtype=float)


@dataclass(frozen=True)
class BandwidthSchedule:
    """h_k = c * k**(-a)."""

    c: float
    a: float = 1.0 / 7.0

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ValueError(f"bandwidth scale must be positive, got {self.c}")
        if not 0 <= self.a < 1:
            raise ValueError(f"bandwidth exponent must lie in [0, 1), got {self.a}")

    def __call__(self, k):
        return bandwidth_at(self, k)

    def values(self, n: int) -> np.ndarray:
        return self.c * np.arange(1, n + 1, dtype=float) ** (-self.a)


@dataclass(frozen=True)
class PilotBandwidthSpec:
    """Pilot sequence b_k = scale * k**(-beta)."""

    beta: float
    scale: float

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError(f"pilot exponent must lie in (0, 1), got {self.beta}")
        if not self.scale > 0:
            raise ValueError(f"pilot scale must be positive, got {self.scale}")

    @classmethod
    def from_sample(cls, sample, beta: float) -> "PilotBandwidthSpec":
        return cls(beta=beta, scale=pilot_scale(sample))

    def at(self, k):
        k = _check_index(k)
        out = self.scale * np.asarray(k, dtype=float) ** (-self.beta)
        return float(out) if out.ndim == 0 else out

    def values(self, n: int) -> np.ndarray:
        return self.scale * np.arange(1, n + 1, dtype=float) ** (-self.beta)


def stepsize(s: StepsizeSchedule, k):
    k = _check_index(k)
    out = s.gamma0 / np.asarray(k, dtype=float)
    return float(out) if out.ndim == 0 else out


def bandwidth_at(b: BandwidthSchedule, k):
    k = _check_index(k)
    out = b.c * np.asarray(k, dtype=float) ** (-b.a)
    return float(out) if out.ndim == 0 else out


def pilot_scale(sample) -> float:
    """min(sample std, IQR / 1.349) with type-7 quartiles."""
    x = np.asarray(sample, dtype=float).ravel()
    if x.size < 2:
        raise DegenerateSampleError("need at least two observations")
    if not np.all(np.isfinite(x)):
        raise ValueError("sample contains non-finite values")
    s = float(np.std(x, ddof=1))
    q1, q3 = np.percentile(x, [25.0, 75.0], method="linear")
    iqr = float(q3 - q1)
    if s == 0.0:
        raise DegenerateSampleError("all observations are equal; scale is zero")
    # heavy ties can zero the IQR while s > 0; fall back to s then. The
    # relative cut keeps rounding residue from counting as spread.
    if iqr <= 1e-12 * s:
        return s
    return min(s, iqr / 1.349)


def gs_index_probe(seq) -> float:
    """n * (1 - v_{n-1} / v_n) at the last index of a positive sequence.

    For a regularly varying sequence in GS(g) this tends to g.
    """
    v = np.asarray(seq, dtype=float)
    if v.size < 3:
        raise ValueError("need at least three terms")
    if np.any(v <= 0):
        raise ValueError("sequence terms must be positive")
    n = v.size
    return float(n * (1.0 - v[-2] / v[-1]))


def averaging_weights(gammas) -> np.ndarray:
    """Weights gamma_k * prod_{j=k+1..n} (1 - gamma_j), k = 1..n.

    Equals Pi_n Pi_k^-1 gamma_k without dividing by Pi_k, which vanishes
    once some gamma_j equals 1.
    """
    g = np.asarray(gammas, dtype=float)
    tail = np.ones_like(g)
    # tail[k] = prod_{j>k} (1 - g[j])
    if g.size > 1:
        tail[:-1] = np.cumprod((1.0 - g[::-1])[:-1])[::-1]
    return g * tail


def weighted_sum_limit(gamma0: float, a: float, n: int, m: float = 1.0) -> float:
    """v_n Pi_n^m sum_k Pi_k^-m gamma_k / v_k for v_k = k**(-a), gamma_k = gamma0/k.

    Accumulated forward as S_k = (1 - gamma_k)^m S_{k-1} + gamma_k / v_k.
    """
    s = 0.0
    for k in range(1, n + 1):
        g = gamma0 / k
        s = (1.0 - g) ** m * s + g * k**a
    return s * n ** (-a)
