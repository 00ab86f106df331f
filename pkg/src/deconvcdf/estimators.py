"""Recursive (stochastic approximation) and batch deconvolution CDF estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import deconv_cdf_kernel
from .schedules import BandwidthSchedule, StepsizeSchedule


@dataclass(frozen=True)
class EvaluationGrid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        if pts.size < 2:
            raise ValueError("grid needs at least two points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.size

    @classmethod
    def linspace(cls, lo: float, hi: float, num: int = 101) -> "EvaluationGrid":
        return cls(np.linspace(lo, hi, num))

    @classmethod
    def around(cls, data, h_max: float, num: int = 101, pad: float = 3.0) -> "EvaluationGrid":
        """Equally spaced grid on [min(data) - pad*h_max, max(data) + pad*h_max]."""
        data = np.asarray(data, dtype=float)
        return cls.linspace(data.min() - pad * h_max, data.max() + pad * h_max, num)


def _as_grid(grid) -> EvaluationGrid:
    return grid if isinstance(grid, EvaluationGrid) else EvaluationGrid(grid)


@dataclass
class RecursiveCdfState:
    """Streaming estimate on a fixed grid.

    Mutated in place by :func:`recursive_update`; not safe to share between
    writers.
    """

    grid: EvaluationGrid
    sigma: float
    stepsize: StepsizeSchedule
    bandwidth: BandwidthSchedule
    k: int = 0
    values: np.ndarray = field(default=None)

    def __post_init__(self):
        self.grid = _as_grid(self.grid)
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ValueError(f"noise scale must be nonnegative, got {self.sigma}")
        if self.values is None:
            self.values = np.zeros(len(self.grid))

    def update(self, y: float) -> "RecursiveCdfState":
        return recursive_update(self, y)

    def extend(self, ys) -> "RecursiveCdfState":
        for y in np.asarray(ys, dtype=float).ravel():
            recursive_update(self, y)
        return self

    def evaluate(self, x):
        return recursive_evaluate(self, x)


def recursive_init(grid, sigma: float, stepsize: StepsizeSchedule,
                   bandwidth: BandwidthSchedule) -> RecursiveCdfState:
    return RecursiveCdfState(grid=_as_grid(grid), sigma=sigma, stepsize=stepsize,
                             bandwidth=bandwidth)


def recursive_update(state: RecursiveCdfState, y: float) -> RecursiveCdfState:
    """Fold one contaminated observation into the running estimate."""
    y = float(y)
    if not math.isfinite(y):
        raise ValueError(f"observation must be finite, got {y}")
    k = state.k + 1
    g = state.stepsize.gamma0 / k
    h = state.bandwidth.c * k ** (-state.bandwidth.a)
    r = (state.sigma / h) ** 2
    z = deconv_cdf_kernel((state.grid.points - y) / h, r)
    state.values = (1.0 - g) * state.values + g * z
    state.k = k
    return state


def recursive_evaluate(state: RecursiveCdfState, x):
    pts = state.grid.points
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < pts[0]) or np.any(x_arr > pts[-1]):
        raise ValueError("evaluation point outside the grid hull")
    out = np.interp(x_arr, pts, state.values)
    return float(out) if out.ndim == 0 else out


def recursive_estimate(data, grid, sigma: float, stepsize: StepsizeSchedule,
                       bandwidth: BandwidthSchedule) -> np.ndarray:
    """Run the recursion over ``data`` in order; returns grid values.

    Vectorised over observations; identical to repeated
    :func:`recursive_update` calls.
    """
    y = np.asarray(data, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("no observations")
    if not np.all(np.isfinite(y)):
        raise ValueError("observations must be finite")
    pts = _as_grid(grid).points
    n = y.size
    gammas = stepsize.values(n)
    hs = bandwidth.values(n)
    z = deconv_cdf_kernel((pts[None, :] - y[:, None]) / hs[:, None],
                          ((sigma / hs) ** 2)[:, None])
    values = np.zeros(pts.size)
    for k in range(n):
        values = (1.0 - gammas[k]) * values + gammas[k] * z[k]
    return values


def nadaraya_estimate(data, h: float, sigma: float, grid) -> np.ndarray:
    """Batch deconvolution CDF estimate: mean of KK_eps((x - Y_i) / h)."""
    y = np.asarray(data, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("no observations")
    if not (h > 0 and math.isfinite(h)):
        raise ValueError(f"bandwidth must be positive, got {h}")
    if not np.all(np.isfinite(y)):
        raise ValueError("observations must be finite")
    pts = _as_grid(grid).points
    r = (sigma / h) ** 2
    z = deconv_cdf_kernel((pts[None, :] - y[:, None]) / h, r)
    return z.mean(axis=0)


def monotone_clip(values) -> np.ndarray:
    """Clip to [0, 1] and take the running maximum.

    A presentation helper; metrics always use raw estimates.
    """
    v = np.clip(np.asarray(values, dtype=float), 0.0, 1.0)
    return np.maximum.accumulate(v)


def zero_bandwidth_estimate(data, grid, gamma0: float | None = None) -> np.ndarray:
    """Limit of either estimator as the bandwidth goes to 0 with no noise.

    ``gamma0=None`` gives the empirical CDF (the batch limit); otherwise the
    recursion weights observation k by gamma_k prod_{j>k} (1 - gamma_j).
    A grid point equal to an observation receives half its weight.
    """
    from .schedules import averaging_weights

    y = np.asarray(data, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("no observations")
    pts = _as_grid(grid).points
    step = np.where(pts[None, :] > y[:, None], 1.0,
                    np.where(pts[None, :] == y[:, None], 0.5, 0.0))
    if gamma0 is None:
        return step.mean(axis=0)
    w = averaging_weights(gamma0 / np.arange(1, y.size + 1))
    return w @ step
