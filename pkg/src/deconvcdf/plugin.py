"""Plug-in estimates of the AMISE functionals and the resulting bandwidths.

The two functionals are ``I1 = int f_Y^2`` and ``I2 = int (f_X')^2 f_Y``.
Recursive estimators weight observation k by
``gamma_k * prod_{j>k} (1 - gamma_j)`` with ``gamma_k = gamma0 / k`` and use
a pilot sequence ``b_k = scale * k**(-beta)``; batch estimators use a single
pilot bandwidth at ``k = n``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .kernels import SQRT_PI, deconv_kernel, deconv_kernel_deriv
from .schedules import PilotBandwidthSpec, averaging_weights

log = logging.getLogger(__name__)

I1_GAMMA0 = 1.93
I1_BETA = 2.0 / 9.0
I2_GAMMA0 = 1.736
I2_BETA = 1.0 / 6.0
BANDWIDTH_EXPONENT = 1.0 / 7.0
I2_SOFT_CAP = 2000


class InvalidPlanError(ValueError):
    """No usable bandwidth can be formed from the functional estimates."""


@dataclass(frozen=True)
class FunctionalEstimate:
    """A functional estimate plus whether it is usable as a denominator."""

    value: float

    @property
    def needs_fallback(self) -> bool:
        return not (self.value > 0 and math.isfinite(self.value))

    def __float__(self):
        return self.value


@dataclass(frozen=True)
class PluginFunctionals:
    i1: float
    i2: float
    method: Literal["recursive", "batch"]
    i2_fallback: bool = False

    def __post_init__(self):
        if not self.i2 > 0:
            raise InvalidPlanError(f"I2 estimate must be positive, got {self.i2}")


@dataclass(frozen=True)
class BandwidthPlan:
    c: float
    amise: float
    a: float = BANDWIDTH_EXPONENT
    gamma0: float | None = None
    n: int = 1

    def __post_init__(self):
        if not self.c > 0:
            raise InvalidPlanError(f"bandwidth constant must be positive, got {self.c}")
        if self.gamma0 is not None and not self.gamma0 > 2.0 / 7.0:
            raise InvalidPlanError("recursive plans need gamma0 > 2/7")

    @property
    def h_n(self) -> float:
        """Bandwidth at the last index (the batch bandwidth)."""
        return self.c * self.n ** (-self.a)


def _prepare(data, sigma, n_min):
    y = np.asarray(data, dtype=float).ravel()
    if y.size < n_min:
        raise ValueError(f"need at least {n_min} observations, got {y.size}")
    if not np.all(np.isfinite(y)):
        raise ValueError("observations must be finite")
    if not sigma >= 0:
        raise ValueError(f"noise scale must be nonnegative, got {sigma}")
    return y


def _pilot(y, beta, scale):
    if scale is None:
        return PilotBandwidthSpec.from_sample(y, beta)
    return PilotBandwidthSpec(beta, scale)


def _diffs(y):
    # d[i, k] = Y_i - Y_k
    return y[:, None] - y[None, :]


def i1_recursive(data, sigma: float, gamma0: float = I1_GAMMA0,
                 beta: float = I1_BETA, scale: float | None = None) -> float:
    """Recursive estimate of I1, all (i, k) pairs including i == k."""
    y = _prepare(data, sigma, 2)
    n = y.size
    pilot = _pilot(y, beta, scale)
    b = pilot.values(n)
    w = averaging_weights(gamma0 / np.arange(1, n + 1))
    kern = deconv_kernel(_diffs(y) / b[None, :], ((sigma / b) ** 2)[None, :])
    # sum over i first, then the weighted sum over k
    col = np.sum(kern, axis=0)
    return float(math.fsum(w * col / b) / n)


def _i2_from_derivs(d, weights):
    """(1/n) sum_i sum_{j != k} a_ij a_ik with a_ij = weights_j * d_ij."""
    a = d * weights[None, :]
    full = np.sum(a, axis=1) ** 2
    diag = np.sum(a * a, axis=1)
    return math.fsum(full - diag) / d.shape[0]


def i2_recursive(data, sigma: float, gamma0: float = I2_GAMMA0,
                 beta: float = I2_BETA, scale: float | None = None) -> FunctionalEstimate:
    """Recursive estimate of I2.

    The j != k triple sum factors per i as (sum_j a_ij)^2 - sum_j a_ij^2,
    so the cost is O(n^2).
    """
    y = _prepare(data, sigma, 3)
    n = y.size
    if n > I2_SOFT_CAP:
        log.warning("I2 estimate with n=%d exceeds the soft cap %d", n, I2_SOFT_CAP)
    try:
        pilot = _pilot(y, beta, scale)
    except ValueError:
        return FunctionalEstimate(0.0)
    b = pilot.values(n)
    w = averaging_weights(gamma0 / np.arange(1, n + 1)) / b**2
    d = deconv_kernel_deriv(_diffs(y) / b[None, :], ((sigma / b) ** 2)[None, :])
    return FunctionalEstimate(_i2_from_derivs(d, w))


def i1_batch(data, sigma: float, beta: float = I1_BETA, scale: float | None = None) -> float:
    y = _prepare(data, sigma, 2)
    n = y.size
    b = _pilot(y, beta, scale).at(n)
    kern = deconv_kernel(_diffs(y) / b, (sigma / b) ** 2)
    off = math.fsum(kern.ravel()) - math.fsum(np.diag(kern))
    return off / (n * (n - 1) * b)


def i2_batch(data, sigma: float, beta: float = I2_BETA,
             normalization: Literal["pilot", "printed"] = "pilot",
             scale: float | None = None) -> FunctionalEstimate:
    """Batch estimate of I2 over pairs j != k.

    ``normalization="pilot"`` divides by ``n^3 b'^4`` with the same pilot
    ``b'`` (exponent ``beta``) used inside the kernel, which makes the
    estimate consistent. ``"printed"`` divides by ``n^3 b^4`` with the
    ``I1`` pilot (exponent 2/9) instead; this inflates the value by
    ``n^(4 (2/9 - beta))``. The plug-in pipeline in
    :func:`estimate_functionals` uses ``"printed"`` by default.
    """
    if normalization not in ("pilot", "printed"):
        raise ValueError(f"unknown normalization {normalization!r}")
    y = _prepare(data, sigma, 3)
    n = y.size
    if n > I2_SOFT_CAP:
        log.warning("I2 estimate with n=%d exceeds the soft cap %d", n, I2_SOFT_CAP)
    try:
        b = _pilot(y, beta, scale).at(n)
    except ValueError:
        return FunctionalEstimate(0.0)
    d = deconv_kernel_deriv(_diffs(y) / b, (sigma / b) ** 2)
    # 1/(n^3 b^4) sum_i sum_{j != k}  ==  (1/n) sum_i with weights 1/(n b^2)
    val = _i2_from_derivs(d, np.full(n, 1.0 / (n * b * b)))
    if normalization == "printed":
        val *= (b / _pilot(y, I1_BETA, scale).at(n)) ** 4
    return FunctionalEstimate(val)


def i2_batch_direct(data, sigma: float, beta: float = I2_BETA,
                    scale: float | None = None) -> float:
    """Literal O(n^3) triple sum; reference for :func:`i2_batch`."""
    y = _prepare(data, sigma, 3)
    n = y.size
    b = _pilot(y, beta, scale).at(n)
    d = deconv_kernel_deriv(_diffs(y) / b, (sigma / b) ** 2)
    total = 0.0
    for i in range(n):
        for j in range(n):
            for k in range(n):
                if j != k:
                    total += d[i, j] * d[i, k]
    return total / (n**3 * b**4)


def i2_recursive_direct(data, sigma: float, gamma0: float = I2_GAMMA0,
                        beta: float = I2_BETA, scale: float | None = None) -> float:
    """Literal O(n^3) triple sum with explicit Pi products; needs gamma0 != 1."""
    y = _prepare(data, sigma, 3)
    n = y.size
    b = _pilot(y, beta, scale).values(n)
    g = gamma0 / np.arange(1, n + 1)
    pi = np.cumprod(1.0 - g)
    total = 0.0
    for i in range(n):
        for j in range(n):
            for k in range(n):
                if j == k:
                    continue
                dj = deconv_kernel_deriv((y[i] - y[j]) / b[j], (sigma / b[j]) ** 2)
                dk = deconv_kernel_deriv((y[i] - y[k]) / b[k], (sigma / b[k]) ** 2)
                total += (g[j] * g[k] / (pi[j] * pi[k] * b[j] ** 2 * b[k] ** 2)) * dj * dk
    return pi[-1] ** 2 * total / n


def optimal_bandwidth_recursive(i1: float, i2: float, sigma: float, gamma0: float = 1.0,
                                n: int = 1) -> BandwidthPlan:
    """Bandwidth h_k = c * k**(-1/7) minimising the recursive AMISE."""
    _check_recursive(i1, i2, gamma0, n)
    c = (3.0 * sigma**4 / (8.0 * SQRT_PI)) ** (1 / 7) * (gamma0 - 2 / 7) ** (1 / 7) \
        * (i1 / i2) ** (1 / 7)
    return BandwidthPlan(c=c, amise=amise_recursive(i1, i2, sigma, gamma0, n),
                         gamma0=gamma0, n=n)


def optimal_bandwidth_batch(i1: float, i2: float, sigma: float, n: int = 1) -> BandwidthPlan:
    """Constant bandwidth h = c * n**(-1/7) minimising the batch AMISE."""
    _check_batch(i1, i2, n)
    c = (3.0 * sigma**4 / (4.0 * SQRT_PI)) ** (1 / 7) * (i1 / i2) ** (1 / 7)
    return BandwidthPlan(c=c, amise=amise_batch(i1, i2, sigma, n), n=n)


def amise_recursive(i1: float, i2: float, sigma: float, gamma0: float = 1.0,
                    n: int = 1) -> float:
    _check_recursive(i1, i2, gamma0, n)
    return (7 / 12) * (3.0 * sigma**4 / (8.0 * SQRT_PI)) ** (4 / 7) \
        * gamma0**2 * (gamma0 - 2 / 7) ** (-10 / 7) \
        * i1 ** (4 / 7) * i2 ** (3 / 7) * n ** (-4 / 7)


def amise_batch(i1: float, i2: float, sigma: float, n: int = 1) -> float:
    _check_batch(i1, i2, n)
    return (7 / 3) * 0.75 ** (4 / 7) * (sigma**4 / (4.0 * SQRT_PI)) ** (4 / 7) \
        * 0.25 ** (3 / 7) * i1 ** (4 / 7) * i2 ** (3 / 7) * n ** (-4 / 7)


def amise_recursive_objective(h, i1, i2, sigma, gamma0, n, alpha=1.0, a=BANDWIDTH_EXPONENT):
    """Two-term AMISE of the recursive estimator at bandwidth h_n = h."""
    xi = 1.0 / gamma0
    gamma_n = gamma0 / n
    var = sigma**4 / (4 * SQRT_PI * (2 - (alpha - 3 * a) * xi)) * gamma_n * h ** (-3) * i1
    bias = h**4 * i2 / (4 * (1 - 2 * a * xi) ** 2)
    return var + bias


def amise_batch_objective(h, i1, i2, sigma, n):
    return sigma**4 / (4 * SQRT_PI) * i1 / (n * h**3) + h**4 * i2 / 4


def _check_recursive(i1, i2, gamma0, n):
    if not gamma0 > 2.0 / 7.0:
        raise InvalidPlanError(f"gamma0 must exceed 2/7, got {gamma0}")
    _check_batch(i1, i2, n)


def _check_batch(i1, i2, n):
    if not (i2 > 0 and math.isfinite(i2)):
        raise InvalidPlanError(f"I2 must be positive, got {i2}")
    if not (i1 > 0 and math.isfinite(i1)):
        raise InvalidPlanError(f"I1 must be positive, got {i1}")
    if n < 1:
        raise ValueError("n must be at least 1")


def estimate_functionals(data, sigma: float, method: Literal["recursive", "batch"],
                         batch_normalization: Literal["pilot", "printed"] = "printed"
                         ) -> PluginFunctionals:
    """I1 and I2 for one method, with the I2 fallback policy.

    A nonpositive recursive I2 falls back to the batch estimate; if that is
    nonpositive too the plan is invalid. ``batch_normalization`` is passed to
    :func:`i2_batch`.
    """
    if method == "recursive":
        i1 = i1_recursive(data, sigma)
        i2 = i2_recursive(data, sigma)
    elif method == "batch":
        i1 = i1_batch(data, sigma)
        i2 = i2_batch(data, sigma, normalization=batch_normalization)
    else:
        raise ValueError(f"unknown method {method!r}")
    fallback = False
    if i2.needs_fallback and method == "recursive":
        i2 = i2_batch(data, sigma)
        fallback = True
    if i2.needs_fallback:
        raise InvalidPlanError(f"{method} I2 estimate is nonpositive ({i2.value})")
    if not i1 > 0:
        raise InvalidPlanError(f"{method} I1 estimate is nonpositive ({i1})")
    return PluginFunctionals(i1=i1, i2=i2.value, method=method, i2_fallback=fallback)
