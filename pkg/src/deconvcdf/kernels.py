"""Gaussian-kernel deconvoluting kernels for Laplace measurement error.

With a standard normal kernel and Laplace(0, sigma) errors the Fourier
inversion defining the deconvoluting kernel has a closed form in the single
dimensionless ratio ``r = sigma**2 / h**2``::

    K_eps(u)  = phi(u) * (1 + r * (1 - u**2))
    KK_eps(u) = Phi(u) + r * u * phi(u)          # antiderivative of K_eps
    K_eps'(u) = -u * phi(u) * (1 + r * (3 - u**2))

All functions accept scalars or numpy arrays and broadcast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

SQRT_2PI = math.sqrt(2.0 * math.pi)
SQRT_PI = math.sqrt(math.pi)

# beyond this |u| every kernel value is below 1e-300
_CUTOFF = 40.0


@dataclass(frozen=True)
class DeconvKernelParams:
    """Noise scale and bandwidth of one deconvoluting kernel.

    ``r`` is always derived from ``sigma`` and ``h``; it is never passed in.
    Use :meth:`from_ratio` when only the ratio matters.
    """

    sigma: float
    h: float
    r: float = field(init=False)

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError(f"bandwidth must be positive and finite, got {self.h}")
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ValueError(f"noise scale must be nonnegative, got {self.sigma}")
        object.__setattr__(self, "r", (self.sigma / self.h) ** 2)

    @classmethod
    def from_ratio(cls, r: float) -> "DeconvKernelParams":
        if not (r >= 0 and math.isfinite(r)):
            raise ValueError(f"ratio must be nonnegative, got {r}")
        return cls(sigma=math.sqrt(r), h=1.0)


def _ratio(p):
    # a bare ratio may be an array broadcasting against u
    if isinstance(p, DeconvKernelParams):
        return p.r
    return np.asarray(p, dtype=float) if np.ndim(p) else float(p)


def _finish(u, out):
    """Return a float for scalar input, an array otherwise."""
    if np.ndim(u) == 0:
        return float(out)
    return out


def gauss_pdf(u):
    u = np.asarray(u, dtype=float)
    out = np.exp(-0.5 * u * u) / SQRT_2PI
    out = np.where(np.abs(u) > _CUTOFF, 0.0, out)
    return _finish(u, out)


def gauss_cdf(u):
    u = np.asarray(u, dtype=float)
    return _finish(u, special.ndtr(u))


def deconv_kernel(u, p):
    """Deconvoluting kernel evaluated at ``u``; ``p`` is params or a bare ratio.

    Negative for large ``|u|`` whenever ``r > 0``.
    """
    r = _ratio(p)
    u = np.asarray(u, dtype=float)
    out = np.exp(-0.5 * u * u) / SQRT_2PI * (1.0 + r * (1.0 - u * u))
    out = np.where(np.abs(u) > _CUTOFF, 0.0, out)
    return _finish(u, out)


def deconv_cdf_kernel(u, p):
    """Antiderivative of :func:`deconv_kernel`, running from 0 to 1.

    Not confined to [0, 1] when ``r > 0``.
    """
    r = _ratio(p)
    u = np.asarray(u, dtype=float)
    out = special.ndtr(u) + r * u * np.exp(-0.5 * u * u) / SQRT_2PI
    out = np.where(u > _CUTOFF, 1.0, np.where(u < -_CUTOFF, 0.0, out))
    return _finish(u, out)


def deconv_kernel_deriv(u, p):
    r = _ratio(p)
    u = np.asarray(u, dtype=float)
    out = -u * np.exp(-0.5 * u * u) / SQRT_2PI * (1.0 + r * (3.0 - u * u))
    out = np.where(np.abs(u) > _CUTOFF, 0.0, out)
    return _finish(u, out)


def fourier_inversion_oracle(u, p, t_max: float = 12.0, dt: float = 0.01) -> float:
    """Invert the kernel's Fourier transform numerically (trapezoidal rule).

    Integrates ``(2 pi)^-1 cos(t u) exp(-t^2/2) (1 + r t^2)`` over
    ``[-t_max, t_max]``. Used only to validate the closed form.
    """
    if t_max < 8:
        raise ValueError(f"t_max={t_max} too small for 1e-6 accuracy (need >= 8)")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt > 0.05:
        raise ValueError(f"dt={dt} too coarse for 1e-6 accuracy (need <= 0.05)")
    r = _ratio(p)
    m = int(math.ceil(t_max / dt))
    t = np.linspace(-t_max, t_max, 2 * m + 1)
    integrand = np.cos(t * float(u)) * np.exp(-0.5 * t * t) * (1.0 + r * t * t)
    return float(np.trapezoid(integrand, t) / (2.0 * math.pi))


def psi_functional(p, lower: float = -20.0, upper: float = 20.0, points: int = 40001) -> float:
    """``int u K_eps(u) KK_eps(u) du`` by trapezoidal quadrature."""
    if not upper > lower:
        raise ValueError("empty quadrature interval")
    if points < 3:
        raise ValueError("need at least 3 quadrature points")
    u = np.linspace(lower, upper, points)
    vals = u * deconv_kernel(u, p) * deconv_cdf_kernel(u, p)
    return float(np.trapezoid(vals, u))


def psi_closed_form(r: float) -> float:
    """Exact value of :func:`psi_functional` as a polynomial in ``r``."""
    return (1.0 - r - 0.25 * r * r) / (2.0 * SQRT_PI)
