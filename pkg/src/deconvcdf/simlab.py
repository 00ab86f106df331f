"""Monte Carlo engine: contaminated sampling, scoring and scenario tables.

Replication ``k`` of a scenario draws from ``numpy.random.default_rng([seed, k])``,
so results do not depend on execution order or on how replications are
split between workers.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
import numpy as np
from scipy import integrate, special, stats

from .estimators import (
    EvaluationGrid,
    nadaraya_estimate,
    recursive_estimate,
    zero_bandwidth_estimate,
)
from .kernels import SQRT_PI
from .plugin import (
    InvalidPlanError,
    PluginFunctionals,
    estimate_functionals,
    optimal_bandwidth_batch,
    optimal_bandwidth_recursive,
)
from .schedules import BandwidthSchedule, StepsizeSchedule


# ---------------------------------------------------------------------------
# true distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrueDistribution:
    """One of the reference laws: ``normal``, ``mixture`` or ``exponential``.

    ``normal`` takes (mean, variance); ``mixture`` is an equal-weight pair of
    unit-variance normals at +-shift; ``exponential`` takes a rate.
    """

    tag: str
    params: tuple = ()

    def __post_init__(self):
        if self.tag not in ("normal", "mixture", "exponential"):
            raise ValueError(f"unknown distribution {self.tag!r}")

    @classmethod
    def normal(cls, mean=0.0, var=1.0):
        if not var > 0:
            raise ValueError("variance must be positive")
        return cls("normal", (float(mean), float(var)))

    @classmethod
    def mixture(cls, shift=0.5):
        return cls("mixture", (float(shift),))

    @classmethod
    def exponential(cls, rate=0.5):
        if not rate > 0:
            raise ValueError("rate must be positive")
        return cls("exponential", (float(rate),))

    @classmethod
    def parse(cls, text: str) -> "TrueDistribution":
        """Parse ``normal(0,0.5)``, ``mixture(0.5)``, ``exponential(0.5)``."""
        text = text.strip().replace(" ", "")
        name, _, rest = text.partition("(")
        if name not in ("normal", "mixture", "exponential"):
            raise ValueError(f"cannot parse distribution {text!r}")
        try:
            args = tuple(float(a) for a in rest.rstrip(")").replace(";", ",").split(",") if a)
            return getattr(cls, name)(*args)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"cannot parse distribution {text!r}") from exc

    def __str__(self):
        return f"{self.tag}({','.join(f'{p:g}' for p in self.params)})"

    @property
    def csv_label(self) -> str:
        """Comma-free form of ``str(self)``; :meth:`parse` accepts it."""
        return str(self).replace(",", ";")

    @property
    def variance(self) -> float:
        if self.tag == "normal":
            return self.params[1]
        if self.tag == "mixture":
            return 1.0 + self.params[0] ** 2
        return 1.0 / self.params[0] ** 2

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.tag == "normal":
            mu, var = self.params
            return mu + math.sqrt(var) * rng.standard_normal(n)
        if self.tag == "mixture":
            sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
            return sign * self.params[0] + rng.standard_normal(n)
        return rng.exponential(1.0 / self.params[0], n)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.tag == "normal":
            mu, var = self.params
            return special.ndtr((x - mu) / math.sqrt(var))
        if self.tag == "mixture":
            m = self.params[0]
            return 0.5 * (special.ndtr(x - m) + special.ndtr(x + m))
        lam = self.params[0]
        return np.where(x > 0, -np.expm1(-lam * np.maximum(x, 0.0)), 0.0)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.tag == "normal":
            mu, var = self.params
            return stats.norm.pdf(x, mu, math.sqrt(var))
        if self.tag == "mixture":
            m = self.params[0]
            return 0.5 * (stats.norm.pdf(x - m) + stats.norm.pdf(x + m))
        lam = self.params[0]
        return np.where(x >= 0, lam * np.exp(-lam * np.maximum(x, 0.0)), 0.0)

    def pdf_deriv(self, x):
        x = np.asarray(x, dtype=float)
        if self.tag == "normal":
            mu, var = self.params
            return -(x - mu) / var * self.pdf(x)
        if self.tag == "mixture":
            m = self.params[0]
            return -0.5 * ((x - m) * stats.norm.pdf(x - m) + (x + m) * stats.norm.pdf(x + m))
        lam = self.params[0]
        return np.where(x > 0, -lam * self.pdf(x), 0.0)

    def support_breaks(self):
        return [0.0] if self.tag == "exponential" else []


def laplace_pdf(e, sigma):
    return np.exp(-np.abs(e) / sigma) / (2.0 * sigma)


def contaminated_pdf(dist: TrueDistribution, x: float, sigma: float) -> float:
    """f_Y(x) = int f_X(x - e) f_eps(e) de, truncated at |e| <= 40 sigma."""
    if sigma == 0:
        return float(dist.pdf(x))
    breaks = [0.0] + [x - b for b in dist.support_breaks()]
    breaks = [b for b in breaks if -40 * sigma < b < 40 * sigma]
    val, _ = integrate.quad(lambda e: float(dist.pdf(x - e)) * laplace_pdf(e, sigma),
                            -40 * sigma, 40 * sigma, points=breaks or None,
                            epsabs=1e-10, epsrel=1e-8, limit=200)
    return val


def true_functionals(dist: TrueDistribution, sigma: float) -> tuple[float, float]:
    """(int f_Y^2, int (f_X')^2 f_Y) by quadrature."""
    sd = math.sqrt(dist.variance + 2 * sigma**2)
    if dist.tag == "exponential":
        lo, hi = -12 * sd, 20 * sd
    else:
        lo, hi = -12 * sd, 12 * sd
    pts = [0.0] if dist.tag == "exponential" else None
    i1, _ = integrate.quad(lambda t: contaminated_pdf(dist, t, sigma) ** 2, lo, hi,
                           points=pts, limit=200)
    i2, _ = integrate.quad(lambda t: float(dist.pdf_deriv(t)) ** 2
                           * contaminated_pdf(dist, t, sigma), lo, hi, points=pts, limit=200)
    return i1, i2


# ---------------------------------------------------------------------------
# sampling and metrics
# ---------------------------------------------------------------------------

def sigma_from_nsr(var_x: float, nsr: float) -> float:
    """Laplace scale giving Var(eps) / Var(X) = nsr (Var(eps) = 2 sigma^2)."""
    if not var_x > 0:
        raise ValueError(f"signal variance must be positive, got {var_x}")
    if not nsr >= 0:
        raise ValueError(f"noise-to-signal ratio must be nonnegative, got {nsr}")
    return math.sqrt(nsr * var_x / 2.0)


def laplace_from_uniform(u, sigma: float) -> np.ndarray:
    u = np.asarray(u, dtype=float) - 0.5
    return -sigma * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def sample_contaminated(dist: TrueDistribution, n: int, sigma: float,
                        rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw X from ``dist`` and return (X, X + Laplace(0, sigma) noise)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    x = dist.sample(rng, n)
    if sigma == 0:
        return x, x.copy()
    eps = laplace_from_uniform(rng.random(n), sigma)
    return x, x + eps


def rmre(estimate, truth, threshold: float = 0.01) -> float:
    """Mean of |estimate / truth - 1| over points with |truth| > threshold."""
    est = np.asarray(estimate, dtype=float)
    ref = np.asarray(truth, dtype=float)
    if est.shape != ref.shape:
        raise ValueError("estimate and truth differ in length")
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    keep = np.abs(ref) > threshold
    if not keep.any():
        raise ValueError("no reference value exceeds the threshold")
    return float(np.mean(np.abs(est[keep] / ref[keep] - 1.0)))


def pearson_cor(estimate, truth) -> float:
    est = np.asarray(estimate, dtype=float)
    ref = np.asarray(truth, dtype=float)
    if est.shape != ref.shape or est.size < 2:
        raise ValueError("need two equal-length sequences of at least 2 values")
    if np.ptp(est) == 0 or np.ptp(ref) == 0:
        raise ValueError("correlation undefined for a constant sequence")
    return float(np.clip(np.corrcoef(est, ref)[0, 1], -1.0, 1.0))


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimatorSpec:
    """``nadaraya`` or ``recursive`` with a stepsize constant."""

    kind: str
    gamma0: float | None = None

    def __post_init__(self):
        if self.kind not in ("nadaraya", "recursive"):
            raise ValueError(f"unknown estimator {self.kind!r}")
        if self.kind == "recursive" and not (self.gamma0 and self.gamma0 > 2 / 7):
            raise ValueError("recursive estimators need gamma0 > 2/7")

    @classmethod
    def parse(cls, text: str) -> "EstimatorSpec":
        text = text.strip().replace(" ", "")
        if text == "nadaraya":
            return cls("nadaraya")
        if text.startswith("recursive(") and text.endswith(")"):
            return cls("recursive", _parse_number(text[len("recursive("):-1]))
        raise ValueError(f"cannot parse estimator {text!r}")

    @property
    def label(self) -> str:
        if self.kind == "nadaraya":
            return "nadaraya"
        return f"recursive({self.gamma0:.6g})"


def _parse_number(text: str) -> float:
    if "/" in text:
        num, den = text.split("/")
        return float(num) / float(den)
    return float(text)


DEFAULT_ESTIMATORS = (
    EstimatorSpec("nadaraya"),
    EstimatorSpec("recursive", 2 / 3),
    EstimatorSpec("recursive", 1.0),
    EstimatorSpec("recursive", 4 / 3),
    EstimatorSpec("recursive", 5 / 3),
)


@dataclass(frozen=True)
class ScenarioConfig:
    distribution: TrueDistribution
    n: int
    nsr: float
    reps: int = 500
    seed: int = 0
    estimators: tuple = DEFAULT_ESTIMATORS
    grid_points: int = 101
    grid_pad: float = 3.0
    rmre_threshold: float = 0.01
    batch_i2_normalization: str = "printed"

    def __post_init__(self):
        if self.batch_i2_normalization not in ("printed", "pilot"):
            raise ValueError(f"unknown batch_i2_normalization {self.batch_i2_normalization!r}")
        if self.n < 5:
            raise ValueError(f"n must be at least 5, got {self.n}")
        if self.reps < 1:
            raise ValueError(f"reps must be at least 1, got {self.reps}")
        if not self.nsr >= 0:
            raise ValueError(f"nsr must be nonnegative, got {self.nsr}")
        if not self.estimators:
            raise ValueError("no estimators requested")
        if self.grid_points < 2:
            raise ValueError("grid needs at least two points")
        if not self.rmre_threshold > 0:
            raise ValueError("rmre_threshold must be positive")

    @property
    def sigma(self) -> float:
        return sigma_from_nsr(self.distribution.variance, self.nsr)


@dataclass
class EstimatorMetrics:
    estimator: EstimatorSpec
    rmre: float
    cor: float
    cpu_seconds: float
    used_reps: int
    excluded_reps: int


@dataclass
class MetricsReport:
    config: ScenarioConfig
    rows: list = field(default_factory=list)
    per_rep_rmre: dict = field(default_factory=dict)

    def by_label(self) -> dict:
        return {row.estimator.label: row for row in self.rows}


@dataclass
class ReplicationResult:
    rmre: dict
    cor: dict
    cpu: dict
    invalid: set


def _plans(y, sigma, specs, batch_normalization="printed"):
    """Bandwidth schedule per estimator; InvalidPlanError marks a lost label."""
    n = y.size
    plans, cpu, invalid = {}, {}, set()
    need_batch = any(s.kind == "nadaraya" for s in specs)
    need_rec = any(s.kind == "recursive" for s in specs)
    funcs = {}
    for method, needed in (("batch", need_batch), ("recursive", need_rec)):
        if not needed:
            continue
        t0 = time.process_time()
        try:
            funcs[method] = (estimate_functionals(y, sigma, method, batch_normalization)
                             if sigma > 0 else None)
        except (InvalidPlanError, ValueError) as exc:
            funcs[method] = exc
        cpu[method] = time.process_time() - t0
    for spec in specs:
        method = "batch" if spec.kind == "nadaraya" else "recursive"
        f = funcs[method]
        t0 = time.process_time()
        if isinstance(f, Exception):
            invalid.add(spec.label)
            continue
        if f is None:
            # no noise: the optimal constant degenerates to zero bandwidth
            plans[spec.label] = None
        elif spec.kind == "nadaraya":
            plan = optimal_bandwidth_batch(f.i1, f.i2, sigma, n)
            plans[spec.label] = BandwidthSchedule(plan.h_n, 0.0)
        else:
            plan = optimal_bandwidth_recursive(f.i1, f.i2, sigma, spec.gamma0, n)
            plans[spec.label] = BandwidthSchedule(plan.c, plan.a)
        cpu[spec.label] = time.process_time() - t0 + cpu[method]
    return plans, cpu, invalid


def run_replication(config: ScenarioConfig, k: int) -> ReplicationResult:
    """Replication ``k`` of a scenario, seeded from (seed, k) only."""
    rng = np.random.default_rng([config.seed, k])
    sigma = config.sigma
    _, y = sample_contaminated(config.distribution, config.n, sigma, rng)
    plans, cpu, invalid = _plans(y, sigma, config.estimators, config.batch_i2_normalization)
    h_max = max((p.c for p in plans.values() if p is not None), default=0.0)
    grid = EvaluationGrid.around(y, h_max, config.grid_points, config.grid_pad)
    truth = config.distribution.cdf(grid.points)
    out_rmre, out_cor = {}, {}
    for spec in config.estimators:
        label = spec.label
        if label in invalid:
            continue
        sched = plans[label]
        t0 = time.process_time()
        if sched is None:
            est = zero_bandwidth_estimate(y, grid, spec.gamma0)
        elif spec.kind == "nadaraya":
            est = nadaraya_estimate(y, sched.c, sigma, grid)
        else:
            est = recursive_estimate(y, grid, sigma, StepsizeSchedule(spec.gamma0), sched)
        cpu[label] += time.process_time() - t0
        out_rmre[label] = rmre(est, truth, config.rmre_threshold)
        out_cor[label] = pearson_cor(est, truth)
    cpu = {s.label: cpu.get(s.label, 0.0) for s in config.estimators}
    return ReplicationResult(out_rmre, out_cor, cpu, invalid)


def run_scenario(config: ScenarioConfig, workers: int = 1) -> MetricsReport:
    """Run every replication and average the metrics per estimator."""
    indices = range(config.reps)
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(run_replication, [config] * config.reps, indices))
    else:
        results = [run_replication(config, k) for k in indices]
    report = MetricsReport(config)
    for spec in config.estimators:
        label = spec.label
        rm = np.array([r.rmre[label] for r in results if label in r.rmre])
        co = np.array([r.cor[label] for r in results if label in r.cor])
        cpu = math.fsum(r.cpu[label] for r in results)
        excluded = config.reps - rm.size
        report.rows.append(EstimatorMetrics(
            estimator=spec,
            rmre=float(rm.mean()) if rm.size else math.nan,
            cor=float(co.mean()) if co.size else math.nan,
            cpu_seconds=cpu,
            used_reps=int(rm.size),
            excluded_reps=int(excluded),
        ))
        report.per_rep_rmre[label] = [r.rmre.get(label, math.nan) for r in results]
    return report


# ---------------------------------------------------------------------------
# asymptotic probes
# ---------------------------------------------------------------------------

@dataclass
class BiasVarianceProbe:
    mc_bias: float
    mc_var: float
    predicted_bias: float
    predicted_var: float
    mc_bias_se: float
    h_n: float
    sigma: float

    @property
    def bias_ratio(self) -> float:
        return self.mc_bias / self.predicted_bias

    @property
    def var_ratio(self) -> float:
        return self.mc_var / self.predicted_var


@dataclass
class NormalitySummary:
    skewness: float
    excess_kurtosis: float
    qq_deviation: float
    reps: int


PROBE_NSR = 10.0


def _probe_paths(dist, x, n, gamma0, reps, seed, nsr, c):
    """Final F_n(x) of ``reps`` independent recursive runs, plus constants.

    ``c`` defaults to the AMISE-optimal constant from quadrature values of
    the functionals.
    """
    if not gamma0 > 2 / 7:
        raise ValueError(f"gamma0 must exceed 2/7, got {gamma0}")
    if reps < 2 or n < 1:
        raise ValueError("need reps >= 2 and n >= 1")
    from .kernels import deconv_cdf_kernel

    sigma = sigma_from_nsr(dist.variance, nsr)
    if c is None:
        i1, i2 = true_functionals(dist, sigma)
        c = optimal_bandwidth_recursive(i1, i2, sigma, gamma0, n).c
    rng = np.random.default_rng([seed, 0x5eed])
    values = np.zeros(reps)
    block = 500
    k = 0
    while k < n:
        m = min(block, n - k)
        _, y = sample_contaminated(dist, reps * m, sigma, rng)
        y = y.reshape(m, reps)
        for row in y:
            k += 1
            h = c * k ** (-1 / 7)
            g = gamma0 / k
            values = (1.0 - g) * values + g * deconv_cdf_kernel((x - row) / h, (sigma / h) ** 2)
    return values, sigma, c


def bias_variance_probe(dist: TrueDistribution, x: float, n: int, gamma0: float = 1.0,
                        reps: int = 2000, seed: int = 0, nsr: float = PROBE_NSR,
                        c: float | None = None) -> BiasVarianceProbe:
    """Monte Carlo bias and variance of F_n(x) next to their leading-order predictions.

    Bandwidth h_k = c k^(-1/7) with stepsize gamma0 / k. The variance
    prediction keeps only the sigma^4 h^-3 term, which dominates once the
    noise level is high enough for the chosen n.
    """
    values, sigma, c = _probe_paths(dist, x, n, gamma0, reps, seed, nsr, c)
    a, xi = 1 / 7, 1 / gamma0
    h_n = c * n ** (-a)
    gamma_n = gamma0 / n
    pred_bias = h_n**2 * float(dist.pdf_deriv(x)) / (2 * (1 - 2 * a * xi))
    pred_var = (sigma**4 / (4 * SQRT_PI)) * gamma_n * h_n ** (-3) \
        / (2 - (1 - 3 * a) * xi) * contaminated_pdf(dist, x, sigma)
    mc_var = float(np.var(values, ddof=1))
    return BiasVarianceProbe(
        mc_bias=float(values.mean() - dist.cdf(x)),
        mc_var=mc_var,
        predicted_bias=pred_bias,
        predicted_var=pred_var,
        mc_bias_se=math.sqrt(mc_var / reps),
        h_n=h_n,
        sigma=sigma,
    )


def clt_probe(dist: TrueDistribution, x: float, n: int, gamma0: float = 1.0,
              reps: int = 2000, seed: int = 0, nsr: float = PROBE_NSR,
              c: float | None = None) -> NormalitySummary:
    values, _, c = _probe_paths(dist, x, n, gamma0, reps, seed, nsr, c)
    h_n = c * n ** (-1 / 7)
    scaled = math.sqrt(n / gamma0 * h_n**3) * values
    sd = scaled.std(ddof=1)
    if not sd > 0:
        raise ValueError("probe values are constant; nothing to standardise")
    z = np.sort((scaled - scaled.mean()) / sd)
    probs = (np.arange(1, reps + 1) - 0.5) / reps
    qq = float(np.max(np.abs(z - stats.norm.ppf(probs))[int(0.01 * reps):int(0.99 * reps) + 1]))
    return NormalitySummary(
        skewness=float(stats.skew(z)),
        excess_kurtosis=float(stats.kurtosis(z)),
        qq_deviation=qq,
        reps=reps,
    )


# ---------------------------------------------------------------------------
# single-dataset pipeline and the small-sample AMISE comparison
# ---------------------------------------------------------------------------

@dataclass
class DatasetFit:
    """Both plug-in pipelines applied to one contaminated sample."""

    grid: np.ndarray
    f_recursive: np.ndarray
    f_nadaraya: np.ndarray
    sigma: float
    recursive: PluginFunctionals
    batch: PluginFunctionals
    h_recursive: float
    h_nadaraya: float
    amise_recursive: float
    amise_nadaraya: float


def fit_contaminated(y, sigma: float, gamma0: float = 1.0, grid=None, grid_points: int = 101,
                     batch_normalization: str = "printed") -> DatasetFit:
    """Plug-in bandwidths, AMISE estimates and both CDF estimates for ``y``.

    Raises :class:`InvalidPlanError` when either pipeline has no usable I2.
    """
    y = np.asarray(y, dtype=float).ravel()
    if not sigma > 0:
        raise ValueError("the plug-in pipelines need a positive noise scale")
    n = y.size
    rec = estimate_functionals(y, sigma, "recursive", batch_normalization)
    bat = estimate_functionals(y, sigma, "batch", batch_normalization)
    plan_r = optimal_bandwidth_recursive(rec.i1, rec.i2, sigma, gamma0, n)
    plan_b = optimal_bandwidth_batch(bat.i1, bat.i2, sigma, n)
    if grid is None:
        grid = EvaluationGrid.around(y, max(plan_r.c, plan_b.h_n), grid_points)
    f_r = recursive_estimate(y, grid, sigma, StepsizeSchedule(gamma0),
                             BandwidthSchedule(plan_r.c, plan_r.a))
    f_b = nadaraya_estimate(y, plan_b.h_n, sigma, grid)
    pts = grid.points if isinstance(grid, EvaluationGrid) else np.asarray(grid, dtype=float)
    return DatasetFit(pts, f_r, f_b, sigma, rec, bat, plan_r.h_n, plan_b.h_n,
                      plan_r.amise, plan_b.amise)


@dataclass
class AmiseComparison:
    amise_recursive: np.ndarray
    amise_batch: np.ndarray

    @property
    def runs(self) -> int:
        return self.amise_recursive.size

    @property
    def recursive_wins(self) -> int:
        # invalid runs carry nan and never count as a win
        return int(np.sum(self.amise_recursive < self.amise_batch))


def amise_comparison(dist: TrueDistribution, n: int, nsr: float, runs: int = 200,
                     seed: int = 0, gamma0: float = 1.0,
                     batch_normalization: str = "printed") -> AmiseComparison:
    """Estimated AMISE of both estimators on ``runs`` seeded samples."""
    sigma = sigma_from_nsr(dist.variance, nsr)
    ar = np.full(runs, np.nan)
    ab = np.full(runs, np.nan)
    for k in range(runs):
        rng = np.random.default_rng([seed, k])
        _, y = sample_contaminated(dist, n, sigma, rng)
        try:
            rec = estimate_functionals(y, sigma, "recursive", batch_normalization)
            bat = estimate_functionals(y, sigma, "batch", batch_normalization)
        except InvalidPlanError:
            continue
        ar[k] = optimal_bandwidth_recursive(rec.i1, rec.i2, sigma, gamma0, n).amise
        ab[k] = optimal_bandwidth_batch(bat.i1, bat.i2, sigma, n).amise
    return AmiseComparison(ar, ab)
