"""Command-line front end: simulate, estimate, kernels, verify.

Every CSV written here starts with ``#`` comment lines holding the tool
version and the resolved configuration as ``key = value`` pairs, so an output
file can be passed back to ``simulate --config`` to repeat the run.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass

import numpy as np

from . import __version__
from . import kernels, plugin, schedules
from .estimators import EvaluationGrid, nadaraya_estimate, recursive_estimate
from .plugin import InvalidPlanError
from .schedules import BandwidthSchedule, DegenerateSampleError, StepsizeSchedule
from .simlab import (
    EstimatorSpec,
    ScenarioConfig,
    TrueDistribution,
    fit_contaminated,
    laplace_from_uniform,
    run_scenario,
    sigma_from_nsr,
)

log = logging.getLogger("deconvcdf")

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_CONFIG = 2
EXIT_PARAM = 3
EXIT_DATA = 4
EXIT_DEGENERATE = 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

SIMULATE_DEFAULTS = {
    "distributions": "normal(0,0.5)",
    "n": "25,50,150",
    "nsr": "0.05,0.1,0.2",
    "reps": "500",
    "seed": "0",
    "estimators": "nadaraya,recursive(2/3),recursive(1),recursive(4/3),recursive(5/3)",
    "grid_points": "101",
    "grid_pad": "3.0",
    "rmre_threshold": "0.01",
    "batch_i2_normalization": "printed",
    "workers": "1",
}


def split_list(text: str) -> list[str]:
    """Split on commas that are not inside parentheses."""
    items, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            items.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    items.append("".join(cur).strip())
    return [s for s in items if s]


def parse_config_text(text: str, allowed) -> dict:
    """Flat ``key = value`` lines; blank lines and ``#`` comments ignored.

    A file that begins with one of our CSV headers is read from its header
    instead, which makes outputs re-ingestable.
    """
    lines = text.splitlines()
    if lines and lines[0].startswith("# deconvcdf "):
        header = []
        for line in lines[1:]:
            if not line.startswith("#"):
                break
            header.append(line[1:])
        lines = header
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliError(EXIT_CONFIG, f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in allowed:
            raise CliError(EXIT_CONFIG, f"config line {lineno}: unknown key {key!r}")
        if key in out:
            raise CliError(EXIT_CONFIG, f"config line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_config(path: str, allowed) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, allowed)


def _typed(key: str, value: str, kind):
    try:
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"key {key!r}: cannot parse {value!r}") from exc


@dataclass
class SimulatePlan:
    settings: dict
    scenarios: list
    workers: int


def build_simulate_plan(settings: dict) -> SimulatePlan:
    s = dict(SIMULATE_DEFAULTS)
    s.update(settings)
    dists = []
    for text in split_list(s["distributions"]):
        try:
            dists.append(TrueDistribution.parse(text))
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, f"key 'distributions': {exc}") from exc
    ns = [_typed("n", v, int) for v in split_list(s["n"])]
    nsrs = [_typed("nsr", v, float) for v in split_list(s["nsr"])]
    specs = []
    for text in split_list(s["estimators"]):
        try:
            specs.append(EstimatorSpec.parse(text))
        except ValueError as exc:
            raise CliError(EXIT_PARAM, f"key 'estimators': {exc}") from exc
    if not specs:
        raise CliError(EXIT_PARAM, "key 'estimators': no estimators requested")
    if not (dists and ns and nsrs):
        raise CliError(EXIT_PARAM, "distributions, n and nsr must each list at least one value")
    reps = _typed("reps", s["reps"], int)
    seed = _typed("seed", s["seed"], int)
    grid_points = _typed("grid_points", s["grid_points"], int)
    grid_pad = _typed("grid_pad", s["grid_pad"], float)
    thr = _typed("rmre_threshold", s["rmre_threshold"], float)
    workers = _typed("workers", s["workers"], int)
    if seed < 0:
        raise CliError(EXIT_PARAM, "key 'seed': must be nonnegative")
    if workers < 1:
        raise CliError(EXIT_PARAM, "key 'workers': must be at least 1")
    if not grid_pad >= 0:
        raise CliError(EXIT_PARAM, "key 'grid_pad': must be nonnegative")
    scenarios = []
    for dist, n, nsr in itertools.product(dists, ns, nsrs):
        try:
            scenarios.append(ScenarioConfig(
                distribution=dist, n=n, nsr=nsr, reps=reps, seed=seed,
                estimators=tuple(specs), grid_points=grid_points, grid_pad=grid_pad,
                rmre_threshold=thr, batch_i2_normalization=s["batch_i2_normalization"]))
        except ValueError as exc:
            raise CliError(EXIT_PARAM, f"invalid scenario ({dist}, n={n}, nsr={nsr}): {exc}") from exc
    return SimulatePlan(s, scenarios, workers)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def render_csv(command: str, settings: dict, columns, rows) -> str:
    out = [f"# deconvcdf {__version__} {command}"]
    out += [f"# {k} = {settings[k]}" for k in settings]
    out.append(",".join(columns))
    out += [",".join(row) for row in rows]
    return "\n".join(out) + "\n"


def write_output(text: str, path: str | None) -> None:
    """Write to ``path`` atomically (temp file + rename), or stdout."""
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".deconvcdf-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

SIMULATE_COLUMNS = ("scenario", "distribution", "n", "nsr", "estimator", "gamma0",
                    "mean_rmre", "mean_cor", "cpu_seconds", "excluded_reps")


def cmd_simulate(args) -> int:
    settings = read_config(args.config, set(SIMULATE_DEFAULTS)) if args.config else {}
    if args.seed is not None:
        settings["seed"] = str(args.seed)
    if args.grid_points is not None:
        settings["grid_points"] = str(args.grid_points)
    if args.rmre_threshold is not None:
        settings["rmre_threshold"] = str(args.rmre_threshold)
    plan = build_simulate_plan(settings)
    rows = []
    for sid, cfg in enumerate(plan.scenarios, start=1):
        report = run_scenario(cfg, workers=plan.workers)
        for m in report.rows:
            g = m.estimator.gamma0
            rows.append((str(sid), cfg.distribution.csv_label, str(cfg.n), fmt(cfg.nsr),
                         m.estimator.kind, "" if g is None else fmt(g), fmt(m.rmre),
                         fmt(m.cor), f"{m.cpu_seconds:.6f}", str(m.excluded_reps)))
    write_output(render_csv("simulate", plan.settings, SIMULATE_COLUMNS, rows), args.out)
    return EXIT_OK


def read_single_column(path: str) -> np.ndarray:
    """Numeric rows of a one-column CSV; ``#`` lines and blank lines skipped."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise CliError(EXIT_DATA, f"cannot read {path}: {exc}") from exc
    values = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            v = float(line)
        except ValueError:
            raise CliError(EXIT_DATA, f"{path}, line {lineno}: not a number: {line!r}") from None
        if not math.isfinite(v):
            raise CliError(EXIT_DATA, f"{path}, line {lineno}: non-finite value")
        values.append(v)
    return np.asarray(values)


ESTIMATE_COLUMNS = ("x", "F_recursive", "F_nadaraya", "h_recursive", "h_nadaraya",
                    "I1_recursive", "I2_recursive", "I1_nadaraya", "I2_nadaraya",
                    "AMISE_recursive", "AMISE_nadaraya")


def cmd_estimate(args) -> int:
    data = read_single_column(args.data)
    if data.size < 5:
        raise CliError(EXIT_DEGENERATE, f"need at least 5 observations, got {data.size}")
    if np.ptp(data) == 0:
        raise CliError(EXIT_DEGENERATE, "all observations are equal")
    if not (args.gamma0 > 2 / 7 and math.isfinite(args.gamma0)):
        raise CliError(EXIT_PARAM, f"--gamma0 must exceed 2/7, got {args.gamma0}")
    if args.grid_points < 2:
        raise CliError(EXIT_PARAM, "--grid-points must be at least 2")
    if args.reps < 1:
        raise CliError(EXIT_PARAM, "--reps must be at least 1")
    seed = 0 if args.seed is None else args.seed
    if args.already_contaminated:
        if args.sigma is None or not (args.sigma > 0 and math.isfinite(args.sigma)):
            raise CliError(EXIT_PARAM, "--already-contaminated needs --sigma > 0")
        sigma, mode = args.sigma, "contaminated"
    else:
        if args.nsr is None or not (args.nsr > 0 and math.isfinite(args.nsr)):
            raise CliError(EXIT_PARAM, "--nsr must be positive; without noise there is nothing to deconvolve")
        sigma, mode = sigma_from_nsr(float(np.var(data, ddof=1)), args.nsr), "clean"
    settings = {"data": args.data, "mode": mode, "nsr": "" if args.nsr is None else fmt(args.nsr),
                "sigma": fmt(sigma), "gamma0": fmt(args.gamma0), "seed": str(seed),
                "reps": str(args.reps), "grid_points": str(args.grid_points),
                "batch_i2_normalization": "printed"}

    fits, grid, failures = [], None, 0
    for k in range(args.reps if mode == "clean" else 1):
        if mode == "clean":
            rng = np.random.default_rng([seed, k])
            y = data + laplace_from_uniform(rng.random(data.size), sigma)
        else:
            y = data
        try:
            fit = fit_contaminated(y, sigma, args.gamma0, grid, args.grid_points)
        except (InvalidPlanError, DegenerateSampleError) as exc:
            failures += 1
            log.warning("replication %d skipped: %s", k, exc)
            continue
        grid = EvaluationGrid(fit.grid) if grid is None else grid
        fits.append(fit)
    if not fits:
        raise CliError(EXIT_DEGENERATE, "no usable plug-in bandwidth for this data")
    settings["excluded_reps"] = str(failures)

    def avg(attr):
        return float(np.mean([_get(f, attr) for f in fits]))

    summary = [avg(a) for a in ("h_recursive", "h_nadaraya", "recursive.i1", "recursive.i2",
                                "batch.i1", "batch.i2", "amise_recursive", "amise_nadaraya")]
    f_rec = np.mean([f.f_recursive for f in fits], axis=0)
    f_nad = np.mean([f.f_nadaraya for f in fits], axis=0)
    rows = [(fmt(x), fmt(a), fmt(b), *(fmt(v) for v in summary))
            for x, a, b in zip(grid.points, f_rec, f_nad)]
    write_output(render_csv("estimate", settings, ESTIMATE_COLUMNS, rows), args.out)
    return EXIT_OK


def _get(obj, dotted):
    for part in dotted.split("."):
        obj = getattr(obj, part)
    return obj


KERNEL_COLUMNS = ("u", "K_eps", "KK_eps", "K_eps_deriv")


def cmd_kernels(args) -> int:
    r = args.r
    if not (r >= 0 and math.isfinite(r)):
        raise CliError(EXIT_PARAM, f"--r must be nonnegative, got {r}")
    if not (args.step > 0 and args.u_max >= args.u_min):
        raise CliError(EXIT_PARAM, "need --step > 0 and --u-max >= --u-min")
    m = int(round((args.u_max - args.u_min) / args.step))
    u = args.u_min + args.step * np.arange(m + 1)
    p = kernels.DeconvKernelParams.from_ratio(r)
    cols = (u, kernels.deconv_kernel(u, p), kernels.deconv_cdf_kernel(u, p),
            kernels.deconv_kernel_deriv(u, p))
    rows = [tuple(fmt(c[i]) for c in cols) for i in range(u.size)]
    settings = {"r": fmt(r), "u_min": fmt(args.u_min), "u_max": fmt(args.u_max),
                "step": fmt(args.step)}
    write_output(render_csv("kernels", settings, KERNEL_COLUMNS, rows), args.out)
    return EXIT_OK


ORACLE_RATIOS = (0.0, 0.1, 0.5, 1.0, 5.0, 10.0, 100.0)


@dataclass
class CheckResult:
    name: str
    observed: float
    expected: str
    ok: bool


def _check(name, observed, target, tol):
    return CheckResult(name, observed, f"{target} +/- {tol}", abs(observed - target) <= tol)


def verify_checks() -> list[CheckResult]:
    """Analytic constants, closed form vs Fourier inversion, reduction identity.

    Library functions are looked up on their modules at call time so a test
    can substitute a perturbed double.
    """
    out = [
        _check("optimal_bandwidth_recursive", plugin.optimal_bandwidth_recursive(1, 1, 1, 1.0).c,
               0.7634, 5e-4),
        _check("amise_recursive", plugin.amise_recursive(1, 1, 1, 1.0), 0.3883, 5e-4),
        _check("optimal_bandwidth_batch", plugin.optimal_bandwidth_batch(1, 1, 1).c, 0.8844, 5e-4),
        _check("amise_batch", plugin.amise_batch(1, 1, 1), 0.3568, 1e-3),
    ]
    g = np.linspace(2 / 7 + 1e-3, 4.0, 3715)
    crit = g**2 * (g - 2 / 7) ** (-10 / 7)
    out.append(_check("gamma0_argmin", float(g[np.argmin(crit)]), 1.0, 2e-3))

    worst = 0.0
    for r in ORACLE_RATIOS:
        for u in np.linspace(-8, 8, 33):
            worst = max(worst, abs(kernels.deconv_kernel(u, r)
                                   - kernels.fourier_inversion_oracle(u, r)))
    out.append(CheckResult("fourier_inversion_oracle", worst, "<= 1e-6", worst <= 1e-6))

    rng = np.random.default_rng(20240601)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(5, 201))
        y = rng.normal(size=n)
        sigma, h = float(rng.uniform(0, 1)), float(rng.uniform(0.1, 1))
        grid = EvaluationGrid.around(y, h, 41)
        rec = recursive_estimate(y, grid, sigma, StepsizeSchedule(1.0), BandwidthSchedule(h, 0.0))
        nad = nadaraya_estimate(y, h, sigma, grid)
        worst = max(worst, float(np.max(np.abs(rec - nad))))
    out.append(CheckResult("reduction_identity", worst, "<= 1e-12", worst <= 1e-12))

    w = schedules.averaging_weights(1.0 / np.arange(1, 501))
    out.append(_check("averaging_weights", float(np.max(np.abs(w - 1 / 500))), 0.0, 1e-12))
    return out


def cmd_verify(args) -> int:
    results = verify_checks()
    for res in results:
        status = "PASS" if res.ok else "FAIL"
        print(f"{status} {res.name}: observed {res.observed:.7g}, expected {res.expected}")
    failed = [r.name for r in results if not r.ok]
    if failed:
        print("failed checks: " + ", ".join(failed))
        return EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deconvcdf",
                                description="Recursive deconvolution CDF estimation under Laplace noise.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run Monte Carlo scenarios from a config file")
    s.add_argument("--config", help="flat 'key = value' file (or a previous output CSV)")
    s.add_argument("--out", help="output CSV (default stdout)")
    s.add_argument("--seed", type=int)
    s.add_argument("--grid-points", type=int)
    s.add_argument("--rmre-threshold", type=float)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="estimate the CDF of one dataset")
    e.add_argument("data", help="single-column CSV of observations")
    e.add_argument("--out")
    e.add_argument("--nsr", type=float, help="noise-to-signal ratio of injected Laplace noise")
    e.add_argument("--gamma0", type=float, default=1.0)
    e.add_argument("--seed", type=int)
    e.add_argument("--reps", type=int, default=1,
                   help="average over this many independent noise draws")
    e.add_argument("--grid-points", type=int, default=101)
    e.add_argument("--already-contaminated", action="store_true",
                   help="treat the data as noisy observations with known --sigma")
    e.add_argument("--sigma", type=float)
    e.set_defaults(func=cmd_estimate)

    k = sub.add_parser("kernels", help="tabulate the deconvoluting kernels")
    k.add_argument("--r", type=float, required=True, help="sigma^2 / h^2")
    k.add_argument("--u-min", type=float, default=-8.0)
    k.add_argument("--u-max", type=float, default=8.0)
    k.add_argument("--step", type=float, default=0.01)
    k.add_argument("--out")
    k.set_defaults(func=cmd_kernels)

    v = sub.add_parser("verify", help="check constants and numerical identities")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
