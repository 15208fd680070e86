"""Command-line entry point: config loading, subcommands, CSV reports, and the check battery."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .core import Grid, ProblemConfig, RunConfig, load_config, tensor_quadrature, validate_config
from .errors import (
    ConfigError,
    ConsistencyError,
    IdentityViolationError,
    InequalityViolationError,
    InputError,
    OUHardyError,
    PositivityViolationError,
    RateBoundError,
    SchemeConsistencyError,
    SolverError,
)
from .hardy import (
    hardy_constants,
    hardy_report,
    lambda1_estimate,
    optimality_probe,
    random_bumps,
    refined_report,
)
from .ims import (
    PROFILES,
    PROPERTY_TOLERANCES,
    build_partition,
    chain_bound,
    ims_identity_refined,
    lemma3_bound,
    partition_properties,
)
from .measure import (
    WeightedGaussianMeasure,
    appendix_check,
    closed_form_normalization,
    drift_gap,
    equivalence_check,
    gamma_moment,
    moment_bounds,
    radial_moment_quadrature,
    sample,
)
from .parabolic import (
    SCHEMES,
    blowup_scan,
    coercivity_check,
    default_initial,
    evolve,
    expected_verdict,
)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
ASSERTION_ERRORS = (
    InequalityViolationError,
    IdentityViolationError,
    PositivityViolationError,
    RateBoundError,
    SchemeConsistencyError,
    ConsistencyError,
    SolverError,
)

# battery parameters
NORMALIZATION_POINTS = 96
NORMALIZATION_RADIUS = 6.0
NORMALIZATION_RTOL = 1e-4
GAMMA_BETAS = (0.0, 0.5, 1.0, 2.0)
GAMMA_DIMS = (3, 4, 5)
GAMMA_RTOL = 1e-6
RANDOM_POINTS = 10_000
RANDOM_CONFIGS = 20
EQUALITY_TOL = 1e-10
HARDY_POINTS = 64
HARDY_BUMPS = 50
ORDER_POINTS = (32, 63, 125)
ORDER_BUMPS = 3
ORDER_RANGE = (1.5, 2.5)
N1_BUMPS = 10
OPT_GAMMAS = (-0.30, -0.40, -0.49, -0.499)
OPT_THRESHOLD = -100.0
IMS_POINTS = 64
IMS_BUMPS = 10
LAMBDA_POINTS = 48
LAMBDA_CUTS = (4, 16, 64, 256)
LAMBDA_C0_TOL = 1e-8
# last decrement must keep at least this fraction of the first one
DECREMENT_FRACTION = 0.5
SCAN_POINTS = 48
SCAN_CUTS = (8, 32, 128, 512)
SCAN_T = 0.5
SCAN_DT = 1e-3
RATE_TOL = 0.5
COERCIVITY_PROBES = 100


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, columns: Sequence[str], rows: Sequence[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
    return path


@dataclass
class RunManifest:
    config_hash: str
    subcommand: str
    overrides: dict
    outputs: list[str]
    seed: int
    version: str = __version__

    def write(self, out: Path) -> Path:
        path = out / "manifest.json"
        path.write_text(json.dumps(asdict(self), sort_keys=True, indent=2) + "\n")
        return path


@dataclass
class Context:
    run: RunConfig
    out: Path
    seed: int
    args: argparse.Namespace
    outputs: list[str] = field(default_factory=list)

    @property
    def cfg(self) -> ProblemConfig:
        return self.run.problem

    @property
    def config_hash(self) -> str:
        return self.run.config_hash()

    def grid(self, points: int | None = None) -> Grid:
        return self.run.make_grid(points)

    def emit(self, name: str, columns: Sequence[str], rows: Sequence[dict]) -> Path:
        cols = ["config_hash", *[c for c in columns if c != "config_hash"]]
        full = [{**r, "config_hash": self.config_hash} for r in rows]
        path = write_csv(self.out / name, cols, full)
        self.outputs.append(name)
        return path


# -- check battery -------------------------------------------------------------------

@dataclass
class CheckResult:
    criterion: int | None
    name: str
    module: str
    status: str
    value: float
    threshold: float
    detail: str = ""
    # wall time; kept out of the CSV so reruns stay byte-identical
    elapsed: float = field(default=0.0, compare=False)

    @property
    def passed(self) -> bool:
        return self.status != "fail"


def _status(ok: bool) -> str:
    return "pass" if ok else "fail"


def _skipped(criterion, name, module, reason) -> CheckResult:
    return CheckResult(criterion, name, module, "skipped", math.nan, math.nan, reason)


def quadrature_normalization(cfg: ProblemConfig, points: int = NORMALIZATION_POINTS) -> float:
    grid = Grid.for_config(cfg, points, NORMALIZATION_RADIUS)
    return 1.0 / tensor_quadrature(WeightedGaussianMeasure(cfg).weight(grid.nodes), grid)


def check_normalization(cfg: ProblemConfig, points: int = NORMALIZATION_POINTS) -> CheckResult:
    closed = closed_form_normalization(cfg)
    quad = quadrature_normalization(cfg, points)
    rel = abs(quad - closed) / closed
    return CheckResult(
        1, "normalization", "measure", _status(rel <= NORMALIZATION_RTOL), rel, NORMALIZATION_RTOL,
        f"closed={closed!r} quadrature={quad!r} m={points}",
    )


def check_gamma_identity() -> CheckResult:
    worst, where = 0.0, ""
    for dim in GAMMA_DIMS:
        for beta in GAMMA_BETAS:
            exact = gamma_moment(beta, dim)
            rel = abs(radial_moment_quadrature(beta, dim) - exact) / exact
            if rel >= worst:
                worst, where = rel, f"beta={beta} N={dim}"
    return CheckResult(2, "gamma_identity", "measure", _status(worst <= GAMMA_RTOL), worst, GAMMA_RTOL, where)


def _random_points(cfg: ProblemConfig, count: int, rng: np.random.Generator, spread: float = 3.0) -> np.ndarray:
    scale = spread * max(1.0, float(np.max(np.abs(cfg.poles_array - cfg.barycenter))))
    return cfg.barycenter + scale * rng.standard_normal((count, cfg.dimension))


def check_drift(cfg: ProblemConfig, seed: int = 0) -> CheckResult:
    m = WeightedGaussianMeasure(cfg)
    x = _random_points(cfg, RANDOM_POINTS, np.random.default_rng(seed))
    bound = 0.5 * cfg.n * cfg.trace
    excess = float(np.max(drift_gap(x, m) - bound))
    at_bar = abs(float(drift_gap(cfg.barycenter, m)) - bound)
    ok = excess <= 0.0 and at_bar <= EQUALITY_TOL
    return CheckResult(
        3, "drift_bound", "measure", _status(ok), max(excess, at_bar), EQUALITY_TOL,
        f"max excess={excess!r} equality gap at barycenter={at_bar!r}",
    )


def random_config(rng: np.random.Generator, dim: int = 3) -> ProblemConfig:
    n = int(rng.integers(2, 6))
    poles = rng.uniform(-2.0, 2.0, (n, dim))
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    a = q @ np.diag(rng.uniform(0.3, 3.0, dim)) @ q.T
    return ProblemConfig.create(poles, 0.5 * (a + a.T), 0.25)


def check_equivalence(cfg: ProblemConfig, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    configs = [cfg] + [random_config(rng, cfg.dimension) for _ in range(RANDOM_CONFIGS)]
    violations, worst = 0, math.inf
    for c in configs:
        m = WeightedGaussianMeasure(c)
        x = _random_points(c, RANDOM_POINTS, rng)
        for i in range(c.n):
            reps = [equivalence_check(i, m, x, raise_on_fail=False)]
            if c.n > 1:
                reps.append(appendix_check(i, c.poles_array, x, raise_on_fail=False))
            for r in reps:
                violations += int(not r.ok)
                worst = min(worst, r.min_margin)
    return CheckResult(
        4, "weight_equivalence", "measure", _status(violations == 0), float(violations), 0.0,
        f"configs={len(configs)} points={RANDOM_POINTS} min margin={worst!r}",
    )


def check_moments(cfg: ProblemConfig) -> CheckResult:
    m = WeightedGaussianMeasure(cfg)
    bad, worst = 0, math.inf
    for i in range(cfg.n):
        for beta in (-0.4, 0.0, 1.0):
            r = moment_bounds(beta, i, m, check=False)
            bad += int(not r.ok)
            worst = min(worst, (r.value - r.lower) / r.value, (r.upper - r.value) / r.value)
    return CheckResult(None, "moment_bounds", "measure", _status(bad == 0), float(bad), 0.0, f"min rel margin={worst!r}")


def _observed_order(cfg: ProblemConfig, bumps, report_fn, points=ORDER_POINTS) -> float:
    orders = []
    for b in bumps:
        ms = [report_fn(b.field(Grid.for_config(cfg, m)), cfg).margin for m in points]
        e1, e2 = abs(ms[1] - ms[0]), abs(ms[2] - ms[1])
        orders.append(math.log2(e1 / e2) if e2 > 0 else math.inf)
    return float(np.median(orders))


def _hardy_suite(cfg, bumps, grid, improved):
    failures, worst = 0, math.inf
    rows = []
    for j, b in enumerate(bumps):
        r = refined_report(b, cfg, grid, improved=improved)
        rep = r.coarse
        failures += int(not r.holds)
        worst = min(worst, rep.margin + rep.error)
        rows.append((j, b, rep))
    return failures, worst, rows


def check_hardy(cfg: ProblemConfig, bumps: int = HARDY_BUMPS, points: int = HARDY_POINTS, seed: int = 0) -> CheckResult:
    if cfg.coupling > cfg.c0:
        return _skipped(5, "hardy_inequality", "hardy", f"c={cfg.coupling} > c0={cfg.c0}: outside the hypothesis")
    suite = random_bumps(cfg, bumps, seed)
    failures, worst, _ = _hardy_suite(cfg, suite, Grid.for_config(cfg, points), False)
    order = _observed_order(cfg, suite[:ORDER_BUMPS], hardy_report)
    ok = failures == 0 and ORDER_RANGE[0] <= order <= ORDER_RANGE[1]
    return CheckResult(
        5, "hardy_inequality", "hardy", _status(ok), float(failures), 0.0,
        f"bumps={bumps} K={hardy_constants(cfg).K!r} min(margin+error)={worst!r} observed order={order!r}",
    )


def one_pole_config(cfg: ProblemConfig) -> ProblemConfig:
    return ProblemConfig.create([np.zeros(cfg.dimension)], cfg.a, cfg.c0, cfg.ims_k)


def check_improved(cfg: ProblemConfig, bumps: int = HARDY_BUMPS, points: int = HARDY_POINTS, seed: int = 0) -> CheckResult:
    suite = random_bumps(cfg, bumps, seed)
    failures, worst, _ = _hardy_suite(cfg, suite, Grid.for_config(cfg, points), True)
    c1 = one_pole_config(cfg)
    f1, w1, _ = _hardy_suite(c1, random_bumps(c1, min(bumps, N1_BUMPS), seed), Grid.for_config(c1, points), True)
    return CheckResult(
        6, "improved_constant", "hardy", _status(failures + f1 == 0), float(failures + f1), 0.0,
        f"constant={0.5 * cfg.n * cfg.trace!r} min(margin+error)={min(worst, w1)!r} n=1 min={w1!r}",
    )


def optimality_coupling(cfg: ProblemConfig) -> float:
    return cfg.coupling if cfg.coupling > cfg.c0 else 1.5 * cfg.c0


def check_optimality(cfg: ProblemConfig, gammas=OPT_GAMMAS, threshold: float = OPT_THRESHOLD) -> CheckResult:
    c = optimality_coupling(cfg)
    ccfg = cfg.with_coupling(c)
    r = [optimality_probe(g, 0, ccfg).r_bound for g in gammas]
    decreasing = all(b < a for a, b in zip(r, r[1:]))
    ok = decreasing and r[-1] < threshold
    return CheckResult(
        7, "optimality_divergence", "hardy", _status(ok), r[-1], threshold,
        f"c={c!r} R_bound={[float(v) for v in r]} strictly decreasing={decreasing}",
    )


def check_ims(cfg: ProblemConfig, bumps: int = IMS_BUMPS, points: int = IMS_POINTS, seed: int = 0) -> CheckResult:
    if cfg.n < 2:
        return _skipped(8, "ims_identity", "ims", "needs at least two poles")
    p = build_partition(cfg)
    grid = Grid.for_config(cfg, points)
    props = partition_properties(p, grid)
    prop_bad = [k for k, v in props.items() if v > PROPERTY_TOLERANCES[k]]
    worst_ratio, orders, bad = 0.0, [], 0
    for b in random_bumps(cfg, bumps, seed):
        r = ims_identity_refined(b, p, grid, check=False)
        bad += int(not r.ok)
        worst_ratio = max(worst_ratio, r.coarse.residual / r.error_estimate)
        orders.append(math.log2(r.order_ratio))
    order = float(np.median(orders))
    ok = not prop_bad and bad == 0 and ORDER_RANGE[0] <= order <= ORDER_RANGE[1]
    return CheckResult(
        8, "ims_identity", "ims", _status(ok), worst_ratio, 5.0,
        f"residual/error max={worst_ratio!r} observed order={order!r} property failures={prop_bad}",
    )


def check_chain(cfg: ProblemConfig, bumps: int = IMS_BUMPS, points: int = IMS_POINTS, seed: int = 0) -> CheckResult:
    if cfg.coupling > cfg.c0:
        return _skipped(9, "chain_bound", "ims", f"c={cfg.coupling} > c0={cfg.c0}: outside the hypothesis")
    if cfg.n < 2:
        return _skipped(9, "chain_bound", "ims", "needs at least two poles")
    p = build_partition(cfg)
    grid = Grid.for_config(cfg, points)
    k_hat = lemma3_bound(p, max(cfg.coupling, 1e-300), grid=grid).value
    violations = []
    for j, b in enumerate(random_bumps(cfg, bumps, seed)):
        rep = chain_bound(b.field(grid), cfg, p, k_hat=k_hat, raise_on_fail=False)
        violations += [f"bump {j}: {s.display}" for s in rep.violations]
    return CheckResult(
        9, "chain_bound", "ims", _status(not violations), float(len(violations)), 0.0,
        f"k_hat={k_hat!r} " + ("; ".join(violations) if violations else "no violated step"),
    )


def check_lambda1(cfg: ProblemConfig, points: int = LAMBDA_POINTS, cuts=LAMBDA_CUTS) -> CheckResult:
    grid = Grid.for_config(cfg, points)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        zero = lambda1_estimate(cfg.with_coupling(0.0), grid).value
        parts = [f"lambda1(c=0)={zero!r}"]
        ok = zero >= -LAMBDA_C0_TOL
        if cfg.coupling <= cfg.c0:
            K = hardy_constants(cfg).K
            lam = lambda1_estimate(cfg, grid).value
            ok &= lam >= -K
            parts.append(f"lambda1(c={cfg.coupling})={lam!r} >= -K={-K!r}")
        else:
            parts.append("c > c0: lower bound -K not asserted")
        big = cfg.with_coupling(2 * cfg.c0)
        seq = [lambda1_estimate(big, grid, k).value for k in cuts]
    dec = [a - b for a, b in zip(seq, seq[1:])]
    trend = all(d > 0 for d in dec) and dec[-1] >= DECREMENT_FRACTION * dec[0]
    ok &= trend
    parts.append(f"lambda1(2c0, k_cut={list(cuts)})={[float(v) for v in seq]}")
    return CheckResult(10, "lambda1_bounds", "hardy", _status(ok), float(min(dec)), 0.0, " ".join(parts))


def check_coercivity(cfg: ProblemConfig, points: int = LAMBDA_POINTS, seed: int = 0) -> CheckResult:
    if not 0 < cfg.coupling <= cfg.c0:
        return _skipped(None, "coercivity", "parabolic", "needs 0 < c <= c0")
    rep = coercivity_check(cfg, Grid.for_config(cfg, points), COERCIVITY_PROBES, seed)
    return CheckResult(
        None, "coercivity", "parabolic", _status(rep.ok), rep.min_quotient, rep.bound,
        f"probes={COERCIVITY_PROBES} worst={rep.worst_probe}",
    )


def _scan(cfg, grid, cuts, dt, t_final, scheme="symmetric"):
    u0 = default_initial(cfg, grid)
    return blowup_scan(u0, cfg, grid, list(cuts), dt, t_final, scheme=scheme)


def check_dichotomy(
    cfg: ProblemConfig,
    points: int = SCAN_POINTS,
    cuts=SCAN_CUTS,
    dt: float = SCAN_DT,
    t_final: float = SCAN_T,
) -> CheckResult:
    grid = Grid.for_config(cfg, points)
    couplings = [0.5 * cfg.c0, 4 * cfg.c0]
    if cfg.coupling > cfg.c0 and cfg.coupling not in couplings:
        couplings.append(cfg.coupling)
    ok, parts, worst_mono = True, [], 0.0
    for c in couplings:
        ccfg = cfg.with_coupling(c)
        try:
            rep = _scan(ccfg, grid, cuts, dt, t_final)
        except (PositivityViolationError, SchemeConsistencyError) as exc:
            ok = False
            parts.append(f"c={c!r}: {exc}")
            continue
        want = expected_verdict(ccfg)
        positive = all(r.positive for r in rep.reports)
        worst_mono = max(worst_mono, rep.max_monotonicity_violation)
        good = rep.verdict == want and positive
        if c <= cfg.c0:
            K = hardy_constants(ccfg).K
            omega = max(r.omega_hat for r in rep.reports)
            good &= omega <= K + RATE_TOL
            parts.append(f"c={c!r}: verdict={rep.verdict} omega_max={omega!r} K+tol={K + RATE_TOL!r}")
        else:
            parts.append(f"c={c!r}: verdict={rep.verdict} ratios={[float(v) for v in rep.ratios]}")
        ok &= good
    return CheckResult(11, "evolution_dichotomy", "parabolic", _status(ok), worst_mono, 1e-8, "; ".join(parts))


@dataclass
class SuiteOptions:
    bumps: int = HARDY_BUMPS
    ims_bumps: int = IMS_BUMPS
    seed: int = 0
    points: int | None = None


def battery(cfg: ProblemConfig, opts: SuiteOptions | None = None) -> list[tuple[str, Callable[[], CheckResult]]]:
    """Checks in dependency order: measure, hardy, ims, parabolic."""
    o = opts or SuiteOptions()

    def pts(default):
        return o.points or default

    return [
        ("normalization", lambda: check_normalization(cfg, pts(NORMALIZATION_POINTS))),
        ("gamma_identity", check_gamma_identity),
        ("drift_bound", lambda: check_drift(cfg, o.seed)),
        ("weight_equivalence", lambda: check_equivalence(cfg, o.seed)),
        ("moment_bounds", lambda: check_moments(cfg)),
        ("hardy_inequality", lambda: check_hardy(cfg, o.bumps, pts(HARDY_POINTS), o.seed)),
        ("improved_constant", lambda: check_improved(cfg, o.bumps, pts(HARDY_POINTS), o.seed)),
        ("optimality_divergence", lambda: check_optimality(cfg)),
        ("lambda1_bounds", lambda: check_lambda1(cfg, pts(LAMBDA_POINTS))),
        ("ims_identity", lambda: check_ims(cfg, o.ims_bumps, pts(IMS_POINTS), o.seed)),
        ("chain_bound", lambda: check_chain(cfg, o.ims_bumps, pts(IMS_POINTS), o.seed)),
        ("coercivity", lambda: check_coercivity(cfg, pts(LAMBDA_POINTS), o.seed)),
        ("evolution_dichotomy", lambda: check_dichotomy(cfg, pts(SCAN_POINTS))),
    ]


def run_battery(cfg: ProblemConfig, opts: SuiteOptions | None = None) -> list[CheckResult]:
    results = []
    for name, fn in battery(cfg, opts):
        log.info("check %s", name)
        start = time.perf_counter()
        try:
            res = fn()
        except ASSERTION_ERRORS as exc:
            res = CheckResult(None, name, "", "fail", math.nan, math.nan, f"{type(exc).__name__}: {exc}")
        res.elapsed = time.perf_counter() - start
        results.append(res)
    return results


# -- subcommands -----------------------------------------------------------------------

def cmd_measure_check(ctx: Context) -> int:
    cfg = ctx.cfg
    m = WeightedGaussianMeasure(cfg)
    method = ctx.run.quadrature.method
    rows = []

    def add(name, value, lower, upper, method_, resolution):
        margin = min(value - lower, upper - value)
        rows.append(dict(check_name=name, value=value, lower=lower, upper=upper, margin=margin,
                         method=method_, resolution=resolution))

    closed = closed_form_normalization(cfg)
    quad = quadrature_normalization(cfg)
    tol = NORMALIZATION_RTOL * closed
    add("normalization", quad, closed - tol, closed + tol, "quadrature", NORMALIZATION_POINTS)
    for dim in GAMMA_DIMS:
        for beta in GAMMA_BETAS:
            exact = gamma_moment(beta, dim)
            add(f"gamma_moment_beta{beta}_N{dim}", radial_moment_quadrature(beta, dim),
                exact * (1 - GAMMA_RTOL), exact * (1 + GAMMA_RTOL), "adaptive", 0)
    x = _random_points(cfg, RANDOM_POINTS, np.random.default_rng(ctx.seed))
    bound = 0.5 * cfg.n * cfg.trace
    add("drift_gap_max", float(np.max(drift_gap(x, m))), -math.inf, bound, "pointwise", RANDOM_POINTS)
    for i in range(cfg.n):
        r = equivalence_check(i, m, x, raise_on_fail=False)
        add(f"weight_equivalence_pole{i}", r.min_margin, 0.0, math.inf, "pointwise", RANDOM_POINTS)
        if cfg.n > 1:
            r = appendix_check(i, cfg.poles_array, x, raise_on_fail=False)
            add(f"appendix_pole{i}", r.min_margin, 0.0, math.inf, "pointwise", RANDOM_POINTS)
    grid = ctx.grid(NORMALIZATION_POINTS)
    for i in range(cfg.n):
        for beta in (-0.4, 0.0, 1.0):
            r = moment_bounds(beta, i, m, grid, check=False)
            add(f"moment_beta{beta}_pole{i}", r.value, r.lower, r.upper, "quadrature", grid.points)
            if method == "montecarlo":
                xs = sample(m, ctx.run.quadrature.samples, ctx.seed)
                vals = np.sum((xs - cfg.poles_array[i]) ** 2, axis=1) ** beta / closed
                est, err = float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals)))
                add(f"moment_beta{beta}_pole{i}_mc", est, r.value - 5 * err, r.value + 5 * err,
                    "montecarlo", len(vals))
    ctx.emit("measure_check.csv",
             ["check_name", "config_hash", "value", "lower", "upper", "margin", "method", "resolution"], rows)
    bad = [r["check_name"] for r in rows if not r["margin"] >= 0]
    for name in bad:
        print(f"FAIL {name}", file=sys.stderr)
    return EXIT_FAIL if bad else EXIT_OK


def _hardy_rows(ctx: Context, improved: bool) -> int:
    cfg = ctx.cfg
    points = ctx.args.points or HARDY_POINTS
    grid = ctx.grid(points)
    ref_cfg = cfg.with_coupling(cfg.c0 / cfg.n) if improved else cfg
    rows, failures = [], 0
    for j, b in enumerate(random_bumps(cfg, ctx.args.bumps, ctx.seed)):
        r = refined_report(b, cfg, grid, improved=improved)
        rep = r.coarse
        failures += int(not r.holds)
        rows.append(dict(bump=j, center=" ".join(repr(float(v)) for v in b.center), width=b.width,
                         coupling=ref_cfg.coupling, lhs=rep.lhs, dirichlet=rep.dirichlet, mass=rep.mass,
                         K=rep.K, margin=rep.margin, error=rep.error, holds=r.holds, points=points))
    name = "improved_report.csv" if improved else "hardy_report.csv"
    ctx.emit(name, ["bump", "center", "width", "coupling", "lhs", "dirichlet", "mass", "K", "margin",
                    "error", "holds", "points"], rows)
    asserted = improved or cfg.coupling <= cfg.c0
    print(f"{len(rows)} bumps, {failures} below -error" + ("" if asserted else " (c > c0: not asserted)"))
    return EXIT_FAIL if asserted and failures else EXIT_OK


def cmd_verify_hardy(ctx: Context) -> int:
    return _hardy_rows(ctx, improved=False)


def cmd_improved(ctx: Context) -> int:
    return _hardy_rows(ctx, improved=True)


def _parse_cuts(text: str | None, default):
    if text is None:
        return list(default)
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        out.append(None if tok.lower() == "none" else float(tok))
    return out


def cmd_lambda1(ctx: Context) -> int:
    cfg = ctx.cfg
    grid = ctx.grid(ctx.args.points or LAMBDA_POINTS)
    default = [None] if cfg.coupling == 0 else LAMBDA_CUTS
    cuts = _parse_cuts(ctx.args.k_cuts, default)
    rows, values = [], []
    for k in cuts:
        est = lambda1_estimate(cfg, grid, k, absolute=ctx.args.absolute)
        values.append(est.value)
        rows.append(dict(k_cut=k, lambda1=est.value, residual=est.residual, iterations=est.iterations,
                         positive=est.positive, points=grid.points))
    ctx.emit("lambda1.csv", ["k_cut", "lambda1", "residual", "iterations", "positive", "points"], rows)
    ok = True
    if cfg.coupling <= cfg.c0:
        floor = 0.0 if cfg.coupling == 0 else -hardy_constants(cfg).K
        ok = all(v >= floor - LAMBDA_C0_TOL for v in values)
    finite = [k for k in cuts if k is not None]
    if finite != sorted(finite):
        raise InputError("cut-off indices must be increasing")
    for k, v in zip(cuts, values):
        print(f"k_cut={k} lambda1={v!r}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_optimality(ctx: Context) -> int:
    cfg = ctx.cfg
    gammas = [float(g) for g in ctx.args.gammas.split(",")] if ctx.args.gammas else list(OPT_GAMMAS)
    rows, probes = [], []
    for g in gammas:
        p = optimality_probe(g, ctx.args.pole, cfg, full_potential=ctx.args.full_potential)
        probes.append(p)
        rows.append(dict(gamma=g, pole=ctx.args.pole, coupling=cfg.coupling, I_gamma=p.i_gamma,
                         I_gamma_minus_1=p.i_gamma_minus_1, ratio=p.ratio,
                         ratio_lower_bound=p.ratio_lower_bound, R_bound=p.r_bound,
                         closed_form_bound=p.closed_form_bound,
                         full_potential_quotient=p.full_potential_quotient))
    ctx.emit("optimality.csv", ["gamma", "pole", "coupling", "I_gamma", "I_gamma_minus_1", "ratio",
                                "ratio_lower_bound", "R_bound", "closed_form_bound",
                                "full_potential_quotient"], rows)
    ok = all(p.ratio >= p.ratio_lower_bound for p in probes)
    if cfg.coupling > cfg.c0:
        r = [p.r_bound for p in probes]
        ok &= all(b < a for a, b in zip(r, r[1:]))
    for p in probes:
        print(f"gamma={p.gamma!r} R_bound={p.r_bound!r}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_ims_check(ctx: Context) -> int:
    cfg = ctx.cfg
    p = build_partition(cfg, ctx.args.rho, ctx.args.profile)
    grid = ctx.grid(ctx.args.points or IMS_POINTS)
    props = partition_properties(p, grid)
    kh = lemma3_bound(p, cfg.coupling if cfg.coupling > 0 else 1e-300, grid=grid)
    rows = [dict(property=k, max_violation=v, tolerance=PROPERTY_TOLERANCES[k], k_hat=kh.value,
                 k_hat_below_pi2=kh.below_pi2) for k, v in props.items()]
    ok = all(v <= PROPERTY_TOLERANCES[k] for k, v in props.items())
    for j, b in enumerate(random_bumps(cfg, ctx.args.bumps, ctx.seed)):
        r = ims_identity_refined(b, p, grid, check=False)
        ok &= r.ok
        rows.append(dict(property=f"identity_bump{j}", max_violation=r.coarse.residual,
                         tolerance=5 * r.error_estimate, k_hat=kh.value, k_hat_below_pi2=kh.below_pi2))
    ctx.emit("ims_report.csv", ["property", "max_violation", "tolerance", "k_hat", "k_hat_below_pi2"], rows)
    print(f"k_hat={kh.value!r} below_pi2={kh.below_pi2}")
    return EXIT_OK if ok else EXIT_FAIL


def _evolve_settings(ctx: Context):
    e = ctx.run.evolve
    dt = ctx.args.dt if ctx.args.dt is not None else e.dt
    t_final = ctx.args.t_final if ctx.args.t_final is not None else e.t_final
    return dt, t_final


def cmd_evolve(ctx: Context) -> int:
    cfg = ctx.cfg
    grid = ctx.grid(ctx.args.points)
    dt, t_final = _evolve_settings(ctx)
    k_cut = None if cfg.coupling == 0 and ctx.args.k_cut is None else (ctx.args.k_cut or ctx.run.evolve.cutoff_max)
    u0 = default_initial(cfg, grid)
    rep = evolve(u0, cfg, grid, k_cut, dt, t_final, ctx.args.scheme, ctx.args.absolute)
    rows = [dict(t=t, norm=nv, min_value=mv) for t, nv, mv in zip(rep.times, rep.norms, rep.min_values)]
    ctx.emit("evolution.csv", ["t", "norm", "min_value"], rows)
    print(f"omega_hat={rep.omega_hat!r} M_hat={rep.m_hat!r} verdict={rep.verdict}")
    return EXIT_OK


def cmd_blowup_scan(ctx: Context) -> int:
    cfg = ctx.cfg
    grid = ctx.grid(ctx.args.points)
    dt, t_final = _evolve_settings(ctx)
    if ctx.args.k_cuts:
        cuts = [float(k) for k in ctx.args.k_cuts.split(",")]
    else:
        cuts, k = [], 8
        while k <= ctx.run.evolve.cutoff_max:
            cuts.append(k)
            k *= 4
    rep = _scan(cfg, grid, cuts, dt, t_final, ctx.args.scheme)
    rows = []
    for j, (k, nv) in enumerate(zip(rep.k_cuts, rep.final_norms)):
        rows.append(dict(k_cut=k, final_norm=nv, ratio=rep.ratios[j - 1] if j else None, verdict=rep.verdict))
    ctx.emit("scan.csv", ["k_cut", "final_norm", "ratio", "verdict"], rows)
    want = expected_verdict(cfg)
    print(f"verdict={rep.verdict} expected={want}" + (f" hint: {rep.hint}" if rep.hint else ""))
    return EXIT_OK if rep.verdict == want else EXIT_FAIL


def cmd_suite(ctx: Context) -> int:
    opts = SuiteOptions(bumps=ctx.args.bumps, ims_bumps=ctx.args.ims_bumps, seed=ctx.seed, points=ctx.args.points)
    results = run_battery(ctx.cfg, opts)
    rows = [dict(criterion=r.criterion, check=r.name, module=r.module, status=r.status, value=r.value,
                 threshold=r.threshold, detail=r.detail) for r in results]
    ctx.emit("suite.csv", ["criterion", "check", "module", "status", "value", "threshold", "detail"], rows)
    width = max(len(r.name) for r in results)
    for r in results:
        tag = "" if r.criterion is None else f"[{r.criterion}]"
        print(f"{r.status.upper():8s} {r.name:{width}s} {tag:5s} {r.detail}")
    for r in results:
        print(f"elapsed {r.name} {r.elapsed:.3f}", file=sys.stderr)
    failed = [r for r in results if not r.passed]
    print(f"{len(results)} checks, {len(failed)} failed")
    return EXIT_FAIL if failed else EXIT_OK


COMMANDS: dict[str, Callable[[Context], int]] = {
    "verify-hardy": cmd_verify_hardy,
    "improved": cmd_improved,
    "lambda1": cmd_lambda1,
    "optimality": cmd_optimality,
    "ims-check": cmd_ims_check,
    "evolve": cmd_evolve,
    "blowup-scan": cmd_blowup_scan,
    "measure-check": cmd_measure_check,
    "suite": cmd_suite,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="JSON configuration file")
    common.add_argument("--c", type=float, default=None, help="override coupling_c")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--points", type=int, default=None, help="grid points per axis")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="ouhardy", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name in ("verify-hardy", "improved"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--bumps", type=int, default=HARDY_BUMPS)
    p = sub.add_parser("lambda1", parents=[common])
    p.add_argument("--k-cuts", default=None, help="comma list; 'none' for the uncapped potential")
    p.add_argument("--absolute", action="store_true", help="cap at k_cut instead of c*k_cut")
    p = sub.add_parser("optimality", parents=[common])
    p.add_argument("--gammas", default=None, help="comma list of exponents")
    p.add_argument("--pole", type=int, default=0)
    p.add_argument("--full-potential", action="store_true")
    p = sub.add_parser("ims-check", parents=[common])
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--profile", choices=PROFILES, default="cosine")
    p.add_argument("--bumps", type=int, default=IMS_BUMPS)
    for name in ("evolve", "blowup-scan"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--scheme", choices=SCHEMES, default="symmetric")
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--t-final", type=float, default=None)
        p.add_argument("--absolute", action="store_true", help="cap at k_cut instead of c*k_cut")
        if name == "evolve":
            p.add_argument("--k-cut", type=float, default=None)
        else:
            p.add_argument("--k-cuts", default=None, help="comma list, increasing")
    p = sub.add_parser("measure-check", parents=[common])
    p = sub.add_parser("suite", parents=[common])
    p.add_argument("--bumps", type=int, default=HARDY_BUMPS)
    p.add_argument("--ims-bumps", type=int, default=IMS_BUMPS)
    return parser


_DEFAULTS = {"out", "config", "command", "verbose"}


def _overrides(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _DEFAULTS and v is not None}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        run = load_config(args.config)
        if args.c is not None:
            run = replace(run, problem=run.problem.with_coupling(args.c))
        validate_config(run.problem)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(run, out, args.seed, args)
    try:
        code = COMMANDS[args.command](ctx)
    except (ConfigError, InputError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ASSERTION_ERRORS as exc:
        print(f"check failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_FAIL
    except OUHardyError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_FAIL
    RunManifest(ctx.config_hash, args.command, _overrides(args), sorted(ctx.outputs), args.seed).write(out)
    return code


if __name__ == "__main__":
    sys.exit(main())
