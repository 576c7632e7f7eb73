"""Experiment driver behind the command line: calibration, trials, sweeps, moments, audits.

Every trial owns the random stream ``(seed, trial_index)``, so results do not
depend on how trials are spread over worker processes.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy import optimize, stats

from shufflepriv import amplify, audit, ghr, shuffle_ut
from shufflepriv.errors import InvalidParameterError
from shufflepriv.probcore import DiscreteDistribution, RandomSource, make_far_distribution, tv_distance

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PROTOCOLS = ("p1", "p2", "ldp-only")
ROBUST_GAMMAS = (0.25, 0.5, 1.0)
DEFAULT_FAR_FACTOR = 1.25
PMF_FILE_TOL = 1e-9


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: str = "p1"
    k: int = 10
    alpha: float = 0.4
    eps: float = 1.0
    delta: float = 0.01
    n: float | None = None
    trials: int = 100
    seed: int = 0
    alternative: str = "uniform"
    workers: int = 1
    repeat: int = 1
    safety_const: float = ghr.DEFAULT_SAFETY_CONST
    lam: float | None = None
    eps_l: float | None = None

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise InvalidParameterError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.k < 2:
            raise InvalidParameterError("k must be at least 2")
        if not 0 < self.alpha <= 1:
            raise InvalidParameterError("alpha must lie in (0, 1]")
        if not (math.isfinite(self.eps) and self.eps > 0):
            raise InvalidParameterError("eps must be positive")
        if not 0 < self.delta < 1:
            raise InvalidParameterError("delta must lie in (0, 1)")
        if self.n is not None and not self.n > 0:
            raise InvalidParameterError("n must be positive")
        if self.trials < 1 or self.workers < 1 or self.repeat < 1:
            raise InvalidParameterError("trials, workers and repeat must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise InvalidParameterError("seed must be a 64-bit unsigned integer")
        if not self.safety_const > 0:
            raise InvalidParameterError("safety_const must be positive")
        if self.lam is not None and not self.lam >= 0:
            raise InvalidParameterError("lam must be non-negative")
        if self.eps_l is not None and not self.eps_l > 0:
            raise InvalidParameterError("eps_l must be positive")
        parse_alternative(self.alternative, self.k, self.alpha)


def parse_alternative(spec: str, k: int, alpha: float) -> DiscreteDistribution:
    """``uniform`` | ``paninski:FACTOR`` (TV = FACTOR * alpha) | ``file:PATH`` (one probability per line)."""
    if spec == "uniform":
        return DiscreteDistribution.uniform(k)
    kind, _, arg = spec.partition(":")
    if kind == "paninski":
        try:
            factor = float(arg) if arg else DEFAULT_FAR_FACTOR
        except ValueError:
            raise InvalidParameterError(f"bad paninski factor {arg!r}") from None
        if not factor > 1:
            raise InvalidParameterError("far alternatives need factor > 1")
        return make_far_distribution(k, factor * alpha)
    if kind == "file":
        try:
            values = [float(line) for line in Path(arg).read_text().split()]
        except (OSError, ValueError) as exc:
            raise InvalidParameterError(f"cannot read pmf file {arg!r}: {exc}") from None
        d = DiscreteDistribution.from_weights(values, tol=PMF_FILE_TOL)
        if d.k != k:
            raise InvalidParameterError(f"pmf file has {d.k} entries, expected k={k}")
        return d
    raise InvalidParameterError(f"unknown alternative {spec!r}")


@dataclass(frozen=True)
class Resolved:
    """A config with every calibrated quantity filled in."""

    config: ExperimentConfig
    n: float
    p1: shuffle_ut.UtParams | None = None
    analyser: ghr.GhrAnalyserParams | None = None
    eps_l: float | None = None


def resolve(config: ExperimentConfig) -> Resolved:
    c = config
    if c.protocol == "p1":
        params = shuffle_ut.UtParams.calibrated(c.k, c.alpha, c.eps, c.delta, n=c.n, lam=c.lam)
        return Resolved(c, params.n, p1=params)
    if c.protocol == "p2":
        n = c.n if c.n is not None else amplify.required_n_protocol2(c.k, c.alpha, c.eps, c.delta, c.safety_const)
        setup = amplify.calibrate_protocol2(c.k, c.alpha, c.eps, c.delta, n, eps_l=c.eps_l)
        return Resolved(c, n, analyser=setup.analyser, eps_l=setup.eps_l)
    eps_l = c.eps_l if c.eps_l is not None else c.eps
    n = c.n if c.n is not None else ghr.required_n_ldp(c.k, c.alpha, eps_l, c.safety_const)
    analyser = ghr.GhrAnalyserParams.build(ghr.ghr_params(c.k, eps_l), c.alpha)
    return Resolved(c, n, analyser=analyser, eps_l=eps_l)


def calibration_table(r: Resolved) -> dict:
    c = r.config
    table: dict = {"protocol": c.protocol, "k": c.k, "alpha": c.alpha, "eps": c.eps, "delta": c.delta, "n": r.n}
    if r.p1 is not None:
        table.update(lam=r.p1.lam, mu=r.p1.mu, tau=r.p1.tau)
        profile = shuffle_ut.robust_profile_p1(c.eps, c.delta)
    else:
        s = r.analyser.scheme
        table.update(eps_l=r.eps_l, a=s.a, b=s.b, K=s.K, s=s.s, gamma_l2_sq=r.analyser.gamma_l2_sq,
                     message_bits=s.message_bits)
        profile = amplify.robust_profile_p2(c.eps, c.delta) if c.protocol == "p2" else None
        if c.protocol == "p2":
            table["amplified_eps"] = _maybe(lambda: amplify.amplified_epsilon(r.eps_l, r.n, c.delta))
    if profile is not None:
        rows = []
        for g in ROBUST_GAMMAS:
            eps_bar, delta_bar = profile(g)
            row = {"gamma": g, "eps_bar": eps_bar, "delta_bar": delta_bar}
            if c.protocol == "p2":
                row["amplified_eps_at_gamma_n"] = _maybe(lambda: profile.amplified_at(g, r.eps_l, r.n))
            rows.append(row)
        table["robust_profile"] = rows
    return table


def _maybe(fn):
    try:
        return fn()
    except amplify.AmplificationInvalidError:
        return None


@dataclass
class TrialRecord:
    trial: int
    n_users: int
    statistic: float
    verdict: str


def _run_once(r: Resolved, p: DiscreteDistribution, rng: RandomSource) -> tuple[int, float, bool]:
    if r.p1 is not None:
        v, n_users = shuffle_ut.run_protocol1(p, r.p1, rng)
        return n_users, v.z, v.rejects
    v, n_users = ghr.run_ghr_protocol(p, r.analyser, r.n, rng)
    return n_users, v.t, v.rejects


def run_trial(r: Resolved, p: DiscreteDistribution, trial: int, path: tuple = ()) -> TrialRecord:
    """One trial on stream ``(seed, trial)``; with ``repeat > 1`` the majority verdict of
    independent runs on child streams (statistic and N are from the first run)."""
    rng = RandomSource(r.config.seed, trial, path)
    if r.config.repeat == 1:
        n_users, stat, rejects = _run_once(r, p, rng)
    else:
        runs = [_run_once(r, p, rng.child(i)) for i in range(r.config.repeat)]
        n_users, stat, _ = runs[0]
        rejects = 2 * sum(x[2] for x in runs) > len(runs)
    return TrialRecord(trial, int(n_users), float(stat), shuffle_ut.NOT_UNIFORM if rejects else shuffle_ut.UNIFORM)


def _run_chunk(args) -> list[TrialRecord]:
    r, probs, trials, path = args
    p = DiscreteDistribution(probs)
    return [run_trial(r, p, t, path) for t in trials]


def run_trials(r: Resolved, p: DiscreteDistribution, trials: int, workers: int = 1,
               path: tuple = ()) -> list[TrialRecord]:
    if workers <= 1:
        return [run_trial(r, p, t, path) for t in range(trials)]
    chunks = [list(range(trials))[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(_run_chunk, [(r, p.probs, ch, path) for ch in chunks if ch])
        records = [rec for part in parts for rec in part]
    return sorted(records, key=lambda rec: rec.trial)


def aggregate(records: list[TrialRecord]) -> dict:
    stats = np.array([rec.statistic for rec in records])
    accepted = sum(rec.verdict == shuffle_ut.UNIFORM for rec in records)
    return {
        "trials": len(records),
        "accepted": accepted,
        "accept_rate": accepted / len(records),
        "reject_rate": (len(records) - accepted) / len(records),
        "statistic_mean": math.fsum(stats) / stats.size,
        "statistic_variance": float(np.var(stats, ddof=1)) if stats.size > 1 else 0.0,
    }


@dataclass
class TrialReport:
    config: dict
    calibration: dict
    records: list[TrialRecord]
    aggregates: dict
    schema_version: int = SCHEMA_VERSION
    command: str = "simulate"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> TrialReport:
        raw = json.loads(text)
        raw["records"] = [TrialRecord(**rec) for rec in raw["records"]]
        return cls(**raw)

    def records_csv(self) -> str:
        return records_to_csv(self.records)


def records_to_csv(records: list[TrialRecord]) -> str:
    buf = io.StringIO()
    names = [f.name for f in fields(TrialRecord)]
    w = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
    w.writeheader()
    for rec in records:
        w.writerow({**asdict(rec), "statistic": repr(rec.statistic)})
    return buf.getvalue()


def records_from_csv(text: str) -> list[TrialRecord]:
    return [TrialRecord(int(row["trial"]), int(row["n_users"]), float(row["statistic"]), row["verdict"])
            for row in csv.DictReader(io.StringIO(text))]


def simulate(config: ExperimentConfig) -> TrialReport:
    start = time.perf_counter()
    r = resolve(config)
    p = parse_alternative(config.alternative, config.k, config.alpha)
    records = run_trials(r, p, config.trials, config.workers)
    # wall time goes to the log only, keeping reports byte-identical across runs
    log.info("simulate: %d trials in %.2fs", config.trials, time.perf_counter() - start)
    cfg = asdict(config)
    cfg.pop("workers")
    return TrialReport(config=cfg, calibration=calibration_table(r), records=records, aggregates=aggregate(records))


@dataclass
class SweepRow:
    n: float
    accept_rate_uniform: float
    reject_rate_far: float

    @property
    def passes(self) -> bool:
        return self.accept_rate_uniform >= 2 / 3 and self.reject_rate_far >= 2 / 3


@dataclass
class SweepResult:
    rows: list[SweepRow]
    min_n: float | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "accept_rate_uniform", "reject_rate_far", "passes"])
        for row in self.rows:
            w.writerow([repr(row.n), repr(row.accept_rate_uniform), repr(row.reject_rate_far), int(row.passes)])
        return buf.getvalue()


def auto_grid(config: ExperimentConfig, points_per_octave: int = 2, octaves_below: int = 4,
              octaves_above: int = 1) -> list[float]:
    """Geometric grid around the planner's sample size."""
    planner = resolve(config).n
    lo = -octaves_below * points_per_octave
    hi = octaves_above * points_per_octave
    return [float(max(1, round(planner * 2 ** (j / points_per_octave)))) for j in range(lo, hi + 1)]


def far_alternative(config: ExperimentConfig) -> DiscreteDistribution:
    if config.alternative == "uniform":
        return make_far_distribution(config.k, DEFAULT_FAR_FACTOR * config.alpha)
    far = parse_alternative(config.alternative, config.k, config.alpha)
    if not tv_distance(far, DiscreteDistribution.uniform(config.k)) > config.alpha:
        raise InvalidParameterError("far alternative must be more than alpha away from uniform in TV")
    return far


def evaluate_n(config: ExperimentConfig, n: float) -> SweepRow:
    """Accept rate under uniform and reject rate under the far alternative at sample size ``n``.

    Uniform trials use streams ``(seed, t, 0)`` and far trials ``(seed, t, 1)``; the same streams
    are reused at every ``n``.
    """
    cfg = _with(config, n=n)
    r = resolve(cfg)
    k = config.k
    uni = run_trials(r, DiscreteDistribution.uniform(k), cfg.trials, cfg.workers, path=(0,))
    far = run_trials(r, far_alternative(config), cfg.trials, cfg.workers, path=(1,))
    return SweepRow(float(n), aggregate(uni)["accept_rate"], aggregate(far)["reject_rate"])


def sweep(config: ExperimentConfig, grid: list[float]) -> SweepResult:
    if not grid:
        raise InvalidParameterError("sweep grid is empty")
    if any(not g > 0 for g in grid):
        raise InvalidParameterError("grid values must be positive")
    rows = [evaluate_n(config, n) for n in sorted(grid)]
    passing = [row.n for row in rows if row.passes]
    return SweepResult(rows, min(passing) if passing else None)


def search_min_n(config: ExperimentConfig, lo: float, hi: float, rel_tol: float = 0.02) -> SweepResult:
    """Bisect in log n for the smallest n where both rates reach 2/3.

    Assumes the pass/fail outcome is monotone in n; ``hi`` must pass. Returns every
    evaluated point, with ``min_n`` the smallest passing one.
    """
    rows = {}

    def check(n):
        n = float(round(n))
        if n not in rows:
            rows[n] = evaluate_n(config, n)
        return rows[n].passes

    if not check(hi):
        raise InvalidParameterError(f"upper end n={hi} does not pass")
    while check(lo) and lo > 1:
        lo, hi = lo / 2, lo
    while hi / lo > 1 + rel_tol:
        mid = math.sqrt(lo * hi)
        if check(mid):
            hi = mid
        else:
            lo = mid
    ordered = [rows[n] for n in sorted(rows)]
    return SweepResult(ordered, float(round(hi)))


TARGET_RATE = 2 / 3


def probit_crossing(ns, successes, trials: int, target: float = TARGET_RATE) -> float:
    """Fit ``P(success) = Phi(b0 + b1 ln n)`` by maximum likelihood and return the n where it equals ``target``.

    Pools every sweep point, so the crossing is far less noisy than any single pass/fail call.
    """
    x = np.log(np.asarray(ns, dtype=float))
    y = np.asarray(successes, dtype=float)
    xc = x - x.mean()

    def nll(beta):
        p = np.clip(stats.norm.cdf(beta[0] + beta[1] * xc), 1e-12, 1 - 1e-12)
        return -float(np.sum(y * np.log(p) + (trials - y) * np.log1p(-p)))

    fit = optimize.minimize(nll, x0=np.array([0.0, 1.0]), method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-10, "maxiter": 5000})
    b0, b1 = fit.x
    if not b1 > 0:
        raise InvalidParameterError("rate does not increase with n over the grid")
    return float(math.exp(x.mean() + (stats.norm.ppf(target) - b0) / b1))


@dataclass
class MinNEstimate:
    n_star: float
    n_uniform: float
    n_far: float
    rows: list[SweepRow]

    @property
    def bracketed(self) -> bool:
        """Whether the estimate lies inside the evaluated grid (no extrapolation)."""
        return self.rows[0].n <= self.n_star <= self.rows[-1].n


def estimate_min_n(config: ExperimentConfig, grid: list[float]) -> MinNEstimate:
    """Smallest n where both the accept rate under uniform and the reject rate under the
    far alternative reach 2/3, read off probit fits to a sweep over ``grid``."""
    result = sweep(config, grid)
    ns = [row.n for row in result.rows]
    t = config.trials
    n_uni = probit_crossing(ns, [round(row.accept_rate_uniform * t) for row in result.rows], t)
    n_far = probit_crossing(ns, [round(row.reject_rate_far * t) for row in result.rows], t)
    return MinNEstimate(max(n_uni, n_far), n_uni, n_far, result.rows)


def _with(config: ExperimentConfig, **changes) -> ExperimentConfig:
    return ExperimentConfig(**{**asdict(config), **changes})


def moments(config: ExperimentConfig) -> dict:
    """Compare the analytic mean and variance of Z with Monte Carlo estimates (protocol p1)."""
    if config.protocol != "p1":
        raise InvalidParameterError("moments is only defined for protocol p1")
    r = resolve(config)
    p = parse_alternative(config.alternative, config.k, config.alpha)
    records = run_trials(r, p, config.trials, config.workers)
    return moment_comparison(np.array([rec.statistic for rec in records]), p, r.p1)


def moment_comparison(z: np.ndarray, p: DiscreteDistribution, params: shuffle_ut.UtParams) -> dict:
    m = z.size
    mean = math.fsum(z) / m
    var = float(np.var(z, ddof=1))
    mean_se = math.sqrt(var / m)
    m4 = float(np.mean((z - mean) ** 4))
    var_se = math.sqrt(max(m4 - var**2, 0.0) / m)
    mean_exact = shuffle_ut.expected_z(p, params.n, params.k)
    var_exact = shuffle_ut.var_z_exact(p, params)
    return {
        "trials": m,
        "mean_exact": mean_exact,
        "mean_empirical": mean,
        "mean_se": mean_se,
        "mean_ok": abs(mean - mean_exact) <= 3 * mean_se,
        "var_exact": var_exact,
        "var_empirical": var,
        "var_se": var_se,
        "var_ok": abs(var - var_exact) <= 0.05 * var_exact + 3 * var_se,
    }


def load_matrix(path: str) -> audit.FiniteRandomiser:
    try:
        rows = [[float(v) for v in line.split()] for line in Path(path).read_text().splitlines() if line.strip()]
        return audit.FiniteRandomiser(np.array(rows))
    except (OSError, ValueError) as exc:
        raise InvalidParameterError(f"cannot read matrix file {path!r}: {exc}") from None


def run_audit(config: ExperimentConfig, matrix: audit.FiniteRandomiser | None = None) -> dict:
    c = config
    checks: list[dict] = []
    lam = c.lam if c.lam is not None else shuffle_ut.calibrate_lambda(c.eps, c.delta)
    for g in ROBUST_GAMMAS:
        delta_g = 2 ** (1 - g) * c.delta**g
        rate = g * lam / 2
        checks.append({"check": "poisson_mechanism", "gamma": g, "rate": rate, "delta": delta_g,
                       "threshold": audit.poisson_mechanism_threshold(c.eps, delta_g),
                       "passed": audit.poisson_mechanism_check(rate, c.eps, delta_g)})
        hs = audit.poisson_noise_delta(rate, c.eps)
        checks.append({"check": "hockey_stick", "gamma": g, "rate": rate, "delta": hs,
                       "bound": 2 * c.delta**g, "passed": hs <= 2 * c.delta**g})

    if c.eps_l is not None:
        eps_l = c.eps_l
    elif c.protocol == "p2":
        eps_l = resolve(c).eps_l
    else:
        eps_l = c.eps
    scheme = ghr.ghr_params(c.k, eps_l)
    channel = audit.FiniteRandomiser(ghr.transition_matrix(scheme))
    ratio = audit.max_ldp_ratio(channel)
    checks.append({"check": "ghr_ldp_ratio", "eps_l": eps_l, "ratio": ratio, "bound": math.exp(eps_l),
                   "passed": ratio <= math.exp(eps_l) * (1 + 1e-9)})
    padded = _even_inputs(channel)
    trace = audit.trace_h(padded)
    checks.append({"check": "ghr_trace", "eps_l": eps_l, "trace": trace,
                   "bound": audit.trace_bound(eps_l, 0.0, scheme.message_bits),
                   "passed": audit.trace_bound_check(padded, eps_l, 0.0, scheme.message_bits)})

    if matrix is not None:
        ratio = audit.max_ldp_ratio(matrix)
        bits = max(1, math.ceil(math.log2(matrix.m)))
        m_even = _even_inputs(matrix)
        trace = audit.trace_h(m_even)
        checks.append({"check": "custom_matrix", "eps": c.eps, "ratio": ratio, "trace": trace,
                       "trace_bound": audit.trace_bound(c.eps, 0.0, bits),
                       "passed": ratio <= math.exp(c.eps) * (1 + 1e-9)
                       and audit.trace_bound_check(m_even, c.eps, 0.0, bits)})
    return {"schema_version": SCHEMA_VERSION, "command": "audit", "checks": checks,
            "all_passed": all(ch["passed"] for ch in checks)}


def _even_inputs(r: audit.FiniteRandomiser) -> audit.FiniteRandomiser:
    """Restrict to the first ``k - 1`` inputs when k is odd so inputs pair up (still a private channel)."""
    if r.k % 2 == 0:
        return r
    return audit.FiniteRandomiser(r.transition[:-1])
