"""Monte Carlo harness: population generation, sampling designs, metrics.

Replications are independent: each one regenerates a finite population,
draws internal and external samples under the configured designs, runs
the requested estimators, and scores bias/variance/coverage against the
population-level coefficient (the root of the population estimating
equation, recomputed for each generated population).

Reproducibility: every replication derives its generator from
``SeedSequence([seed, replication_index])``, and aggregation indexes
results by replication, so output is bitwise identical for a given seed
regardless of worker count.
"""

from __future__ import annotations

import enum
import io
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .benchmark import estimate_alpha_internal, gls_pool, variance_linearized
from .calibration import calibrated_estimate
from .cml import ReducedParams, cml_fit
from .errors import SvycalError
from .estimating import design_matrix, solve_weighted_z
from .inference import (
    VarianceMode,
    assemble_decomposition,
    sandwich_estimated_alpha,
    uncalibrated_sandwich,
    wald_report,
)
from .samples import (
    DesignKind,
    EstimatingSpec,
    Family,
    SampleDesign,
    SurveySample,
    Which,
)

WORKERS_ENV_VAR = "SVYCAL_WORKERS"


class CovariateMode(str, enum.Enum):
    INDEPENDENT = "independent"
    DEPENDENT = "dependent"


class VarianceKind(str, enum.Enum):
    HOMO = "homo"
    HETERO = "hetero"


class Estimator(str, enum.Enum):
    PROPOSED = "proposed"
    CML = "cml"
    INTERNAL_ONLY = "internal_only"


ALL_ESTIMATORS = frozenset(Estimator)


@dataclass(frozen=True)
class Scenario:
    """One simulation configuration.

    Desk-scale defaults keep a full scenario grid within interactive
    runtimes; the published-scale sizes are available through
    :meth:`paper_scale`.
    """

    family: Family = Family.LINEAR
    population_size: int = 20_000
    n_internal: int = 500
    n_external: int = 2_000
    covariate_mode: CovariateMode = CovariateMode.INDEPENDENT
    variance_mode: VarianceKind | None = VarianceKind.HOMO
    design_internal: DesignKind = DesignKind.SRS
    design_external: DesignKind = DesignKind.SRS
    replications: int = 500
    seed: int = 20240811
    estimators: frozenset[Estimator] = ALL_ESTIMATORS
    level: float = 0.95

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "covariate_mode",
                           CovariateMode(self.covariate_mode))
        if self.variance_mode is not None:
            object.__setattr__(self, "variance_mode",
                               VarianceKind(self.variance_mode))
        object.__setattr__(self, "design_internal",
                           DesignKind(self.design_internal))
        object.__setattr__(self, "design_external",
                           DesignKind(self.design_external))
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if not (0 < self.n_internal < self.population_size):
            raise ValueError("internal sample size must lie in (0, N)")
        if not (0 < self.n_external < self.population_size):
            raise ValueError("external sample size must lie in (0, N)")
        if self.design_internal not in (DesignKind.SRS, DesignKind.POISSON):
            raise ValueError("internal design must be SRS or Poisson")
        if self.design_external not in (DesignKind.SRS, DesignKind.POISSON):
            raise ValueError("external design must be SRS or Poisson")
        if self.family is Family.LINEAR and self.variance_mode is None:
            raise ValueError("linear scenarios need a variance mode")
        object.__setattr__(self, "estimators", frozenset(self.estimators))

    @classmethod
    def paper_scale(cls, **overrides) -> "Scenario":
        """Published-scale sizes: N=100,000, n1=1,000, n2=10,000, M=1,000."""
        base = dict(population_size=100_000, n_internal=1_000,
                    n_external=10_000, replications=1_000)
        base.update(overrides)
        return cls(**base)

    def spec(self) -> EstimatingSpec:
        """Full model on (x1, x2), working reduced model on x1."""
        return EstimatingSpec(
            family=self.family,
            full_mask=np.array([True, True]),
            reduced_mask=np.array([True, False]),
            intercept=True,
        )

    @property
    def n_coef(self) -> int:
        return 3

    def cell_id(self) -> str:
        parts = [self.family.value, self.covariate_mode.value]
        if self.variance_mode is not None:
            parts.append(self.variance_mode.value)
        parts += [self.design_internal.value, self.design_external.value]
        return "/".join(parts)


@dataclass(frozen=True)
class FinitePopulation:
    covariates: np.ndarray
    response: np.ndarray

    @property
    def size(self) -> int:
        return self.response.size


def gen_population(scenario: Scenario, rng: np.random.Generator) -> FinitePopulation:
    """Generate one synthetic finite population for the scenario."""
    N = scenario.population_size
    x1 = rng.normal(3.0, 1.0, size=N)
    if scenario.covariate_mode is CovariateMode.INDEPENDENT:
        x2 = rng.normal(11.0, 6.5, size=N)
    else:
        x2 = x1**2 + rng.normal(0.0, 1.0, size=N)
    X = np.column_stack([x1, x2])

    if scenario.family is Family.LINEAR:
        mu = 1.0 + 2.0 * x1 + x2
        noise = rng.normal(0.0, 1.0, size=N)
        if scenario.variance_mode is VarianceKind.HOMO:
            y = mu + 3.0 * noise
        else:
            y = mu + 0.2 * np.abs(mu) * noise
    else:
        prob = expit(-0.5 + 0.3 * x1 - 0.1 * x2)
        y = (rng.random(N) < prob).astype(float)
    return FinitePopulation(covariates=X, response=y)


def population_sample(pop: FinitePopulation) -> SurveySample:
    """The whole population viewed as a unit-weight sample."""
    return SurveySample(
        covariates=pop.covariates,
        response=pop.response,
        design_weights=np.ones(pop.size),
        design=SampleDesign.unknown(),
        label="population",
    )


def population_coef(pop: FinitePopulation, spec: EstimatingSpec,
                    which: Which = Which.FULL) -> np.ndarray:
    """Root of the population-level estimating equation (unit weights)."""
    whole = population_sample(pop)
    return solve_weighted_z(whole, spec, which, whole.design_weights)


def draw_srs(pop: FinitePopulation, n: int,
             rng: np.random.Generator) -> SurveySample:
    """Simple random sample without replacement; weights all N/n."""
    N = pop.size
    idx = rng.choice(N, size=n, replace=False)
    return SurveySample(
        covariates=pop.covariates[idx],
        response=pop.response[idx],
        design_weights=np.full(n, N / n),
        design=SampleDesign.srs(N),
        label="srs",
    )


def poisson_inclusion_probs(size_values: np.ndarray, target_n: float,
                            tol: float = 1e-6) -> np.ndarray:
    """Inclusion probabilities proportional to size, clamped at one.

    Solves for the constant ``c`` such that ``sum(min(c * s_i, 1))``
    equals the target expected size, by bisection.
    """
    s = np.asarray(size_values, dtype=float).ravel()
    if np.any(s <= 0):
        raise ValueError("size values must be positive")
    if not (0 < target_n <= s.size):
        raise ValueError("target size must lie in (0, N]")

    def expected(c: float) -> float:
        return float(np.minimum(c * s, 1.0).sum())

    lo, hi = 0.0, target_n / s.sum()
    for _ in range(200):
        if expected(hi) >= target_n:
            break
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if abs(expected(mid) - target_n) <= tol:
            lo = hi = mid
            break
        if expected(mid) < target_n:
            lo = mid
        else:
            hi = mid
    c = 0.5 * (lo + hi)
    return np.minimum(c * s, 1.0)


def draw_poisson(pop: FinitePopulation, target_n: float,
                 size_values: np.ndarray,
                 rng: np.random.Generator) -> SurveySample:
    """Poisson sample: independent Bernoulli draws with size-based probs."""
    probs = poisson_inclusion_probs(size_values, target_n)
    keep = rng.random(pop.size) < probs
    pi = probs[keep]
    return SurveySample(
        covariates=pop.covariates[keep],
        response=pop.response[keep],
        design_weights=1.0 / pi,
        design=SampleDesign.poisson(),
        inclusion_probs=pi,
        label="poisson",
    )


def internal_size_values(scenario: Scenario, pop: FinitePopulation) -> np.ndarray:
    """Size variable for the informative internal Poisson design."""
    y = pop.response
    if scenario.family is Family.LINEAR:
        return np.sqrt(y - y.min() + 10.0)
    return np.where(y == 1.0, 0.9, 0.1)


def external_size_values(pop: FinitePopulation) -> np.ndarray:
    """Size variable for the covariate-driven external Poisson design."""
    x1, x2 = pop.covariates[:, 0], pop.covariates[:, 1]
    return expit(-(0.2 * x1 + 0.1 * x2 - 0.6))


def _draw(scenario: Scenario, pop: FinitePopulation, kind: DesignKind,
          n: int, size_values: np.ndarray | None,
          rng: np.random.Generator) -> SurveySample:
    if kind is DesignKind.SRS:
        return draw_srs(pop, n, rng)
    assert size_values is not None
    return draw_poisson(pop, float(n), size_values, rng)


@dataclass
class ReplicationResult:
    """Flat per-replication record (NaN-filled on estimator failure)."""

    beta_pop: np.ndarray
    err: dict[Estimator, np.ndarray]
    hit: dict[Estimator, np.ndarray]
    plugin_var: dict[Estimator, np.ndarray]
    failed: dict[Estimator, bool]
    trace_calibrated: float
    trace_uncalibrated: float


def external_reduced_sigma2(sample: SurveySample, spec: EstimatingSpec,
                            reduced_coef: np.ndarray) -> float:
    """Design-weighted residual variance of the reduced linear fit."""
    Z = design_matrix(spec, Which.REDUCED, sample.covariates)
    resid = sample.response - Z @ np.asarray(reduced_coef, dtype=float)
    d = sample.design_weights
    return float(d @ resid**2 / d.sum())


def run_replication(scenario: Scenario, rep: int) -> ReplicationResult:
    """Generate, draw, estimate, and score one replication."""
    rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, rep]))
    spec = scenario.spec()
    pop = gen_population(scenario, rng)
    beta_pop = population_coef(pop, spec, Which.FULL)

    s_int = _draw(scenario, pop, scenario.design_internal, scenario.n_internal,
                  internal_size_values(scenario, pop)
                  if scenario.design_internal is DesignKind.POISSON else None,
                  rng)
    s_ext = _draw(scenario, pop, scenario.design_external, scenario.n_external,
                  external_size_values(pop)
                  if scenario.design_external is DesignKind.POISSON else None,
                  rng)

    q = scenario.n_coef
    nanq = np.full(q, np.nan)
    err = {e: nanq.copy() for e in scenario.estimators}
    hit = {e: nanq.copy() for e in scenario.estimators}
    plug = {e: nanq.copy() for e in scenario.estimators}
    failed = {e: False for e in scenario.estimators}
    trace_cal = np.nan
    trace_uncal = np.nan

    external = None
    needs_external = {Estimator.PROPOSED, Estimator.CML} & scenario.estimators
    if needs_external:
        try:
            external = estimate_alpha_internal(s_ext, spec)
        except SvycalError:
            for est in needs_external:
                failed[est] = True

    if Estimator.PROPOSED in scenario.estimators and external is not None:
        try:
            internal = estimate_alpha_internal(s_int, spec)
            pooled = gls_pool(internal, external)
            beta_cal, calres = calibrated_estimate(s_int, spec, pooled.coef)
            dec = assemble_decomposition(s_int, spec, beta_cal, pooled.coef,
                                         mode=VarianceMode.POOLED_BENCHMARK)
            cov = sandwich_estimated_alpha(dec, pooled)
            report = wald_report(beta_cal, cov, s_int.n, scenario.level,
                                 VarianceMode.POOLED_BENCHMARK, calres)
            err[Estimator.PROPOSED] = beta_cal - beta_pop
            hit[Estimator.PROPOSED] = (
                (report.ci_lower <= beta_pop) & (beta_pop <= report.ci_upper)
            ).astype(float)
            plug[Estimator.PROPOSED] = np.diag(cov) / s_int.n
            trace_cal = float(np.trace(cov))
            trace_uncal = float(np.trace(uncalibrated_sandwich(dec)))
        except SvycalError:
            failed[Estimator.PROPOSED] = True

    if Estimator.INTERNAL_ONLY in scenario.estimators:
        try:
            beta_int = solve_weighted_z(s_int, spec, Which.FULL,
                                        s_int.design_weights)
            cov_nat = variance_linearized(s_int, spec, Which.FULL, beta_int)
            report = wald_report(beta_int, s_int.n * cov_nat, s_int.n,
                                 scenario.level, VarianceMode.KNOWN_BENCHMARK)
            err[Estimator.INTERNAL_ONLY] = beta_int - beta_pop
            hit[Estimator.INTERNAL_ONLY] = (
                (report.ci_lower <= beta_pop) & (beta_pop <= report.ci_upper)
            ).astype(float)
            plug[Estimator.INTERNAL_ONLY] = np.diag(cov_nat)
        except SvycalError:
            failed[Estimator.INTERNAL_ONLY] = True

    if Estimator.CML in scenario.estimators and external is not None:
        sigma2 = None
        if scenario.family is Family.LINEAR:
            sigma2 = external_reduced_sigma2(s_ext, spec, external.coef)
        try:
            fit = cml_fit(s_int, spec,
                          ReducedParams(coef=external.coef, residual_var=sigma2))
        except SvycalError:
            failed[Estimator.CML] = True
        else:
            if fit.is_na:
                failed[Estimator.CML] = True
            else:
                err[Estimator.CML] = fit.coef - beta_pop

    return ReplicationResult(
        beta_pop=beta_pop, err=err, hit=hit, plugin_var=plug, failed=failed,
        trace_calibrated=trace_cal, trace_uncalibrated=trace_uncal,
    )


@dataclass
class ReplicationLog:
    """Stacked per-replication detail used by verification tests."""

    estimators: tuple[Estimator, ...]
    err: dict[Estimator, np.ndarray]          # (M, q)
    hit: dict[Estimator, np.ndarray]          # (M, q)
    plugin_var: dict[Estimator, np.ndarray]   # (M, q)
    failed: dict[Estimator, np.ndarray]       # (M,)
    trace_calibrated: np.ndarray              # (M,)
    trace_uncalibrated: np.ndarray            # (M,)
    beta_pop: np.ndarray                      # (M, q)


@dataclass
class MetricsRow:
    estimator: Estimator
    coefficient: str
    bias: float
    mc_variance: float
    mean_plugin_variance: float
    coverage: float
    failures: int
    n_used: int


@dataclass
class MetricsTable:
    """Aggregated Monte Carlo metrics for one scenario.

    ``wall_clock_seconds`` is runtime metadata and deliberately excluded
    from CSV emission so repeated runs with the same seed produce
    byte-identical files.
    """

    scenario: Scenario
    rows: list[MetricsRow]
    wall_clock_seconds: float
    details: ReplicationLog | None = None

    CSV_COLUMNS = (
        "family", "covariate_mode", "variance_mode", "design_internal",
        "design_external", "population_size", "n_internal", "n_external",
        "replications", "seed", "estimator", "coefficient", "bias",
        "mc_variance", "mean_plugin_variance", "coverage", "failures",
        "n_used",
    )

    def row_for(self, estimator: Estimator, coef_index: int) -> MetricsRow:
        name = f"beta{coef_index}"
        for row in self.rows:
            if row.estimator is estimator and row.coefficient == name:
                return row
        raise KeyError(f"no row for {estimator.value}/{name}")

    def to_csv_string(self) -> str:
        sc = self.scenario
        buf = io.StringIO()
        buf.write(",".join(self.CSV_COLUMNS) + "\n")
        prefix = [
            sc.family.value, sc.covariate_mode.value,
            sc.variance_mode.value if sc.variance_mode else "",
            sc.design_internal.value, sc.design_external.value,
            str(sc.population_size), str(sc.n_internal), str(sc.n_external),
            str(sc.replications), str(sc.seed),
        ]
        for row in self.rows:
            cells = prefix + [
                row.estimator.value, row.coefficient,
                _fmt(row.bias), _fmt(row.mc_variance),
                _fmt(row.mean_plugin_variance), _fmt(row.coverage),
                str(row.failures), str(row.n_used),
            ]
            buf.write(",".join(cells) + "\n")
        return buf.getvalue()

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv_string())


def _fmt(x: float) -> str:
    if np.isnan(x):
        return "nan"
    return format(float(x), ".17g")


def resolve_workers(workers: int | None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(WORKERS_ENV_VAR)
    return max(1, int(env)) if env else 1


def _estimator_order(scenario: Scenario) -> tuple[Estimator, ...]:
    return tuple(e for e in Estimator if e in scenario.estimators)


def run_monte_carlo(scenario: Scenario, workers: int | None = None,
                    keep_details: bool = True) -> MetricsTable:
    """Run all replications and aggregate the metrics table.

    Per-replication estimator failures (infeasible calibration, NA
    constrained fits, singular systems) are counted, never fatal.
    """
    start = time.perf_counter()
    M = scenario.replications
    n_workers = resolve_workers(workers)

    if n_workers == 1 or M == 1:
        results = [run_replication(scenario, rep) for rep in range(M)]
    else:
        chunk = max(1, M // (n_workers * 8))
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_rep_worker,
                                    [(scenario, rep) for rep in range(M)],
                                    chunksize=chunk))

    order = _estimator_order(scenario)
    q = scenario.n_coef
    log = ReplicationLog(
        estimators=order,
        err={e: np.vstack([r.err[e] for r in results]) for e in order},
        hit={e: np.vstack([r.hit[e] for r in results]) for e in order},
        plugin_var={e: np.vstack([r.plugin_var[e] for r in results])
                    for e in order},
        failed={e: np.array([r.failed[e] for r in results]) for e in order},
        trace_calibrated=np.array([r.trace_calibrated for r in results]),
        trace_uncalibrated=np.array([r.trace_uncalibrated for r in results]),
        beta_pop=np.vstack([r.beta_pop for r in results]),
    )

    rows: list[MetricsRow] = []
    for est in order:
        ok = ~log.failed[est]
        n_used = int(ok.sum())
        failures = M - n_used
        for j in range(q):
            errs = log.err[est][ok, j]
            hits = log.hit[est][ok, j]
            plugs = log.plugin_var[est][ok, j]
            rows.append(MetricsRow(
                estimator=est,
                coefficient=f"beta{j}",
                bias=float(np.mean(errs)) if n_used else np.nan,
                mc_variance=float(np.var(errs, ddof=1)) if n_used > 1 else np.nan,
                mean_plugin_variance=(float(np.mean(plugs))
                                      if n_used and np.isfinite(plugs).all()
                                      else np.nan),
                coverage=(float(np.mean(hits))
                          if n_used and np.isfinite(hits).all() else np.nan),
                failures=failures,
                n_used=n_used,
            ))

    elapsed = time.perf_counter() - start
    return MetricsTable(scenario=scenario, rows=rows,
                        wall_clock_seconds=elapsed,
                        details=log if keep_details else None)


def _rep_worker(args: tuple[Scenario, int]) -> ReplicationResult:
    return run_replication(*args)
