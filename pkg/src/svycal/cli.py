"""Command-line interface.

Subcommands
-----------
simulate    run a Monte Carlo scenario from a TOML config, emit metrics CSV
estimate    calibrated regression estimate from a sample CSV + summary JSON
calibrate   emit calibrated weights for a sample against a benchmark
propensity  debias a big-data reduced-model fit via density-ratio weighting
pool        precision-weighted pooling of two summary JSONs

All failures exit nonzero after printing a machine-readable JSON error
record to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import io as sio
from .benchmark import estimate_alpha_internal, gls_pool
from .calibration import calibrated_estimate, multi_source_calibrate
from .errors import SvycalError
from .inference import (
    VarianceMode,
    assemble_decomposition,
    sandwich_estimated_alpha,
    wald_report,
)
from .propensity import RatioFeatures, debiased_alpha2, solve_density_ratio
from .samples import (
    DesignKind,
    EstimatingSpec,
    Family,
    SampleDesign,
    SurveySample,
)
from .simulate import (
    CovariateMode,
    Estimator,
    MetricsTable,
    Scenario,
    VarianceKind,
    run_monte_carlo,
)

log = logging.getLogger("svycal")


@dataclass(frozen=True)
class RunConfig:
    """Parsed invocation: subcommand plus its validated options."""

    command: str
    options: dict[str, Any]


def _parse_design(text: str | None) -> SampleDesign | None:
    if text is None:
        return None
    if text.startswith("srs:"):
        return SampleDesign.srs(int(text.split(":", 1)[1]))
    if text == "poisson":
        return SampleDesign.poisson()
    if text == "unknown":
        return SampleDesign.unknown()
    raise ValueError(f"unknown design {text!r}; use srs:N, poisson, or unknown")


def _parse_columns(text: str, p: int, what: str) -> np.ndarray:
    mask = np.zeros(p, dtype=bool)
    for token in text.split(","):
        token = token.strip()
        if not token.startswith("x"):
            raise ValueError(f"{what}: expected covariate names like x1, got {token!r}")
        idx = int(token[1:]) - 1
        if not (0 <= idx < p):
            raise ValueError(f"{what}: column {token} outside x1..x{p}")
        mask[idx] = True
    return mask


def _build_spec(args, sample: SurveySample) -> EstimatingSpec:
    p = sample.p
    reduced = _parse_columns(args.reduced, p, "--reduced")
    full_arg = getattr(args, "full", None)
    full = _parse_columns(full_arg, p, "--full") if full_arg is not None \
        else np.ones(p, dtype=bool)
    return EstimatingSpec(family=Family(args.family), full_mask=full,
                          reduced_mask=reduced)


def scenario_from_toml(path: str) -> Scenario:
    """Load a simulation scenario from a TOML config file."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    known = {
        "family", "population_size", "n_internal", "n_external",
        "covariate_mode", "variance_mode", "design_internal",
        "design_external", "replications", "seed", "estimators", "level",
    }
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"{path}: unknown scenario keys {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    if "family" in raw:
        kwargs["family"] = Family(raw["family"])
    if "covariate_mode" in raw:
        kwargs["covariate_mode"] = CovariateMode(raw["covariate_mode"])
    if "variance_mode" in raw:
        value = raw["variance_mode"]
        kwargs["variance_mode"] = None if value in ("", "none") \
            else VarianceKind(value)
    for key in ("design_internal", "design_external"):
        if key in raw:
            kwargs[key] = DesignKind(raw[key])
    for key in ("population_size", "n_internal", "n_external",
                "replications", "seed"):
        if key in raw:
            kwargs[key] = int(raw[key])
    if "level" in raw:
        kwargs["level"] = float(raw["level"])
    if "estimators" in raw:
        kwargs["estimators"] = frozenset(Estimator(e) for e in raw["estimators"])
    return Scenario(**kwargs)


def _emit_svg(table: MetricsTable, path: str) -> None:
    """Bias and coverage bar charts as one self-contained SVG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    estimators = sorted({row.estimator.value for row in table.rows})
    coefs = sorted({row.coefficient for row in table.rows})
    fig, (ax_bias, ax_cov) = plt.subplots(1, 2, figsize=(9, 3.5))
    width = 0.8 / max(len(estimators), 1)
    xs = np.arange(len(coefs))
    for k, est in enumerate(estimators):
        biases, coverages = [], []
        for coef in coefs:
            row = next(r for r in table.rows
                       if r.estimator.value == est and r.coefficient == coef)
            biases.append(row.bias)
            coverages.append(row.coverage)
        offset = (k - (len(estimators) - 1) / 2) * width
        ax_bias.bar(xs + offset, biases, width=width, label=est)
        ax_cov.bar(xs + offset, coverages, width=width, label=est)
    for ax, title in ((ax_bias, "Monte Carlo bias"), (ax_cov, "Coverage")):
        ax.set_xticks(xs)
        ax.set_xticklabels(coefs)
        ax.set_title(title)
    ax_cov.axhline(table.scenario.level, color="black", lw=0.8, ls="--")
    ax_cov.set_ylim(0.0, 1.05)
    ax_bias.legend(fontsize=8)
    fig.suptitle(table.scenario.cell_id(), fontsize=10)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _emit_replication_log(table: MetricsTable, path: str) -> None:
    details = table.details
    if details is None:
        raise ValueError("replication details were not collected")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("replication,estimator,failed,"
                 + ",".join(f"err_beta{j}" for j in range(3)) + "\n")
        M = details.beta_pop.shape[0]
        for rep in range(M):
            for est in details.estimators:
                errs = details.err[est][rep]
                cells = [str(rep), est.value,
                         str(int(details.failed[est][rep]))]
                cells += [format(float(v), ".17g") if np.isfinite(v) else "nan"
                          for v in errs]
                fh.write(",".join(cells) + "\n")


def _cmd_simulate(args) -> int:
    scenario = scenario_from_toml(args.config)
    table = run_monte_carlo(scenario, workers=args.workers)
    mismatch = [row for row in table.rows
                if row.failures + row.n_used != scenario.replications]
    if mismatch:
        raise SvycalError(
            "replication accounting mismatch for "
            + ", ".join(f"{r.estimator.value}/{r.coefficient}"
                        for r in mismatch))
    table.to_csv(args.out)
    log.info("simulate: %s -> %s (%.1fs)", scenario.cell_id(), args.out,
             table.wall_clock_seconds)
    if args.svg:
        _emit_svg(table, args.svg)
    if args.replication_log:
        _emit_replication_log(table, args.replication_log)
    return 0


def _cmd_estimate(args) -> int:
    design = _parse_design(args.design)
    sample = sio.parse_sample_csv(args.internal, design=design)
    spec = _build_spec(args, sample)
    external = sio.parse_summary_json(args.summary)
    internal = estimate_alpha_internal(sample, spec)
    pooled = gls_pool(internal, external,
                      use_external_only=args.use_external_only)
    coef, calres = calibrated_estimate(sample, spec, pooled.coef)
    mode = VarianceMode.EXTERNAL_DOMINANT if args.use_external_only \
        else VarianceMode.POOLED_BENCHMARK
    dec = assemble_decomposition(sample, spec, coef, pooled.coef, mode=mode)
    cov = sandwich_estimated_alpha(dec, pooled)
    report = wald_report(coef, cov, sample.n, level=args.level,
                         variance_mode=mode, calibration=calres)
    sio.emit_report_json(report, args.out)
    log.info("estimate: coef=%s -> %s", np.array2string(coef), args.out)
    return 0


def _cmd_calibrate(args) -> int:
    design = _parse_design(args.design)
    sample = sio.parse_sample_csv(args.internal, design=design)
    spec = _build_spec(args, sample)
    benchmark = sio.parse_summary_json(args.benchmark)
    _, calres = multi_source_calibrate(sample, [(spec, benchmark.coef)], spec)
    sio.emit_weights_csv(sample, calres, args.out)
    log.info("calibrate: residual=%g -> %s",
             calres.max_constraint_residual, args.out)
    return 0


def _cmd_propensity(args) -> int:
    big = sio.parse_sample_csv(args.big, design=SampleDesign.unknown())
    internal = sio.parse_sample_csv(args.internal,
                                    design=_parse_design(args.design))
    spec = _build_spec(args, internal)
    features = RatioFeatures.from_spec(
        spec, include_response=not args.no_response_feature)
    model = solve_density_ratio(big, internal, features)
    stat = debiased_alpha2(big, spec, model)
    sio.emit_summary_json(stat, args.out)
    log.info("propensity: tilt=%s -> %s",
             np.array2string(model.tilt_coef), args.out)
    return 0


def _cmd_pool(args) -> int:
    internal = sio.parse_summary_json(args.internal_summary)
    external = sio.parse_summary_json(args.external_summary)
    pooled = gls_pool(internal, external,
                      use_external_only=args.external_only)
    sio.emit_pooled_json(pooled, args.out)
    log.info("pool: alpha=%s -> %s", np.array2string(pooled.coef), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svycal",
        description="Survey regression with external-information calibration",
    )
    parser.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte Carlo scenario")
    sim.add_argument("--config", required=True, help="scenario TOML file")
    sim.add_argument("--out", required=True, help="metrics CSV path")
    sim.add_argument("--svg", help="optional bias/coverage chart (SVG)")
    sim.add_argument("--replication-log", help="optional per-replication CSV")
    sim.add_argument("--workers", type=int, default=None,
                     help="parallel workers (default: $SVYCAL_WORKERS or 1)")
    sim.set_defaults(func=_cmd_simulate)

    def add_model_args(p, need_full=True):
        p.add_argument("--family", required=True,
                       choices=["linear", "logistic"])
        p.add_argument("--reduced", required=True,
                       help="reduced-model covariates, e.g. x1")
        if need_full:
            p.add_argument("--full", default=None,
                           help="full-model covariates (default: all)")
        p.add_argument("--design", default=None,
                       help="srs:N, poisson, or unknown")

    est = sub.add_parser("estimate", help="calibrated regression estimate")
    est.add_argument("--internal", required=True, help="internal sample CSV")
    est.add_argument("--summary", required=True,
                     help="external summary JSON")
    add_model_args(est)
    est.add_argument("--use-external-only", action="store_true",
                     help="adopt the external summary without pooling")
    est.add_argument("--level", type=float, default=0.95)
    est.add_argument("--out", required=True, help="report JSON path")
    est.set_defaults(func=_cmd_estimate)

    cal = sub.add_parser("calibrate", help="emit calibrated weights")
    cal.add_argument("--internal", required=True, help="internal sample CSV")
    cal.add_argument("--benchmark", required=True,
                     help="benchmark summary JSON (its alpha is used)")
    add_model_args(cal)
    cal.add_argument("--out", required=True, help="weights CSV path")
    cal.set_defaults(func=_cmd_calibrate)

    pro = sub.add_parser("propensity",
                         help="debias a big-data reduced-model fit")
    pro.add_argument("--big", required=True, help="big-data sample CSV")
    pro.add_argument("--internal", required=True, help="internal sample CSV")
    add_model_args(pro, need_full=False)
    pro.add_argument("--no-response-feature", action="store_true",
                     help="exclude the response from the density-ratio model")
    pro.add_argument("--out", required=True, help="summary JSON path")
    pro.set_defaults(func=_cmd_propensity)

    pool = sub.add_parser("pool", help="pool two summary JSONs")
    pool.add_argument("--internal-summary", required=True)
    pool.add_argument("--external-summary", required=True)
    pool.add_argument("--external-only", action="store_true")
    pool.add_argument("--out", required=True, help="pooled JSON path")
    pool.set_defaults(func=_cmd_pool)
    return parser


def run_command(config: RunConfig) -> int:
    """Dispatch a parsed configuration (the programmatic entry point)."""
    parser = build_parser()
    argv = [config.command]
    for key, value in config.options.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(value, bool):
            if value:
                argv.append(flag)
        elif value is not None:
            argv += [flag, str(value)]
    args = parser.parse_args(argv)
    return args.func(args)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SvycalError as exc:
        record = {"error": type(exc).__name__,
                  "module": type(exc).__module__,
                  "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        record = {"error": type(exc).__name__, "module": "svycal.cli",
                  "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
