"""File formats: sample CSVs, summary/report JSON, calibrated-weight CSVs.

Numbers are emitted with 17 significant digits so every float round-trips
exactly.  Each JSON artifact validates against a schema document shipped
under ``svycal/schemas``.
"""

from __future__ import annotations

import csv
import json
import re
import warnings
from importlib import resources

import jsonschema
import numpy as np

from .benchmark import PooledBenchmark
from .calibration import CalibrationResult
from .errors import (
    AsymmetricCovariance,
    MalformedHeader,
    NonNumericCell,
    SchemaError,
    WeightNonPositive,
)
from .inference import EstimateReport
from .samples import SampleDesign, SummaryStatistic, SurveySample

_COVARIATE_RE = re.compile(r"^x([1-9][0-9]*)$")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _schema(name: str) -> dict:
    text = resources.files("svycal.schemas").joinpath(name).read_text("utf-8")
    return json.loads(text)


def validate_against_schema(document: dict, schema_name: str) -> None:
    """Raise SchemaError if a document fails its published schema."""
    try:
        jsonschema.validate(document, _schema(schema_name))
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"{schema_name}: {exc.message}") from exc


def parse_sample_csv(path: str, design: SampleDesign | None = None,
                     label: str = "") -> SurveySample:
    """Read a unit-record CSV into a survey sample.

    The header must contain covariate columns ``x1..xK``, ``y`` and
    ``weight``; a ``pi`` column of inclusion probabilities is optional.
    Row order is preserved.  When no design is given, a sample with a
    ``pi`` column is treated as Poisson-sampled and otherwise as unknown
    design.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedHeader(f"{path}: empty file") from None
        header = [h.strip() for h in header]

        cov_cols: dict[int, int] = {}
        y_col = weight_col = pi_col = None
        for idx, name in enumerate(header):
            m = _COVARIATE_RE.match(name)
            if m:
                cov_cols[int(m.group(1))] = idx
            elif name == "y":
                y_col = idx
            elif name == "weight":
                weight_col = idx
            elif name == "pi":
                pi_col = idx
            else:
                raise MalformedHeader(f"{path}: unexpected column {name!r}")
        if y_col is None or weight_col is None or not cov_cols:
            raise MalformedHeader(
                f"{path}: header must contain x1..xK, y, and weight"
            )
        ks = sorted(cov_cols)
        if ks != list(range(1, len(ks) + 1)):
            raise MalformedHeader(
                f"{path}: covariate columns must be consecutive x1..xK, "
                f"got {['x%d' % k for k in ks]}"
            )

        def cell(raw: list[str], col: int, row: int, name: str) -> float:
            try:
                value = float(raw[col])
            except (ValueError, IndexError):
                got = raw[col] if col < len(raw) else "<missing>"
                raise NonNumericCell(row, name, got) from None
            if not np.isfinite(value):
                raise NonNumericCell(row, name, raw[col])
            return value

        X_rows, ys, ws, pis, row_ids = [], [], [], [], []
        for row_num, raw in enumerate(reader, start=1):
            if not raw or all(not c.strip() for c in raw):
                continue
            X_rows.append([cell(raw, cov_cols[k], row_num, f"x{k}") for k in ks])
            ys.append(cell(raw, y_col, row_num, "y"))
            w = cell(raw, weight_col, row_num, "weight")
            if w <= 0:
                raise WeightNonPositive(row_num, w)
            ws.append(w)
            row_ids.append(row_num)
            if pi_col is not None:
                pis.append(cell(raw, pi_col, row_num, "pi"))

    if not X_rows:
        raise MalformedHeader(f"{path}: no data rows")
    weights = np.array(ws)
    pi = np.array(pis) if pi_col is not None else None
    if pi is not None:
        bad_range = (pi <= 0) | (pi > 1)
        if np.any(bad_range):
            bad = int(np.argmax(bad_range))
            raise ValueError(
                f"{path}: row {row_ids[bad]}: pi must lie in (0, 1]"
            )
        mismatch = np.abs(weights - 1.0 / pi) > 1e-9 * weights
        if np.any(mismatch):
            bad = int(np.argmax(mismatch))
            raise ValueError(
                f"{path}: row {row_ids[bad]}: weight {weights[bad]} is not "
                f"the reciprocal of pi {pi[bad]}"
            )
    if design is None:
        design = SampleDesign.poisson() if pi is not None \
            else SampleDesign.unknown()
    return SurveySample(
        covariates=np.array(X_rows),
        response=np.array(ys),
        design_weights=weights,
        design=design,
        inclusion_probs=pi,
        label=label or path,
    )


def emit_sample_csv(sample: SurveySample, path: str) -> None:
    """Write a sample back out in the unit-record CSV format."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = [f"x{j + 1}" for j in range(sample.p)] + ["y", "weight"]
        if sample.inclusion_probs is not None:
            header.append("pi")
        writer.writerow(header)
        for i in range(sample.n):
            row = [_fmt(v) for v in sample.covariates[i]]
            row += [_fmt(sample.response[i]), _fmt(sample.design_weights[i])]
            if sample.inclusion_probs is not None:
                row.append(_fmt(sample.inclusion_probs[i]))
            writer.writerow(row)


def summary_to_dict(stat: SummaryStatistic) -> dict:
    doc = {
        "alpha": [float(v) for v in stat.coef],
        "V": [[float(v) for v in row] for row in stat.covariance],
    }
    if stat.n_source is not None:
        doc["n"] = int(stat.n_source)
    return doc


def parse_summary_json(path: str) -> SummaryStatistic:
    """Read a reduced-model summary: ``{"alpha": [...], "V": [[...]], "n"?}``.

    Raises SchemaError for structural problems and AsymmetricCovariance
    when the covariance's off-diagonal entries disagree beyond a relative
    1e-12.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON: {exc}") from exc
    validate_against_schema(doc, "summary_statistic.schema.json")
    alpha = np.asarray(doc["alpha"], dtype=float)
    V = np.asarray(doc["V"], dtype=float)
    if V.ndim != 2 or V.shape[0] != V.shape[1] or V.shape[0] != alpha.size:
        raise SchemaError(
            f"{path}: V must be a {alpha.size}x{alpha.size} matrix, "
            f"got shape {V.shape}"
        )
    scale = max(float(np.max(np.abs(V))), 1e-300)
    if np.max(np.abs(V - V.T)) > SummaryStatistic.SYMMETRY_RTOL * scale:
        raise AsymmetricCovariance(
            f"{path}: covariance off-diagonals disagree beyond tolerance"
        )
    if V.shape[0] > 1 and not np.any(V[~np.eye(V.shape[0], dtype=bool)]):
        # sources that publish only standard errors lose the coefficient
        # correlations; accept the diagonal matrix but say so
        warnings.warn(
            f"{path}: covariance is diagonal; pooling will ignore "
            "coefficient correlations", UserWarning, stacklevel=2)
    try:
        return SummaryStatistic(coef=alpha, covariance=V, n_source=doc.get("n"))
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def emit_summary_json(stat: SummaryStatistic, path: str) -> None:
    doc = summary_to_dict(stat)
    validate_against_schema(doc, "summary_statistic.schema.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def pooled_to_dict(pooled: PooledBenchmark) -> dict:
    return {
        "alpha": [float(v) for v in pooled.coef],
        "V": [[float(v) for v in row] for row in pooled.covariance],
        "W": [[float(v) for v in row] for row in pooled.weight_matrix],
        "external_only": bool(pooled.external_only),
        "sources": {
            "internal": summary_to_dict(pooled.internal),
            "external": summary_to_dict(pooled.external),
        },
    }


def emit_pooled_json(pooled: PooledBenchmark, path: str) -> None:
    doc = pooled_to_dict(pooled)
    validate_against_schema(doc, "pooled_benchmark.schema.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def report_to_dict(report: EstimateReport) -> dict:
    doc = {
        "coef": [float(v) for v in report.coef],
        "covariance": [[float(v) for v in row] for row in report.covariance],
        "std_errors": [float(v) for v in report.std_errors],
        "ci_lower": [float(v) for v in report.ci_lower],
        "ci_upper": [float(v) for v in report.ci_upper],
        "level": float(report.level),
        "n": int(report.n_sample),
        "variance_mode": report.variance_mode.value,
    }
    cal = report.calibration
    if cal is not None:
        doc["calibration"] = {
            "multiplier": [float(v) for v in cal.multiplier],
            "iterations": int(cal.iterations),
            "max_constraint_residual": float(cal.max_constraint_residual),
            "converged": bool(cal.converged),
            "weight_sum": float(cal.weights.sum()),
            "min_weight": float(cal.weights.min()),
            "max_weight": float(cal.weights.max()),
        }
    return doc


def emit_report_json(report: EstimateReport, path: str) -> None:
    doc = report_to_dict(report)
    validate_against_schema(doc, "estimate_report.schema.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def emit_weights_csv(sample: SurveySample, result: CalibrationResult,
                     path: str) -> None:
    """Write per-unit design and calibrated weights.

    Calibrated weights are rescaled to the design-weight total so the two
    columns are directly comparable.
    """
    scaled = result.scaled_weights(float(sample.design_weights.sum()))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["unit_id", "d", "w"])
        for i in range(sample.n):
            writer.writerow([i, _fmt(sample.design_weights[i]),
                             _fmt(scaled[i])])
