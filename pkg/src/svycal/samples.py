"""Core data types: survey samples, estimating specifications, summaries.

A :class:`SurveySample` stores one probability sample in column-major
(array) form; :class:`UnitRecord` is the per-unit view used by the
record-level operations.  All types are frozen and their arrays are made
read-only on construction, so instances are safe to share across threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonFiniteInput

# Relative slack allowed between a design weight and the reciprocal of the
# stored inclusion probability.
WEIGHT_PROB_RTOL = 1e-9


class Family(str, enum.Enum):
    """Regression family of an estimating function."""

    LINEAR = "linear"
    LOGISTIC = "logistic"


class DesignKind(str, enum.Enum):
    """Sampling design used to draw a sample."""

    SRS = "srs"              # simple random sampling without replacement
    POISSON = "poisson"      # independent Bernoulli selections
    UNKNOWN = "unknown"      # variance falls back to with-replacement form


@dataclass(frozen=True)
class SampleDesign:
    """Design descriptor; SRS carries the population size it drew from."""

    kind: DesignKind
    population_size: int | None = None

    def __post_init__(self) -> None:
        if self.kind is DesignKind.SRS:
            if self.population_size is None or self.population_size <= 0:
                raise ValueError("SRS design requires a positive population size")
        elif self.population_size is not None:
            raise ValueError(f"{self.kind.value} design takes no population size")

    @classmethod
    def srs(cls, population_size: int) -> "SampleDesign":
        return cls(DesignKind.SRS, int(population_size))

    @classmethod
    def poisson(cls) -> "SampleDesign":
        return cls(DesignKind.POISSON)

    @classmethod
    def unknown(cls) -> "SampleDesign":
        return cls(DesignKind.UNKNOWN)


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class UnitRecord:
    """One sampled unit: covariates, response, and design information."""

    covariates: np.ndarray
    response: float
    design_weight: float
    inclusion_prob: float | None = None

    def __post_init__(self) -> None:
        cov = _readonly(np.atleast_1d(self.covariates))
        if cov.ndim != 1:
            raise DimensionMismatch("unit covariates must be a vector")
        if not np.all(np.isfinite(cov)):
            raise NonFiniteInput("unit covariates contain non-finite values")
        if not np.isfinite(self.response):
            raise NonFiniteInput("unit response is not finite")
        if not (self.design_weight > 0 and np.isfinite(self.design_weight)):
            raise ValueError(f"design weight must be positive, got {self.design_weight}")
        if self.inclusion_prob is not None:
            p = self.inclusion_prob
            if not (0.0 < p <= 1.0):
                raise ValueError(f"inclusion probability must lie in (0, 1], got {p}")
            if abs(self.design_weight - 1.0 / p) > WEIGHT_PROB_RTOL * self.design_weight:
                raise ValueError(
                    "design weight inconsistent with inclusion probability: "
                    f"d={self.design_weight}, 1/pi={1.0 / p}"
                )
        object.__setattr__(self, "covariates", cov)


@dataclass(frozen=True)
class SurveySample:
    """One probability sample in array form.

    Parameters
    ----------
    covariates : ndarray, shape (n, p)
    response : ndarray, shape (n,)
    design_weights : ndarray, shape (n,)
        Sampling weights, positive.
    design : SampleDesign
    inclusion_probs : ndarray or None
        Per-unit inclusion probabilities in (0, 1]; when present each
        weight must equal the reciprocal probability.
    label : str
        Free-form source tag used in diagnostics.
    """

    covariates: np.ndarray
    response: np.ndarray
    design_weights: np.ndarray
    design: SampleDesign
    inclusion_probs: np.ndarray | None = None
    label: str = ""

    def __post_init__(self) -> None:
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise DimensionMismatch("covariates must be an (n, p) matrix")
        y = np.asarray(self.response, dtype=float).ravel()
        d = np.asarray(self.design_weights, dtype=float).ravel()
        n = X.shape[0]
        if n == 0:
            raise ValueError("sample is empty")
        if y.shape[0] != n or d.shape[0] != n:
            raise DimensionMismatch(
                f"covariates ({n}), response ({y.shape[0]}) and weights "
                f"({d.shape[0]}) disagree in length"
            )
        if not np.all(np.isfinite(X)):
            raise NonFiniteInput("covariates contain non-finite values")
        if not np.all(np.isfinite(y)):
            raise NonFiniteInput("response contains non-finite values")
        if not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise ValueError("design weights must be finite and positive")

        pi = self.inclusion_probs
        if pi is not None:
            pi = np.asarray(pi, dtype=float).ravel()
            if pi.shape[0] != n:
                raise DimensionMismatch("inclusion probabilities have wrong length")
            if np.any(pi <= 0) or np.any(pi > 1):
                raise ValueError("inclusion probabilities must lie in (0, 1]")
            if np.any(np.abs(d - 1.0 / pi) > WEIGHT_PROB_RTOL * d):
                bad = int(np.argmax(np.abs(d - 1.0 / pi) > WEIGHT_PROB_RTOL * d))
                raise ValueError(
                    f"unit {bad}: design weight {d[bad]} inconsistent with "
                    f"inclusion probability {pi[bad]}"
                )
            pi = _readonly(pi)

        if self.design.kind is DesignKind.SRS:
            expected = self.design.population_size / n
            if not np.allclose(d, expected, rtol=1e-9, atol=0.0):
                raise ValueError(
                    "SRS sample requires all design weights equal to N/n="
                    f"{expected}"
                )

        object.__setattr__(self, "covariates", _readonly(X))
        object.__setattr__(self, "response", _readonly(y))
        object.__setattr__(self, "design_weights", _readonly(d))
        object.__setattr__(self, "inclusion_probs", pi)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def unit(self, i: int) -> UnitRecord:
        """Per-unit record view of row ``i``."""
        pi = None if self.inclusion_probs is None else float(self.inclusion_probs[i])
        return UnitRecord(
            covariates=self.covariates[i],
            response=float(self.response[i]),
            design_weight=float(self.design_weights[i]),
            inclusion_prob=pi,
        )

    def units(self) -> list[UnitRecord]:
        return [self.unit(i) for i in range(self.n)]

    def with_weights(self, weights: np.ndarray,
                     design: SampleDesign | None = None,
                     label: str | None = None) -> "SurveySample":
        """Copy of this sample with replaced design weights.

        Inclusion probabilities are dropped since they no longer match the
        weights; the design defaults to unknown for the same reason.
        """
        return SurveySample(
            covariates=self.covariates,
            response=self.response,
            design_weights=np.asarray(weights, dtype=float),
            design=design if design is not None else SampleDesign.unknown(),
            inclusion_probs=None,
            label=self.label if label is None else label,
        )


class Which(str, enum.Enum):
    """Selects between the full model and the working reduced model."""

    FULL = "full"
    REDUCED = "reduced"


@dataclass(frozen=True)
class EstimatingSpec:
    """Regression family plus covariate masks for the full/reduced models.

    ``full_mask`` and ``reduced_mask`` are boolean vectors over the sample
    covariate columns; the reduced set must be contained in the full set.
    The effective parameter dimensions are ``q_full = intercept +
    |full_mask|`` and ``q_reduced = intercept + |reduced_mask|``; an empty
    reduced selection is allowed only with an intercept (mean model).
    """

    family: Family
    full_mask: np.ndarray
    reduced_mask: np.ndarray
    intercept: bool = True

    def __post_init__(self) -> None:
        full = np.asarray(self.full_mask, dtype=bool).ravel()
        red = np.asarray(self.reduced_mask, dtype=bool).ravel()
        if full.shape != red.shape:
            raise DimensionMismatch("full and reduced masks differ in length")
        if np.any(red & ~full):
            raise ValueError("reduced mask selects covariates outside the full mask")
        if red.sum() + int(self.intercept) == 0:
            raise ValueError("reduced model has no parameters")
        if full.sum() + int(self.intercept) == 0:
            raise ValueError("full model has no parameters")
        fm = np.array(full, copy=True); fm.setflags(write=False)
        rm = np.array(red, copy=True); rm.setflags(write=False)
        object.__setattr__(self, "full_mask", fm)
        object.__setattr__(self, "reduced_mask", rm)

    def mask(self, which: Which) -> np.ndarray:
        return self.full_mask if which is Which.FULL else self.reduced_mask

    def dim(self, which: Which) -> int:
        """Parameter dimension of the selected model."""
        return int(self.mask(which).sum()) + int(self.intercept)

    @property
    def q_full(self) -> int:
        return self.dim(Which.FULL)

    @property
    def q_reduced(self) -> int:
        return self.dim(Which.REDUCED)

    @classmethod
    def from_counts(cls, family: Family, p: int,
                    reduced_cols: "list[int] | np.ndarray",
                    full_cols: "list[int] | np.ndarray | None" = None,
                    intercept: bool = True) -> "EstimatingSpec":
        """Build a spec from column indices (full defaults to all columns)."""
        full = np.zeros(p, dtype=bool)
        full[np.arange(p) if full_cols is None else np.asarray(full_cols)] = True
        red = np.zeros(p, dtype=bool)
        red[np.asarray(reduced_cols, dtype=int)] = True
        return cls(family=family, full_mask=full, reduced_mask=red,
                   intercept=intercept)


@dataclass(frozen=True)
class SummaryStatistic:
    """Point estimate and covariance published for a working reduced model."""

    coef: np.ndarray
    covariance: np.ndarray
    n_source: int | None = None
    label: str = ""

    #: relative tolerance for declaring the covariance asymmetric
    SYMMETRY_RTOL = 1e-12

    def __post_init__(self) -> None:
        a = np.asarray(self.coef, dtype=float).ravel()
        V = np.asarray(self.covariance, dtype=float)
        if V.shape != (a.size, a.size):
            raise DimensionMismatch(
                f"covariance shape {V.shape} does not match coefficient "
                f"length {a.size}"
            )
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(V))):
            raise NonFiniteInput("summary statistic contains non-finite values")
        scale = max(float(np.max(np.abs(V))), 1e-300)
        if np.max(np.abs(V - V.T)) > self.SYMMETRY_RTOL * scale:
            raise ValueError("covariance is asymmetric beyond tolerance")
        eigvals = np.linalg.eigvalsh(0.5 * (V + V.T))
        if eigvals.min() < -1e-10 * max(scale, 1.0):
            raise ValueError("covariance is not positive semidefinite")
        if self.n_source is not None and self.n_source <= 0:
            raise ValueError("n_source must be positive when given")
        object.__setattr__(self, "coef", _readonly(a))
        object.__setattr__(self, "covariance", _readonly(0.5 * (V + V.T)))

    @property
    def dim(self) -> int:
        return self.coef.size
