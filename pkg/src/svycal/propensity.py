"""Max-entropy density-ratio weighting for selection-biased big data.

The selection probability of a big-data record is modelled through the
density ratio between non-selected and selected units:

    1 / pi(f) = 1 + (N0 / N1) * r(f),   log r(f) = tilt_coef' f,

where ``f`` is a feature vector (constant, selected covariates, and
optionally the response), ``N1`` the big-data count, and ``N0`` its
design-estimated complement.  The tilt coefficient solves a moment system
matching the exponentially tilted big-data means to design-weighted
targets estimated from the internal probability sample.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .benchmark import variance_linearized
from .errors import DegenerateTargets, DimensionMismatch, NoConvergence
from .estimating import solve_weighted_z
from .samples import (
    EstimatingSpec,
    SampleDesign,
    SummaryStatistic,
    SurveySample,
    UnitRecord,
    Which,
)

#: residual tolerance on the infinity norm of the moment system
MOMENT_TOL = 1e-9
MAX_ITER = 100
MAX_HALVINGS = 40
#: exponent clamp applied inside every tilt evaluation
EXP_CLAMP = 50.0


@dataclass(frozen=True)
class RatioFeatures:
    """Feature selection for the density-ratio model.

    Marks which covariate columns enter the log-linear ratio, and whether
    the response does; a leading constant is always included.
    """

    covariate_mask: np.ndarray
    include_response: bool = True

    def __post_init__(self) -> None:
        mask = np.asarray(self.covariate_mask, dtype=bool).ravel()
        object.__setattr__(self, "covariate_mask", mask)

    @classmethod
    def from_spec(cls, spec: EstimatingSpec,
                  include_response: bool = True) -> "RatioFeatures":
        """Ratio features matching a spec's reduced covariates."""
        return cls(covariate_mask=spec.reduced_mask,
                   include_response=include_response)

    def matrix(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Feature rows ``(1, x_selected, [y])`` for a sample."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.covariate_mask.size:
            raise DimensionMismatch("covariate dimension does not match mask")
        cols = [np.ones(X.shape[0]), X[:, self.covariate_mask]]
        if self.include_response:
            cols.append(np.asarray(y, dtype=float).ravel()[:, None])
        return np.column_stack(cols)

    @property
    def dim(self) -> int:
        return 1 + int(self.covariate_mask.sum()) + int(self.include_response)


@dataclass(frozen=True)
class DensityRatioModel:
    """Fitted log-linear density ratio with its calibration targets."""

    tilt_coef: np.ndarray
    n_big: int
    n_complement: float        # design estimate of the non-selected count
    moment_targets: np.ndarray
    features: RatioFeatures

    def __post_init__(self) -> None:
        if self.n_complement <= 0:
            raise ValueError("estimated non-selected count must be positive")
        t = np.asarray(self.moment_targets, dtype=float).ravel()
        if abs(t[0] - 1.0) > 1e-12:
            raise ValueError("first moment target must equal one")
        object.__setattr__(self, "tilt_coef",
                           np.asarray(self.tilt_coef, dtype=float).ravel())
        object.__setattr__(self, "moment_targets", t)


def _clamped_exp(z: np.ndarray) -> tuple[np.ndarray, bool]:
    clamped = bool(np.any(np.abs(z) > EXP_CLAMP))
    return np.exp(np.clip(z, -EXP_CLAMP, EXP_CLAMP)), clamped


def _cone_separation_exists(F: np.ndarray, target: np.ndarray) -> bool:
    """True if a direction proves the target leaves the feature cone.

    A ``v`` with ``f_i'v >= 0`` for all rows and ``target'v <= -1`` (or
    ``target'v <= 0`` with the rows strictly positive on average)
    certifies that no positive tilting of the rows can average to the
    target.
    """
    n, q = F.shape
    ones_dir = np.ones(n) @ F
    for rhs in (-1.0, 0.0):
        a_ub = np.vstack([-F, target[None, :]])
        b_ub = np.concatenate([np.zeros(n), [rhs]])
        if rhs == 0.0:
            a_ub = np.vstack([a_ub, -ones_dir[None, :]])
            b_ub = np.concatenate([b_ub, [-1.0]])
        res = linprog(c=np.zeros(q), A_ub=a_ub, b_ub=b_ub,
                      bounds=[(None, None)] * q, method="highs")
        if res.status == 0:
            return True
    return False


def solve_density_ratio(big: SurveySample, internal: SurveySample,
                        features: RatioFeatures,
                        tilt0: np.ndarray | None = None) -> DensityRatioModel:
    """Fit the tilt coefficient by matching design-weighted moment targets.

    Big-data unit weights are ignored (its selection mechanism is the
    unknown being modelled); the internal sample must carry valid design
    weights and its expansion size must exceed the big-data count.

    Raises
    ------
    DegenerateTargets
        If the targets are unreachable by any exponential tilt of the
        big-data features, or the estimated non-selected count is not
        positive.
    NoConvergence
        If Newton stalls on a solvable-looking system.
    """
    F = features.matrix(big.covariates, big.response)
    n_big = big.n
    n_hat = float(internal.design_weights.sum())
    n_comp = n_hat - n_big
    if n_comp <= 0:
        raise DegenerateTargets(
            "internal expansion size must exceed the big-data count "
            f"(got N_hat={n_hat}, N1={n_big})"
        )

    f_internal = features.matrix(internal.covariates, internal.response)
    totals = internal.design_weights @ f_internal - F.sum(axis=0)
    targets = totals / n_comp
    targets[0] = 1.0

    tilt = np.zeros(features.dim) if tilt0 is None else \
        np.asarray(tilt0, dtype=float).ravel()

    def moments(phi: np.ndarray) -> np.ndarray:
        tilt_factor, _ = _clamped_exp(F @ phi)
        return (tilt_factor @ F) / n_big

    resid = moments(tilt) - targets
    res_norm = float(np.linalg.norm(resid))
    for _ in range(MAX_ITER):
        if np.max(np.abs(resid)) <= MOMENT_TOL:
            return DensityRatioModel(
                tilt_coef=tilt, n_big=n_big, n_complement=n_comp,
                moment_targets=targets, features=features,
            )
        tilt_factor, _ = _clamped_exp(F @ tilt)
        hess = (F * tilt_factor[:, None]).T @ F / n_big
        try:
            step = np.linalg.solve(hess, -resid)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break

        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            cand = tilt + step
            cand_resid = moments(cand) - targets
            cand_norm = float(np.linalg.norm(cand_resid))
            if np.isfinite(cand_norm) and cand_norm < res_norm:
                tilt, resid, res_norm = cand, cand_resid, cand_norm
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            break

    if _cone_separation_exists(F, targets):
        raise DegenerateTargets(
            "moment targets lie outside the achievable tilt range of the "
            "big-data features"
        )
    raise NoConvergence("density-ratio moment system did not converge",
                        residual=float(np.max(np.abs(resid))))


def propensity_inverse(model: DensityRatioModel, unit: UnitRecord) -> float:
    """Inverse selection probability for one unit (always > 1)."""
    f = model.features.matrix(unit.covariates[None, :],
                              np.array([unit.response]))[0]
    value, clamped = _clamped_exp(np.array([f @ model.tilt_coef]))
    if clamped:
        warnings.warn("density-ratio exponent clamped at +/-50",
                      RuntimeWarning, stacklevel=2)
    return float(1.0 + (model.n_complement / model.n_big) * value[0])


def propensity_inverse_all(model: DensityRatioModel,
                           sample: SurveySample) -> np.ndarray:
    """Vectorized inverse selection probabilities for a whole sample."""
    F = model.features.matrix(sample.covariates, sample.response)
    values, clamped = _clamped_exp(F @ model.tilt_coef)
    if clamped:
        warnings.warn("density-ratio exponent clamped at +/-50",
                      RuntimeWarning, stacklevel=2)
    return 1.0 + (model.n_complement / model.n_big) * values


def debiased_alpha2(big: SurveySample, spec: EstimatingSpec,
                    model: DensityRatioModel) -> SummaryStatistic:
    """Reduced-model fit on the big sample with propensity-inverse weights.

    The covariance treats the fitted selection probabilities as fixed and
    uses the with-replacement sandwich, the appropriate default when the
    big sample dwarfs the internal one.
    """
    weights = propensity_inverse_all(model, big)
    weighted = big.with_weights(weights, design=SampleDesign.unknown(),
                                label=big.label or "big-debiased")
    coef = solve_weighted_z(weighted, spec, Which.REDUCED, weights)
    cov = variance_linearized(weighted, spec, Which.REDUCED, coef)
    return SummaryStatistic(coef=coef, covariance=cov, n_source=big.n,
                            label=weighted.label)
