"""Internal benchmark estimation, design-based variance, and GLS pooling.

``variance_linearized`` is the sandwich plug-in used throughout: inverse
weighted score Jacobian times a design-specific estimate of the variance
of the weighted score total.  ``gls_pool`` combines an internal and an
external summary with precision weighting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, SingularCovariance, SingularJacobian
from .estimating import (
    normalized_weights,
    score_matrix,
    solve_weighted_z,
    weighted_jacobian_total,
)
from .samples import (
    DesignKind,
    EstimatingSpec,
    SummaryStatistic,
    SurveySample,
    Which,
)

#: reciprocal-condition threshold below which a covariance is declared singular
RCOND_MIN = 1e-12


def score_total_covariance(sample: SurveySample, scores: np.ndarray) -> np.ndarray:
    """Design-based variance estimate of ``sum_i dtilde_i scores_i``.

    Poisson designs use the exact single-draw form
    ``sum dtilde_i^2 (1 - pi_i) s_i s_i'``; SRS without replacement uses
    the finite-population-corrected sample covariance of the rows; unknown
    designs fall back to the with-replacement form
    ``sum dtilde_i^2 s_i s_i'``.
    """
    S = np.atleast_2d(np.asarray(scores, dtype=float))
    if S.shape[0] != sample.n:
        raise DimensionMismatch("score rows do not match sample size")
    dt = normalized_weights(sample)
    kind = sample.design.kind
    if kind is DesignKind.POISSON:
        if sample.inclusion_probs is None:
            raise ValueError("Poisson variance requires inclusion probabilities")
        w2 = dt**2 * (1.0 - sample.inclusion_probs)
        return (S * w2[:, None]).T @ S
    if kind is DesignKind.SRS:
        n = sample.n
        N = sample.design.population_size
        if n < 2:
            return np.zeros((S.shape[1], S.shape[1]))
        centered = S - S.mean(axis=0)
        sample_cov = centered.T @ centered / (n - 1)
        return (1.0 - n / N) / n * sample_cov
    w2 = dt**2
    return (S * w2[:, None]).T @ S


def variance_linearized(sample: SurveySample, spec: EstimatingSpec, which: Which,
                        theta_hat: np.ndarray) -> np.ndarray:
    """Sandwich covariance estimate for a design-weighted Z-estimator.

    ``theta_hat`` must already solve the weighted score equation; the
    bread is the normalized-weight score Jacobian and the meat is the
    design-based covariance of the weighted score total.
    """
    theta_hat = np.asarray(theta_hat, dtype=float).ravel()
    dt = normalized_weights(sample)
    jac = weighted_jacobian_total(spec, which, theta_hat, sample.covariates, dt)
    meat = score_total_covariance(
        sample, score_matrix(spec, which, theta_hat,
                             sample.covariates, sample.response))
    try:
        bread = np.linalg.solve(jac, np.eye(jac.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise SingularJacobian("score Jacobian is singular") from exc
    cov = bread @ meat @ bread.T
    return 0.5 * (cov + cov.T)


def estimate_alpha_internal(sample: SurveySample,
                            spec: EstimatingSpec) -> SummaryStatistic:
    """Fit the working reduced model on the internal sample.

    Returns the design-weighted coefficient estimate together with its
    linearized covariance under the sample's design.
    """
    coef = solve_weighted_z(sample, spec, Which.REDUCED, sample.design_weights)
    cov = variance_linearized(sample, spec, Which.REDUCED, coef)
    return SummaryStatistic(coef=coef, covariance=cov, n_source=sample.n,
                            label=sample.label or "internal")


def _spd_inverse(V: np.ndarray, what: str) -> np.ndarray:
    V = 0.5 * (V + V.T)
    eigvals = np.linalg.eigvalsh(V)
    if eigvals.min() <= 0 or eigvals.min() < RCOND_MIN * eigvals.max():
        raise SingularCovariance(f"{what} is singular or nearly singular")
    return np.linalg.inv(V)


@dataclass(frozen=True)
class PooledBenchmark:
    """Precision-weighted combination of two benchmark summaries.

    ``weight_matrix`` maps the external estimate's contribution:
    ``coef = (I - W) a_internal + W a_external`` with
    ``W = (V1^-1 + V2^-1)^-1 V2^-1``.  With ``external_only`` the external
    summary is adopted unchanged and ``W`` is the identity.
    """

    coef: np.ndarray
    covariance: np.ndarray
    weight_matrix: np.ndarray
    internal: SummaryStatistic
    external: SummaryStatistic
    external_only: bool = False

    def __post_init__(self) -> None:
        a = np.asarray(self.coef, dtype=float).ravel()
        V = np.asarray(self.covariance, dtype=float)
        W = np.asarray(self.weight_matrix, dtype=float)
        q = a.size
        if V.shape != (q, q) or W.shape != (q, q):
            raise DimensionMismatch("pooled benchmark blocks have wrong shapes")
        object.__setattr__(self, "coef", a)
        object.__setattr__(self, "covariance", 0.5 * (V + V.T))
        object.__setattr__(self, "weight_matrix", W)


def gls_pool(internal: SummaryStatistic, external: SummaryStatistic,
             use_external_only: bool = False) -> PooledBenchmark:
    """Pool internal and external reduced-model summaries by precision.

    With ``use_external_only`` (appropriate when the external source is so
    large that its variance is negligible) the external coefficient is
    returned as-is and the weight matrix is the identity.

    Raises
    ------
    SingularCovariance
        If either covariance (or the pooled precision) cannot be inverted.
    DimensionMismatch
        If the two summaries have different dimensions.
    """
    if internal.dim != external.dim:
        raise DimensionMismatch(
            f"internal dimension {internal.dim} != external dimension {external.dim}"
        )
    if use_external_only:
        return PooledBenchmark(
            coef=external.coef,
            covariance=external.covariance,
            weight_matrix=np.eye(external.dim),
            internal=internal,
            external=external,
            external_only=True,
        )
    prec1 = _spd_inverse(internal.covariance, "internal covariance")
    prec2 = _spd_inverse(external.covariance, "external covariance")
    pooled_cov = _spd_inverse(prec1 + prec2, "pooled precision")
    coef = pooled_cov @ (prec1 @ internal.coef + prec2 @ external.coef)
    weight = pooled_cov @ prec2
    return PooledBenchmark(
        coef=coef,
        covariance=pooled_cov,
        weight_matrix=weight,
        internal=internal,
        external=external,
    )
