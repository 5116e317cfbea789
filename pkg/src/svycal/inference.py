"""Plug-in sandwich variances and Wald intervals for calibrated estimators.

The calibrated estimator behaves like the root of a stacked system (full
score plus multiplier block).  Its covariance involves four blocks: the
weighted full-score Jacobian, the weighted cross moment between full and
reduced scores, the weighted reduced-score second moment, and the design
covariance of the stacked weighted score total.  Two regimes are
supported: a benchmark coefficient treated as fixed, and a pooled
benchmark whose estimation noise is propagated through the pooling
weight matrix.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .benchmark import PooledBenchmark, score_total_covariance
from .calibration import CalibrationResult
from .errors import DimensionMismatch, SingularBlock
from .estimating import (
    normalized_weights,
    score_matrix,
    weighted_jacobian_total,
)
from .samples import EstimatingSpec, SurveySample, Which


class VarianceMode(str, enum.Enum):
    """Which asymptotic regime the variance plug-in implements."""

    KNOWN_BENCHMARK = "known_benchmark"
    POOLED_BENCHMARK = "pooled_benchmark"
    EXTERNAL_DOMINANT = "external_dominant"


@dataclass(frozen=True)
class VarianceDecomposition:
    """Plug-in blocks for the calibrated-estimator variance.

    All blocks are evaluated at the fitted full-model coefficient and the
    benchmark actually used in calibration, under the same normalized
    design weights.  ``score_cov`` is scaled to the root-n asymptotic
    regime: it is ``n`` times the design covariance estimate of the
    stacked weighted score total.
    """

    jac_full: np.ndarray        # weighted Jacobian of the full score
    cross_moment: np.ndarray    # weighted full x reduced score moment
    reduced_moment: np.ndarray  # weighted reduced-score second moment
    score_cov: np.ndarray       # stacked score covariance, root-n scale
    jac_reduced: np.ndarray     # weighted Jacobian of the reduced score
    n_sample: int
    mode: VarianceMode

    @property
    def q_full(self) -> int:
        return self.jac_full.shape[0]

    @property
    def q_reduced(self) -> int:
        return self.reduced_moment.shape[0]

    def score_cov_blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(full-full, full-reduced, reduced-reduced) blocks of score_cov."""
        q1 = self.q_full
        return (self.score_cov[:q1, :q1],
                self.score_cov[:q1, q1:],
                self.score_cov[q1:, q1:])


def assemble_decomposition(sample: SurveySample, spec: EstimatingSpec,
                           beta_hat: np.ndarray, benchmark_coef: np.ndarray,
                           mode: VarianceMode = VarianceMode.KNOWN_BENCHMARK,
                           ) -> VarianceDecomposition:
    """Evaluate all variance blocks at the fitted values.

    ``beta_hat`` and ``benchmark_coef`` must be the converged values used
    by the calibrated fit; the stacked score covariance follows the
    design-specific rules of :func:`svycal.benchmark.score_total_covariance`,
    multiplied by the sample size.
    """
    beta_hat = np.asarray(beta_hat, dtype=float).ravel()
    benchmark_coef = np.asarray(benchmark_coef, dtype=float).ravel()
    dt = normalized_weights(sample)
    X, y = sample.covariates, sample.response

    u_full = score_matrix(spec, Which.FULL, beta_hat, X, y)
    u_red = score_matrix(spec, Which.REDUCED, benchmark_coef, X, y)

    jac_full = weighted_jacobian_total(spec, Which.FULL, beta_hat, X, dt)
    jac_reduced = weighted_jacobian_total(spec, Which.REDUCED, benchmark_coef,
                                          X, dt)
    cross = (u_full * dt[:, None]).T @ u_red
    reduced = (u_red * dt[:, None]).T @ u_red

    stacked = np.hstack([u_full, u_red])
    score_cov = sample.n * score_total_covariance(sample, stacked)
    score_cov = 0.5 * (score_cov + score_cov.T)

    return VarianceDecomposition(
        jac_full=jac_full,
        cross_moment=cross,
        reduced_moment=0.5 * (reduced + reduced.T),
        score_cov=score_cov,
        jac_reduced=jac_reduced,
        n_sample=sample.n,
        mode=mode,
    )


def _solve_block(A: np.ndarray, B: np.ndarray, what: str) -> np.ndarray:
    try:
        out = np.linalg.solve(A, B)
    except np.linalg.LinAlgError as exc:
        raise SingularBlock(f"{what} is singular") from exc
    if not np.all(np.isfinite(out)):
        raise SingularBlock(f"{what} produced non-finite solve result")
    return out


def _four_term(jac_full: np.ndarray, cross: np.ndarray, reduced: np.ndarray,
               s11: np.ndarray, s12: np.ndarray, s21: np.ndarray,
               s22: np.ndarray) -> np.ndarray:
    """Calibrated-estimator covariance from its four constituent terms.

    With ``B = cross reduced^-1`` the middle factor is
    ``s11 - B s21 - s12 B' + B s22 B'``, pre/post multiplied by the
    inverse full-score Jacobian.
    """
    B = _solve_block(reduced.T, cross.T, "reduced-score moment").T
    middle = s11 - B @ s21 - s12 @ B.T + B @ s22 @ B.T
    inv_jac = _solve_block(jac_full, np.eye(jac_full.shape[0]),
                           "full-score Jacobian")
    cov = inv_jac @ middle @ inv_jac.T
    return 0.5 * (cov + cov.T)


def sandwich_known_alpha(dec: VarianceDecomposition) -> np.ndarray:
    """Covariance plug-in when the benchmark coefficient is fixed/known.

    Returns the root-n scaled covariance of the calibrated coefficient
    estimate (divide by the sample size for the finite-sample covariance).
    """
    s11, s12, s22 = dec.score_cov_blocks()
    return _four_term(dec.jac_full, dec.cross_moment, dec.reduced_moment,
                      s11, s12, s12.T, s22)


def sandwich_estimated_alpha(dec: VarianceDecomposition,
                             pooled: PooledBenchmark,
                             n: int | None = None) -> np.ndarray:
    """Covariance plug-in when the benchmark is a pooled estimate.

    The reduced-score covariance blocks are adjusted for the estimation
    noise of the pooled benchmark: with pooling weight ``W``, reduced
    Jacobian ``J0`` and external covariance ``V2``,

        s12 -> s12 (J0^-1)' W' J0',
        s22 -> J0 W {n V2 + J0^-1 s22 (J0^-1)'} W' J0'.

    The identity and zero weight matrices short-circuit exactly to the
    fixed-benchmark and uncalibrated covariances respectively.
    """
    if n is None:
        n = dec.n_sample
    s11, s12, s22 = dec.score_cov_blocks()
    W = pooled.weight_matrix
    q2 = dec.q_reduced
    if W.shape != (q2, q2):
        raise DimensionMismatch("pooling weight matrix has wrong shape")

    negligible_external = pooled.external_only or (
        np.array_equal(W, np.eye(q2))
        and not np.asarray(pooled.external.covariance).any())
    if negligible_external:
        return _four_term(dec.jac_full, dec.cross_moment, dec.reduced_moment,
                          s11, s12, s12.T, s22)
    if not W.any():
        zero12 = np.zeros_like(s12)
        zero22 = np.zeros_like(s22)
        return _four_term(dec.jac_full, dec.cross_moment, dec.reduced_moment,
                          s11, zero12, zero12.T, zero22)

    j0 = dec.jac_reduced
    sigma_c = n * np.asarray(pooled.external.covariance, dtype=float)
    inv_j0 = _solve_block(j0, np.eye(q2), "reduced-score Jacobian")
    G = j0 @ W @ inv_j0
    s12_t = s12 @ G.T
    s22_t = j0 @ W @ (sigma_c + inv_j0 @ s22 @ inv_j0.T) @ W.T @ j0.T
    s22_t = 0.5 * (s22_t + s22_t.T)
    return _four_term(dec.jac_full, dec.cross_moment, dec.reduced_moment,
                      s11, s12_t, s12_t.T, s22_t)


def uncalibrated_sandwich(dec: VarianceDecomposition) -> np.ndarray:
    """Covariance of the plain design-weighted estimator, root-n scale."""
    s11, _, _ = dec.score_cov_blocks()
    inv_jac = _solve_block(dec.jac_full, np.eye(dec.q_full),
                           "full-score Jacobian")
    cov = inv_jac @ s11 @ inv_jac.T
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class EstimateReport:
    """Coefficient estimates with covariance and Wald intervals."""

    coef: np.ndarray
    covariance: np.ndarray        # root-n scale
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    level: float
    n_sample: int
    variance_mode: VarianceMode
    calibration: CalibrationResult | None = None

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.covariance), 0.0) / self.n_sample)


def wald_report(beta_hat: np.ndarray, covariance: np.ndarray, n: int,
                level: float = 0.95,
                variance_mode: VarianceMode = VarianceMode.KNOWN_BENCHMARK,
                calibration: CalibrationResult | None = None) -> EstimateReport:
    """Symmetric per-coordinate Wald intervals from a root-n covariance.

    Interval half-widths are ``z * sqrt(cov_jj / n)`` with ``z`` the
    standard normal quantile for the requested two-sided level.
    """
    beta_hat = np.asarray(beta_hat, dtype=float).ravel()
    covariance = np.asarray(covariance, dtype=float)
    if covariance.shape != (beta_hat.size, beta_hat.size):
        raise DimensionMismatch("covariance shape does not match coefficients")
    if not (0.0 < level < 1.0):
        raise ValueError("confidence level must lie in (0, 1)")
    z = norm.ppf(0.5 + level / 2.0)
    half = z * np.sqrt(np.maximum(np.diag(covariance), 0.0) / n)
    return EstimateReport(
        coef=beta_hat,
        covariance=covariance,
        ci_lower=beta_hat - half,
        ci_upper=beta_hat + half,
        level=level,
        n_sample=int(n),
        variance_mode=variance_mode,
        calibration=calibration,
    )
