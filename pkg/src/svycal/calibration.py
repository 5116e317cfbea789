"""Calibration weighting by information projection.

Given normalized design weights ``dtilde`` and constraint rows ``u_i``
(reduced-model scores evaluated at a benchmark coefficient), the weights
maximizing ``sum_i dtilde_i log(w_i)`` subject to ``sum w_i = 1`` and
``sum w_i u_i = 0`` have the closed form ``w_i = dtilde_i / (1 - lam'u_i)``
where the multiplier ``lam`` solves the dual stationarity system

    F(lam) = sum_i dtilde_i u_i / (1 - lam'u_i) = 0.

F is the gradient of a smooth convex potential on the feasible region
``{lam : 1 - lam'u_i > 0 for all i}``, so a damped Newton iteration that
maintains strict feasibility converges whenever the zero vector lies in
the interior of the convex hull of the constraint rows.  When it does
not, no positive weights can satisfy the constraints and the problem is
reported infeasible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import (
    DimensionMismatch,
    InfeasibleConstraints,
    NoConvergence,
    RankDeficientConstraints,
)
from .estimating import normalized_weights, score_matrix, solve_weighted_z
from .samples import EstimatingSpec, SurveySample, Which

#: tolerance on the infinity norm of the constraint residual
RESIDUAL_TOL = 1e-10
#: strict feasibility margin maintained at every accepted iterate
FEASIBILITY_MARGIN = 1e-8
#: tolerance on |sum(weights) - 1| used to detect runaway multipliers
SUM_TOL = 1e-10
MAX_ITER = 100
MAX_HALVINGS = 50


@dataclass(frozen=True)
class CalibrationProblem:
    """Normalized design weights plus stacked constraint rows.

    ``constraint_matrix`` holds one row per unit; ``extra_constraints``
    carries additional blocks for multi-source calibration.  The stacked
    matrix must have full column rank.
    """

    dtilde: np.ndarray
    constraint_matrix: np.ndarray
    extra_constraints: tuple[np.ndarray, ...] = ()

    def __post_init__(self) -> None:
        d = np.asarray(self.dtilde, dtype=float).ravel()
        U = np.atleast_2d(np.asarray(self.constraint_matrix, dtype=float))
        if U.shape[0] != d.size:
            raise DimensionMismatch(
                f"constraint rows ({U.shape[0]}) do not match weights ({d.size})"
            )
        if np.any(d <= 0):
            raise ValueError("normalized design weights must be positive")
        if abs(d.sum() - 1.0) > 1e-12:
            raise ValueError("normalized design weights must sum to one")
        extras = tuple(np.atleast_2d(np.asarray(E, dtype=float))
                       for E in self.extra_constraints)
        for E in extras:
            if E.shape[0] != d.size:
                raise DimensionMismatch("extra constraint block has wrong row count")
        stacked = np.hstack([U, *extras]) if extras else U
        if np.linalg.matrix_rank(stacked) < stacked.shape[1]:
            raise RankDeficientConstraints(
                "stacked constraint matrix is column rank deficient"
            )
        object.__setattr__(self, "dtilde", d)
        object.__setattr__(self, "constraint_matrix", U)
        object.__setattr__(self, "extra_constraints", extras)

    @property
    def stacked(self) -> np.ndarray:
        if self.extra_constraints:
            return np.hstack([self.constraint_matrix, *self.extra_constraints])
        return self.constraint_matrix

    @property
    def n(self) -> int:
        return self.dtilde.size


@dataclass(frozen=True)
class CalibrationResult:
    """Calibrated weights with solver diagnostics.

    ``weights`` sum to one; ``multiplier`` is the dual vector such that
    ``weights = dtilde / (1 - constraint_rows @ multiplier)``.
    """

    weights: np.ndarray
    multiplier: np.ndarray
    iterations: int
    max_constraint_residual: float
    converged: bool

    def scaled_weights(self, total: float) -> np.ndarray:
        """Weights rescaled so they sum to ``total`` (population scale)."""
        return self.weights * float(total)


def _hull_separation_exists(U: np.ndarray) -> bool:
    """True if a direction separates all constraint rows from the origin.

    Existence of ``v`` with ``u_i'v >= 0`` for every row and strict
    inequality on average proves the origin is not interior to the convex
    hull of the rows, hence the dual system has no solution.
    """
    n, q = U.shape
    # feasibility LP: -U v <= 0, -(1'U) v <= -1, v free
    a_ub = np.vstack([-U, -(np.ones(n) @ U)[None, :]])
    b_ub = np.concatenate([np.zeros(n), [-1.0]])
    res = linprog(c=np.zeros(q), A_ub=a_ub, b_ub=b_ub,
                  bounds=[(None, None)] * q, method="highs")
    return bool(res.status == 0)


def solve_dual_lambda(problem: CalibrationProblem,
                      tol: float = RESIDUAL_TOL) -> CalibrationResult:
    """Solve the dual stationarity system and recover calibrated weights.

    Raises
    ------
    InfeasibleConstraints
        If the origin is not interior to the convex hull of the rows.
    NoConvergence
        If Newton stalls on a feasible-looking problem.
    """
    d = problem.dtilde
    U = problem.stacked
    q = U.shape[1]

    lam = np.zeros(q)
    margins = np.ones(problem.n)
    resid = U.T @ (d / margins)
    res_norm = float(np.linalg.norm(resid))

    for iteration in range(MAX_ITER):
        weights = d / margins
        if (np.max(np.abs(resid)) <= tol
                and abs(weights.sum() - 1.0) <= SUM_TOL):
            return CalibrationResult(
                weights=weights,
                multiplier=lam,
                iterations=iteration,
                max_constraint_residual=float(np.max(np.abs(resid))),
                converged=True,
            )
        hess = U.T @ (U * (d / margins**2)[:, None])
        try:
            step = np.linalg.solve(hess, -resid)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break

        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            cand = lam + step
            cand_margins = 1.0 - U @ cand
            if np.min(cand_margins) >= FEASIBILITY_MARGIN:
                cand_resid = U.T @ (d / cand_margins)
                cand_norm = float(np.linalg.norm(cand_resid))
                if np.isfinite(cand_norm) and cand_norm < res_norm:
                    lam, margins = cand, cand_margins
                    resid, res_norm = cand_resid, cand_norm
                    accepted = True
                    break
            step = 0.5 * step
        if not accepted:
            break

    if _hull_separation_exists(U):
        raise InfeasibleConstraints(
            "benchmark is outside the convex hull of the constraint rows; "
            "no positive calibrated weights exist"
        )
    raise NoConvergence(
        "calibration dual solver did not converge",
        residual=float(np.max(np.abs(resid))),
    )


def _build_problem(sample: SurveySample,
                   sources: list[tuple[EstimatingSpec, np.ndarray]],
                   ) -> CalibrationProblem:
    dtilde = normalized_weights(sample)
    blocks = [
        score_matrix(spec_k, Which.REDUCED, np.asarray(coef_k, dtype=float),
                     sample.covariates, sample.response)
        for spec_k, coef_k in sources
    ]
    return CalibrationProblem(
        dtilde=dtilde,
        constraint_matrix=blocks[0],
        extra_constraints=tuple(blocks[1:]),
    )


def multi_source_calibrate(sample: SurveySample,
                           sources: list[tuple[EstimatingSpec, np.ndarray]],
                           spec_full: EstimatingSpec,
                           beta0: np.ndarray | None = None,
                           ) -> tuple[np.ndarray, CalibrationResult]:
    """Calibrate on several benchmark constraints, then fit the full model.

    Each source contributes the reduced-model score of its own spec
    evaluated at its benchmark coefficient; a single weight vector is
    found satisfying all stacked constraint blocks simultaneously.

    Returns the full-model coefficient estimate and the calibration
    diagnostics.
    """
    if not sources:
        raise ValueError("at least one benchmark source is required")
    problem = _build_problem(sample, sources)
    result = solve_dual_lambda(problem)
    if beta0 is None:
        beta0 = solve_weighted_z(sample, spec_full, Which.FULL,
                                 sample.design_weights)
    beta_hat = solve_weighted_z(sample, spec_full, Which.FULL,
                                result.weights, theta0=beta0)
    return beta_hat, result


def calibrated_estimate(sample: SurveySample, spec: EstimatingSpec,
                        benchmark_coef: np.ndarray,
                        beta0: np.ndarray | None = None,
                        ) -> tuple[np.ndarray, CalibrationResult]:
    """Two-step calibrated estimator for a single benchmark.

    Step one calibrates the normalized design weights so the reduced-model
    score at ``benchmark_coef`` has zero weighted total; step two solves
    the full-model estimating equation under the calibrated weights,
    warm-started at the uncalibrated design-weighted estimate unless
    ``beta0`` is given.
    """
    return multi_source_calibrate(sample, [(spec, np.asarray(benchmark_coef))],
                                  spec, beta0=beta0)
