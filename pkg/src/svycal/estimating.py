"""Estimating-function evaluation and design-weighted Z-estimation.

The estimating function for both families is the model-gradient choice
``U(theta; x, y) = {y - m(h' theta)} h`` with ``h = (1, x_masked)``:
residual times regressor for the linear mean model, and the logistic
score for the binary model.  ``solve_weighted_z`` finds the root of the
weighted score total by damped Newton iteration.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import (
    DimensionMismatch,
    NonFiniteInput,
    NoConvergence,
    SingularJacobian,
)
from .samples import EstimatingSpec, Family, SurveySample, UnitRecord, Which

#: convergence tolerance on the infinity norm of the weighted score
SCORE_TOL = 1e-10
#: Newton iteration budget
MAX_ITER = 100
#: step-halving budget inside one Newton iteration
MAX_HALVINGS = 30


def design_matrix(spec: EstimatingSpec, which: Which, X: np.ndarray) -> np.ndarray:
    """Regressor matrix ``h`` for the selected model, one row per unit."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    mask = spec.mask(which)
    if X.shape[1] != mask.size:
        raise DimensionMismatch(
            f"covariate dimension {X.shape[1]} does not match mask length {mask.size}"
        )
    cols = X[:, mask]
    if spec.intercept:
        cols = np.column_stack([np.ones(X.shape[0]), cols])
    return cols


def _check_theta(spec: EstimatingSpec, which: Which, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).ravel()
    q = spec.dim(which)
    if theta.size != q:
        raise DimensionMismatch(f"theta has length {theta.size}, expected {q}")
    if not np.all(np.isfinite(theta)):
        raise NonFiniteInput("theta contains non-finite values")
    return theta


def score_matrix(spec: EstimatingSpec, which: Which, theta: np.ndarray,
                 X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Stacked estimating-function values, shape ``(n, q)``."""
    theta = _check_theta(spec, which, theta)
    H = design_matrix(spec, which, X)
    y = np.asarray(y, dtype=float).ravel()
    eta = H @ theta
    mean = eta if spec.family is Family.LINEAR else expit(eta)
    return (y - mean)[:, None] * H


def mean_derivative(spec: EstimatingSpec, which: Which, theta: np.ndarray,
                    X: np.ndarray) -> np.ndarray:
    """Derivative of the mean function at each unit's linear predictor."""
    theta = _check_theta(spec, which, theta)
    H = design_matrix(spec, which, X)
    if spec.family is Family.LINEAR:
        return np.ones(H.shape[0])
    p = expit(H @ theta)
    return p * (1.0 - p)


def eval_score(spec: EstimatingSpec, which: Which, theta: np.ndarray,
               unit: UnitRecord) -> np.ndarray:
    """Estimating-function value for a single unit."""
    return score_matrix(spec, which, theta, unit.covariates[None, :],
                        np.array([unit.response]))[0]


def eval_score_jacobian(spec: EstimatingSpec, which: Which, theta: np.ndarray,
                        unit: UnitRecord) -> np.ndarray:
    """Derivative of the unit score with respect to theta.

    Equals ``-h h'`` for the linear family and ``-p(1-p) h h'`` for the
    logistic family, where ``p`` is the fitted success probability.
    """
    theta = _check_theta(spec, which, theta)
    h = design_matrix(spec, which, unit.covariates[None, :])[0]
    scale = mean_derivative(spec, which, theta, unit.covariates[None, :])[0]
    return -scale * np.outer(h, h)


def weighted_score_total(spec: EstimatingSpec, which: Which, theta: np.ndarray,
                         X: np.ndarray, y: np.ndarray,
                         weights: np.ndarray) -> np.ndarray:
    """Weighted sum of unit scores."""
    return weights @ score_matrix(spec, which, theta, X, y)


def weighted_jacobian_total(spec: EstimatingSpec, which: Which, theta: np.ndarray,
                            X: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted sum of unit score Jacobians (``sum_i w_i dU_i/dtheta'``)."""
    H = design_matrix(spec, which, X)
    scale = mean_derivative(spec, which, theta, X)
    return -(H * (weights * scale)[:, None]).T @ H


def normalized_weights(sample: SurveySample) -> np.ndarray:
    """Design weights scaled to sum to one."""
    d = sample.design_weights
    return d / d.sum()


def ht_total(sample: SurveySample, values: np.ndarray) -> float:
    """Design-weighted (expansion) total of per-unit values."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size != sample.n:
        raise DimensionMismatch(
            f"values length {v.size} does not match sample size {sample.n}"
        )
    return float(sample.design_weights @ v)


def solve_weighted_z(sample: SurveySample, spec: EstimatingSpec, which: Which,
                     weights: np.ndarray, theta0: np.ndarray | None = None,
                     tol: float = SCORE_TOL) -> np.ndarray:
    """Root of the weighted estimating equation by damped Newton iteration.

    Weights are normalised internally, so the solution is invariant to
    rescaling them by any positive constant.  Each Newton step is halved
    until the Euclidean residual norm strictly decreases; convergence is
    declared when the infinity norm of the weighted score drops below
    ``tol * max(1, ||theta||)``.

    Raises
    ------
    SingularJacobian
        If a Newton system cannot be solved.
    NoConvergence
        If the iteration budget is exhausted or damping stalls.
    """
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != sample.n:
        raise DimensionMismatch("weights length does not match sample size")
    if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative, finite, and not all zero")
    w = w / w.sum()

    X, y = sample.covariates, sample.response
    q = spec.dim(which)
    theta = np.zeros(q) if theta0 is None else _check_theta(spec, which, theta0)

    score = weighted_score_total(spec, which, theta, X, y, w)
    res = float(np.linalg.norm(score))
    for iteration in range(MAX_ITER):
        if np.max(np.abs(score)) <= tol * max(1.0, float(np.linalg.norm(theta))):
            return theta
        jac = weighted_jacobian_total(spec, which, theta, X, w)
        try:
            step = np.linalg.solve(jac, -score)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(f"singular Jacobian at iteration {iteration}") from exc
        if not np.all(np.isfinite(step)):
            raise SingularJacobian(f"non-finite Newton step at iteration {iteration}")

        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            cand = theta + step
            cand_score = weighted_score_total(spec, which, cand, X, y, w)
            cand_res = float(np.linalg.norm(cand_score))
            if np.isfinite(cand_res) and cand_res < res:
                theta, score, res = cand, cand_score, cand_res
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            raise NoConvergence(
                "step halving failed to reduce the weighted score residual",
                iterations=iteration, residual=res,
            )

    if np.max(np.abs(score)) <= tol * max(1.0, float(np.linalg.norm(theta))):
        return theta
    raise NoConvergence(
        f"weighted Z-estimation did not converge in {MAX_ITER} iterations",
        iterations=MAX_ITER, residual=res,
    )
