"""Constrained maximum likelihood baseline estimator.

A fully parametric alternative to calibration weighting: maximize the
(unweighted) sample log-likelihood of the full model subject to the
moment constraint that the conditional expectation of the reduced-model
likelihood score, evaluated at the supplied benchmark parameters, sums to
zero.  Profiling the constraint yields an augmented score system in
``eta = (multiplier, full-model parameters)`` solved by a modified
Newton-Raphson iteration that halves steps until the per-unit feasibility
margins ``1 - multiplier' u_i`` stay positive.  Failure to converge is a
first-class NA outcome, not an exception: the simulation harness counts
NA replications.

For the linear family the full parameters are ``(coef, residual
variance)`` and the constraint carries one extra row for the reduced
model's residual variance; for the logistic family the parameters are the
coefficients alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatch
from .estimating import design_matrix, normalized_weights, solve_weighted_z
from .samples import EstimatingSpec, Family, SurveySample, Which

#: convergence tolerance on the infinity norm of the augmented score
SCORE_TOL = 1e-8
MAX_OUTER = 100
MAX_HALVINGS = 30


@dataclass(frozen=True)
class ReducedParams:
    """Benchmark parameters of the working reduced model.

    ``residual_var`` is required for the linear family (the reduced
    model's error variance) and ignored for the logistic family.
    """

    coef: np.ndarray
    residual_var: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "coef",
                           np.asarray(self.coef, dtype=float).ravel())
        if self.residual_var is not None and self.residual_var <= 0:
            raise ValueError("reduced residual variance must be positive")


@dataclass(frozen=True)
class CmlState:
    """Solver state: stacked parameter vector plus feasibility diagnostics.

    ``eta`` concatenates the constraint multiplier and the full-model
    parameters.  ``margin_history`` records the minimum feasibility margin
    after each accepted step.
    """

    eta: np.ndarray
    step_count: int
    feasible: bool
    margin_history: tuple[float, ...] = ()


@dataclass(frozen=True)
class CmlFit:
    """Outcome of a constrained-likelihood fit; NA is a valid result."""

    state: CmlState
    converged: bool
    family: Family
    n_coef: int
    n_multiplier: int
    final_residual: float

    @property
    def is_na(self) -> bool:
        return not self.converged

    @property
    def coef(self) -> np.ndarray | None:
        """Fitted full-model coefficients, or None on an NA outcome."""
        if not self.converged:
            return None
        lo = self.n_multiplier
        return self.state.eta[lo:lo + self.n_coef]

    @property
    def multiplier(self) -> np.ndarray:
        return self.state.eta[:self.n_multiplier]


class _LinearWork:
    """Vectorized augmented score/information for the linear family."""

    def __init__(self, H: np.ndarray, Z: np.ndarray, y: np.ndarray,
                 reduced: ReducedParams) -> None:
        if reduced.residual_var is None:
            raise ValueError("linear constrained fit needs the reduced "
                             "residual variance")
        self.H, self.Z, self.y = H, Z, y
        self.alpha = reduced.coef
        if self.alpha.size != Z.shape[1]:
            raise DimensionMismatch("reduced coefficient length mismatch")
        self.s2r = float(reduced.residual_var)
        self.q_theta = H.shape[1] + 1          # coefficients + variance
        self.n_multiplier = Z.shape[1] + 1     # moment rows + variance row
        self.za = Z @ self.alpha

    def split(self, eta: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        k = self.n_multiplier
        return eta[:k], eta[k:-1], float(eta[-1])

    def valid(self, eta: np.ndarray) -> bool:
        return self.split(eta)[2] > 0.0

    def constraint_rows(self, eta: np.ndarray) -> np.ndarray:
        _, beta, s2f = self.split(eta)
        gap = self.H @ beta - self.za
        tail = -0.5 / self.s2r + (s2f + gap**2) / (2.0 * self.s2r**2)
        return np.column_stack([gap[:, None] * self.Z / self.s2r, tail])

    def margins(self, eta: np.ndarray) -> np.ndarray:
        lam = eta[:self.n_multiplier]
        return 1.0 - self.constraint_rows(eta) @ lam

    def score(self, eta: np.ndarray) -> np.ndarray:
        lam, beta, s2f = self.split(eta)
        H, y = self.H, self.y
        resid = y - H @ beta
        gap = H @ beta - self.za
        U = self.constraint_rows(eta)
        m = 1.0 - U @ lam

        g_lam = (U / m[:, None]).sum(axis=0)

        s_beta = np.column_stack([
            resid[:, None] * H / s2f,
            -0.5 / s2f + resid**2 / (2.0 * s2f**2),
        ])
        lam_z, lam_s = lam[:-1], lam[-1]
        a = (self.Z @ lam_z) / self.s2r + lam_s * gap / self.s2r**2
        c_lam = np.column_stack([
            a[:, None] * H,
            np.full(H.shape[0], lam_s / (2.0 * self.s2r**2)),
        ])
        g_theta = s_beta.sum(axis=0) + (c_lam / m[:, None]).sum(axis=0)
        return np.concatenate([g_lam, g_theta])

    def information(self, eta: np.ndarray) -> np.ndarray:
        lam, beta, s2f = self.split(eta)
        H, Z, y = self.H, self.Z, self.y
        n = H.shape[0]
        resid = y - H @ beta
        gap = H @ beta - self.za
        U = self.constraint_rows(eta)
        m = 1.0 - U @ lam
        s_lam = U / m[:, None]

        lam_z, lam_s = lam[:-1], lam[-1]
        a = (Z @ lam_z) / self.s2r + lam_s * gap / self.s2r**2
        c_lam = np.column_stack([
            a[:, None] * H,
            np.full(n, lam_s / (2.0 * self.s2r**2)),
        ])
        s_tilde = c_lam / m[:, None]

        # block: minus sum of outer products of the multiplier score
        i_ll = -s_lam.T @ s_lam

        # sum of per-unit constraint Jacobians over margins
        q1 = H.shape[1]
        c_over_m = np.zeros((self.q_theta, self.n_multiplier))
        c_over_m[:q1, :-1] = (H / m[:, None]).T @ Z / self.s2r
        c_over_m[:q1, -1] = H.T @ (gap / m) / self.s2r**2
        c_over_m[q1, -1] = float((0.5 / self.s2r**2) * (1.0 / m).sum())
        i_tl = -(c_over_m + s_tilde.T @ s_lam)

        i_bb = np.zeros((self.q_theta, self.q_theta))
        i_bb[:q1, :q1] = H.T @ H / s2f
        hr = H.T @ resid / s2f**2
        i_bb[:q1, q1] = hr
        i_bb[q1, :q1] = hr
        i_bb[q1, q1] = float((resid**2 / s2f**3 - 0.5 / s2f**2).sum())
        i_bb[:q1, :q1] += -(lam_s / self.s2r**2) * (H / m[:, None]).T @ H
        i_bb -= s_tilde.T @ s_tilde

        top = np.hstack([i_ll, i_tl.T])
        bottom = np.hstack([i_tl, i_bb])
        return np.vstack([top, bottom])


class _LogisticWork:
    """Vectorized augmented score/information for the logistic family."""

    def __init__(self, H: np.ndarray, Z: np.ndarray, y: np.ndarray,
                 reduced: ReducedParams) -> None:
        self.H, self.Z, self.y = H, Z, y
        if reduced.coef.size != Z.shape[1]:
            raise DimensionMismatch("reduced coefficient length mismatch")
        self.p_reduced = expit(Z @ reduced.coef)
        self.q_theta = H.shape[1]
        self.n_multiplier = Z.shape[1]

    def split(self, eta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k = self.n_multiplier
        return eta[:k], eta[k:]

    def valid(self, eta: np.ndarray) -> bool:
        return True

    def constraint_rows(self, eta: np.ndarray) -> np.ndarray:
        _, beta = self.split(eta)
        p = expit(self.H @ beta)
        return (p - self.p_reduced)[:, None] * self.Z

    def margins(self, eta: np.ndarray) -> np.ndarray:
        lam = eta[:self.n_multiplier]
        return 1.0 - self.constraint_rows(eta) @ lam

    def score(self, eta: np.ndarray) -> np.ndarray:
        lam, beta = self.split(eta)
        p = expit(self.H @ beta)
        U = self.constraint_rows(eta)
        m = 1.0 - U @ lam
        g_lam = (U / m[:, None]).sum(axis=0)
        pq = p * (1.0 - p)
        c_lam = ((self.Z @ lam) * pq)[:, None] * self.H
        g_theta = ((self.y - p)[:, None] * self.H).sum(axis=0) \
            + (c_lam / m[:, None]).sum(axis=0)
        return np.concatenate([g_lam, g_theta])

    def information(self, eta: np.ndarray) -> np.ndarray:
        lam, beta = self.split(eta)
        H, Z = self.H, self.Z
        p = expit(H @ beta)
        pq = p * (1.0 - p)
        U = self.constraint_rows(eta)
        m = 1.0 - U @ lam
        s_lam = U / m[:, None]
        zl = Z @ lam
        c_lam = (zl * pq)[:, None] * H
        s_tilde = c_lam / m[:, None]

        i_ll = -s_lam.T @ s_lam
        c_over_m = (H * (pq / m)[:, None]).T @ Z
        i_tl = -(c_over_m + s_tilde.T @ s_lam)
        d_scale = zl * pq * (2.0 * p - 1.0)
        i_bb = (H * pq[:, None]).T @ H \
            + (H * (d_scale / m)[:, None]).T @ H \
            - s_tilde.T @ s_tilde

        top = np.hstack([i_ll, i_tl.T])
        bottom = np.hstack([i_tl, i_bb])
        return np.vstack([top, bottom])


def _make_work(sample: SurveySample, spec: EstimatingSpec,
               reduced: ReducedParams):
    H = design_matrix(spec, Which.FULL, sample.covariates)
    Z = design_matrix(spec, Which.REDUCED, sample.covariates)
    if spec.family is Family.LINEAR:
        return _LinearWork(H, Z, sample.response, reduced)
    return _LogisticWork(H, Z, sample.response, reduced)


def cml_score(sample: SurveySample, spec: EstimatingSpec,
              reduced: ReducedParams, eta: np.ndarray) -> np.ndarray:
    """Augmented score (multiplier block first, then parameter block)."""
    work = _make_work(sample, spec, reduced)
    eta = np.asarray(eta, dtype=float).ravel()
    return work.score(eta)


def cml_information(sample: SurveySample, spec: EstimatingSpec,
                    reduced: ReducedParams, eta: np.ndarray) -> np.ndarray:
    """Negative Jacobian of the augmented score (symmetric)."""
    work = _make_work(sample, spec, reduced)
    eta = np.asarray(eta, dtype=float).ravel()
    return work.information(eta)


def cml_margins(sample: SurveySample, spec: EstimatingSpec,
                reduced: ReducedParams, eta: np.ndarray) -> np.ndarray:
    """Per-unit feasibility margins ``1 - multiplier' u_i``."""
    work = _make_work(sample, spec, reduced)
    return work.margins(np.asarray(eta, dtype=float).ravel())


def _initial_theta(sample: SurveySample, spec: EstimatingSpec,
                   work) -> np.ndarray:
    beta0 = solve_weighted_z(sample, spec, Which.FULL, sample.design_weights)
    if spec.family is Family.LOGISTIC:
        return beta0
    dt = normalized_weights(sample)
    resid = sample.response - work.H @ beta0
    s2 = float(dt @ resid**2)
    return np.concatenate([beta0, [max(s2, 1e-12)]])


def cml_fit(sample: SurveySample, spec: EstimatingSpec,
            reduced: ReducedParams) -> CmlFit:
    """Run the modified Newton-Raphson constrained-likelihood fit.

    Starts from the design-based unconstrained estimate with a zero
    multiplier; every accepted iterate keeps all feasibility margins
    strictly positive (and, for the linear family, a positive residual
    variance).  Returns an NA outcome when the step cannot be made
    feasible, the information matrix is singular, or the iteration budget
    runs out.
    """
    work = _make_work(sample, spec, reduced)
    theta0 = _initial_theta(sample, spec, work)
    eta = np.concatenate([np.zeros(work.n_multiplier), theta0])
    margin_log: list[float] = [float(np.min(work.margins(eta)))]

    def na(steps: int, residual: float) -> CmlFit:
        state = CmlState(eta=eta, step_count=steps, feasible=False,
                         margin_history=tuple(margin_log))
        return CmlFit(state=state, converged=False, family=spec.family,
                      n_coef=work.H.shape[1], n_multiplier=work.n_multiplier,
                      final_residual=residual)

    g = work.score(eta)
    for outer in range(MAX_OUTER):
        res = float(np.max(np.abs(g)))
        if res <= SCORE_TOL:
            state = CmlState(eta=eta, step_count=outer, feasible=True,
                             margin_history=tuple(margin_log))
            return CmlFit(state=state, converged=True, family=spec.family,
                          n_coef=work.H.shape[1],
                          n_multiplier=work.n_multiplier,
                          final_residual=res)
        try:
            delta = np.linalg.solve(work.information(eta), g)
        except np.linalg.LinAlgError:
            return na(outer, res)
        if not np.all(np.isfinite(delta)):
            return na(outer, res)

        feasible_step = None
        for _ in range(MAX_HALVINGS + 1):
            cand = eta + delta
            if work.valid(cand) and float(np.min(work.margins(cand))) > 0.0:
                feasible_step = cand
                break
            delta = 0.5 * delta
        if feasible_step is None:
            return na(outer, res)
        eta = feasible_step
        margin_log.append(float(np.min(work.margins(eta))))
        g = work.score(eta)

    res = float(np.max(np.abs(g)))
    if res <= SCORE_TOL:
        state = CmlState(eta=eta, step_count=MAX_OUTER, feasible=True,
                         margin_history=tuple(margin_log))
        return CmlFit(state=state, converged=True, family=spec.family,
                      n_coef=work.H.shape[1], n_multiplier=work.n_multiplier,
                      final_residual=res)
    return na(MAX_OUTER, res)
