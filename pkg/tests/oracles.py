"""Independent numerical oracles used by module and acceptance tests.

These deliberately avoid the package's own solution paths: the primal
calibration oracle runs a generic constrained optimizer on the weight
vector itself, never the dual system the package solves.
"""

import numpy as np
from scipy.optimize import minimize


def primal_calibration_oracle(dtilde, U, w_floor=1e-12):
    """Maximize sum(dtilde * log w) s.t. sum w = 1, U'w = 0, w > 0.

    Brute-force SLSQP on the weights; returns the weight vector or None
    when the optimizer fails (infeasible problems).
    """
    d = np.asarray(dtilde, dtype=float)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    n = d.size

    def neg_obj(w):
        return -float(d @ np.log(w))

    def neg_grad(w):
        return -d / w

    constraints = [
        {"type": "eq", "fun": lambda w: w.sum() - 1.0,
         "jac": lambda w: np.ones(n)},
        {"type": "eq", "fun": lambda w: U.T @ w,
         "jac": lambda w: U.T},
    ]
    res = minimize(neg_obj, x0=d, jac=neg_grad, method="SLSQP",
                   bounds=[(w_floor, 1.0)] * n, constraints=constraints,
                   options={"maxiter": 1000, "ftol": 1e-14})
    if not res.success:
        return None
    w = np.asarray(res.x)
    if np.max(np.abs(U.T @ w)) > 1e-7 or abs(w.sum() - 1.0) > 1e-9:
        return None
    return w


def feasible_random_instance(rng, n, q, weight_spread=3.0):
    """Random calibration instance with the origin inside the row hull.

    Centers random rows at their weighted mean so the zero vector is a
    strictly interior point of the convex hull.
    """
    d = rng.uniform(1.0, weight_spread, size=n)
    d = d / d.sum()
    U = rng.normal(size=(n, q))
    U = U - d @ U  # strictly interior: weighted mean sits at the origin
    return d, U
