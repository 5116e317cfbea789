import numpy as np
import pytest

from svycal import EstimatingSpec, Family, SampleDesign, SurveySample
from svycal.estimating import design_matrix


def make_sample(X, y, d, design=None, pi=None, label="test"):
    return SurveySample(
        covariates=np.asarray(X, dtype=float),
        response=np.asarray(y, dtype=float),
        design_weights=np.asarray(d, dtype=float),
        design=design if design is not None else SampleDesign.unknown(),
        inclusion_probs=pi,
        label=label,
    )


def linear_spec(p=2, reduced_cols=(0,)):
    return EstimatingSpec.from_counts(Family.LINEAR, p, list(reduced_cols))


def logistic_spec(p=2, reduced_cols=(0,)):
    return EstimatingSpec.from_counts(Family.LOGISTIC, p, list(reduced_cols))


def wls_solution(spec, which, X, y, w):
    """Closed-form weighted least squares oracle for the linear family."""
    H = design_matrix(spec, which, np.asarray(X, dtype=float))
    W = np.diag(np.asarray(w, dtype=float))
    y = np.asarray(y, dtype=float)
    return np.linalg.solve(H.T @ W @ H, H.T @ W @ y)


@pytest.fixture
def rng():
    return np.random.default_rng(987654321)
