"""Density-ratio tilt fitting and big-data debiasing."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from svycal import (
    DegenerateTargets,
    DensityRatioModel,
    RatioFeatures,
    UnitRecord,
    Which,
    debiased_alpha2,
    propensity_inverse,
    solve_density_ratio,
    solve_weighted_z,
)
from svycal.propensity import propensity_inverse_all

from conftest import linear_spec, make_sample


def response_only_features():
    return RatioFeatures(covariate_mask=np.array([False]),
                         include_response=True)


def toy_big():
    # two units with responses 0 and 1; covariate column unused
    return make_sample([[0.0], [0.0]], [0.0, 1.0], [1.0, 1.0])


def toy_internal(y_value):
    # single internal unit with expansion weight 12 -> N_hat0 = 10
    return make_sample([[0.0]], [y_value], [12.0])


class TestSolveDensityRatio:
    def test_matched_means_give_zero_tilt(self):
        model = solve_density_ratio(toy_big(), toy_internal(0.5),
                                    response_only_features())
        assert_allclose(model.tilt_coef, [0.0, 0.0], atol=1e-10)
        assert model.n_complement == pytest.approx(10.0)
        assert_allclose(model.moment_targets, [1.0, 0.5], atol=1e-12)

    def test_shifted_target_hand_solution(self):
        # exp(t0)(1 + e^{t1})/2 = 1 and exp(t0) e^{t1}/2 = 0.8
        # => e^{t1} = 4, exp(t0) = 0.4
        model = solve_density_ratio(toy_big(), toy_internal(0.75),
                                    response_only_features())
        assert_allclose(np.exp(model.tilt_coef), [0.4, 4.0], rtol=1e-9)

    def test_multivariate_zero_tilt_when_means_match(self, rng):
        X = rng.normal(size=(50, 1))
        y = rng.normal(size=50)
        big = make_sample(X, y, np.ones(50))
        internal = make_sample(X, y, np.full(50, 5.0))
        features = RatioFeatures(np.array([True]), include_response=True)
        model = solve_density_ratio(big, internal, features)
        assert np.max(np.abs(model.tilt_coef)) <= 1e-8

    def test_moment_reproduction(self, rng):
        X = rng.normal(size=(300, 2))
        y = X @ np.array([1.0, -1.0]) + rng.normal(size=300)
        big = make_sample(X, y, np.ones(300))
        Xi = rng.normal(0.3, 1.0, size=(80, 2))
        yi = Xi @ np.array([1.0, -1.0]) + rng.normal(size=80)
        internal = make_sample(Xi, yi, np.full(80, 10.0))
        features = RatioFeatures(np.array([True, False]),
                                 include_response=True)
        model = solve_density_ratio(big, internal, features)
        F = features.matrix(X, y)
        tilted = (np.exp(F @ model.tilt_coef) @ F) / big.n
        assert np.max(np.abs(tilted - model.moment_targets)) <= 1e-8

    def test_unreachable_target_rejected(self):
        with pytest.raises(DegenerateTargets):
            solve_density_ratio(toy_big(), toy_internal(2.0),
                                response_only_features())

    def test_internal_smaller_than_big_rejected(self):
        big = toy_big()
        internal = make_sample([[0.0]], [0.5], [1.5])  # expansion 1.5 < 2
        with pytest.raises(DegenerateTargets):
            solve_density_ratio(big, internal, response_only_features())

    def test_unique_solution_from_random_starts(self, rng):
        X = rng.normal(size=(200, 1))
        y = 0.5 * X[:, 0] + rng.normal(size=200)
        big = make_sample(X, y, np.ones(200))
        Xi = rng.normal(0.4, 1.1, size=(60, 1))
        yi = 0.5 * Xi[:, 0] + rng.normal(size=60)
        internal = make_sample(Xi, yi, np.full(60, 8.0))
        features = RatioFeatures(np.array([True]), include_response=True)
        base = solve_density_ratio(big, internal, features).tilt_coef
        for _ in range(5):
            start = rng.normal(scale=0.5, size=features.dim)
            redo = solve_density_ratio(big, internal, features,
                                       tilt0=start).tilt_coef
            assert np.max(np.abs(redo - base)) <= 1e-6


class TestPropensityInverse:
    def _model(self, tilt, n_big, n_comp):
        features = response_only_features()
        return DensityRatioModel(
            tilt_coef=np.asarray(tilt, dtype=float), n_big=n_big,
            n_complement=n_comp,
            moment_targets=np.array([1.0, 0.0]), features=features)

    def test_zero_tilt_equal_halves(self):
        model = self._model([0.0, 0.0], n_big=10, n_comp=10)
        u = UnitRecord(covariates=np.array([0.0]), response=3.0,
                       design_weight=1.0)
        assert propensity_inverse(model, u) == pytest.approx(2.0)

    def test_vanishing_complement_census_limit(self):
        model = self._model([0.0, 0.0], n_big=10, n_comp=1e-12)
        u = UnitRecord(covariates=np.array([0.0]), response=1.0,
                       design_weight=1.0)
        assert propensity_inverse(model, u) == pytest.approx(1.0)

    def test_log2_tilt_value(self):
        model = self._model([np.log(2.0), 0.0], n_big=5, n_comp=15)
        u = UnitRecord(covariates=np.array([0.0]), response=0.0,
                       design_weight=1.0)
        assert propensity_inverse(model, u) == pytest.approx(7.0)

    def test_always_greater_than_one(self, rng):
        model = self._model(rng.normal(size=2), n_big=10, n_comp=5)
        X = rng.normal(size=(100, 1))
        y = rng.normal(size=100)
        s = make_sample(X, y, np.ones(100))
        inv = propensity_inverse_all(model, s)
        assert np.all(inv > 1.0)

    def test_exponent_clamp_warns(self):
        model = self._model([0.0, 100.0], n_big=10, n_comp=10)
        u = UnitRecord(covariates=np.array([0.0]), response=5.0,
                       design_weight=1.0)
        with pytest.warns(RuntimeWarning):
            value = propensity_inverse(model, u)
        assert np.isfinite(value)


class TestDebiasedAlpha2:
    def test_noninformative_close_to_unweighted(self, rng):
        n_pop = 30_000
        x1 = rng.normal(3.0, 1.0, size=n_pop)
        y = 12.0 + 2.0 * x1 + rng.normal(0.0, 2.0, size=n_pop)
        X = np.column_stack([x1, np.zeros(n_pop)])
        big_idx = rng.choice(n_pop, size=4000, replace=False)
        int_idx = rng.choice(n_pop, size=400, replace=False)
        big = make_sample(X[big_idx], y[big_idx], np.ones(4000))
        internal = make_sample(X[int_idx], y[int_idx],
                               np.full(400, n_pop / 400))
        spec = linear_spec()
        features = RatioFeatures.from_spec(spec)
        model = solve_density_ratio(big, internal, features)
        stat = debiased_alpha2(big, spec, model)
        unweighted = solve_weighted_z(big, spec, Which.REDUCED, np.ones(4000))
        assert np.max(np.abs(stat.coef - unweighted)) <= 0.1
        assert stat.covariance.shape == (2, 2)

    def test_census_limit_recovers_population_fit(self, rng):
        n_pop = 2000
        x1 = rng.normal(3.0, 1.0, size=n_pop)
        y = 1.0 + 2.0 * x1 + rng.normal(size=n_pop)
        X = np.column_stack([x1, np.zeros(n_pop)])
        census = make_sample(X, y, np.ones(n_pop))
        spec = linear_spec()
        features = RatioFeatures.from_spec(spec)
        model = DensityRatioModel(
            tilt_coef=np.zeros(features.dim), n_big=n_pop,
            n_complement=1e-12,
            moment_targets=np.concatenate([[1.0],
                                           np.zeros(features.dim - 1)]),
            features=features)
        stat = debiased_alpha2(census, spec, model)
        pop_fit = solve_weighted_z(census, spec, Which.REDUCED,
                                   np.ones(n_pop))
        assert np.max(np.abs(stat.coef - pop_fit)) <= 1e-9
