"""Population generation, sampling designs, and the Monte Carlo loop."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import expit

from svycal import (
    CovariateMode,
    DesignKind,
    Estimator,
    Family,
    Scenario,
    VarianceKind,
    Which,
    draw_poisson,
    draw_srs,
    gen_population,
    ht_total,
    run_monte_carlo,
)
from svycal.simulate import (
    external_size_values,
    internal_size_values,
    poisson_inclusion_probs,
    population_coef,
    run_replication,
)


def scenario(**kw):
    base = dict(population_size=2000, n_internal=100, n_external=400,
                replications=3, seed=11)
    base.update(kw)
    return Scenario(**base)


class TestGenPopulation:
    def test_independent_linear_mean(self, rng):
        sc = scenario(population_size=100_000)
        pop = gen_population(sc, rng)
        # E[y] = 1 + 2*3 + 11 = 18
        se = pop.response.std() / np.sqrt(pop.size)
        assert abs(pop.response.mean() - 18.0) <= 3 * se

    def test_dependent_covariates_track_square(self, rng):
        sc = scenario(population_size=100_000,
                      covariate_mode=CovariateMode.DEPENDENT)
        pop = gen_population(sc, rng)
        x1, x2 = pop.covariates[:, 0], pop.covariates[:, 1]
        corr = np.corrcoef(x1**2, x2)[0, 1]
        assert corr > 0.95

    def test_logistic_rate_matches_link(self, rng):
        sc = scenario(family=Family.LOGISTIC, variance_mode=None,
                      population_size=100_000)
        pop = gen_population(sc, rng)
        x1, x2 = pop.covariates[:, 0], pop.covariates[:, 1]
        target = expit(-0.5 + 0.3 * x1 - 0.1 * x2)
        se = np.sqrt(np.mean(target * (1 - target)) / pop.size)
        assert abs(pop.response.mean() - target.mean()) <= 3 * se

    def test_heterogeneous_noise_scales_with_mean(self, rng):
        sc = scenario(population_size=200_000,
                      variance_mode=VarianceKind.HETERO)
        pop = gen_population(sc, rng)
        x1, x2 = pop.covariates[:, 0], pop.covariates[:, 1]
        mu = 1.0 + 2.0 * x1 + x2
        resid = pop.response - mu
        scaled = resid / (0.2 * np.abs(mu))
        assert abs(scaled.std() - 1.0) < 0.02


class TestDrawSrs:
    def test_full_population_unit_weights(self, rng):
        sc = scenario(population_size=50, n_internal=10, n_external=20)
        pop = gen_population(sc, rng)
        s = draw_srs(pop, 50, rng)
        assert s.n == 50
        assert_allclose(s.design_weights, np.ones(50), atol=0.0)

    def test_weights_are_expansion_factors(self, rng):
        sc = scenario()
        pop = gen_population(sc, rng)
        s = draw_srs(pop, 100, rng)
        assert_allclose(s.design_weights, np.full(100, 20.0), atol=0.0)
        assert s.design.kind is DesignKind.SRS
        assert s.design.population_size == 2000

    def test_inclusion_frequencies(self, rng):
        counts = np.zeros(5)
        draws = 10_000
        pop_idx = np.arange(5)
        for _ in range(draws):
            pick = rng.choice(5, size=2, replace=False)
            counts[pick] += 1
        freq = counts / draws
        se = np.sqrt(0.4 * 0.6 / draws)
        assert np.all(np.abs(freq - 0.4) <= 3 * se + 1e-12)


class TestDrawPoisson:
    def test_equal_sizes_give_bernoulli(self):
        probs = poisson_inclusion_probs(np.ones(1000), 50.0)
        assert_allclose(probs, np.full(1000, 0.05), atol=1e-9)

    def test_sum_constraint_with_clamping(self, rng):
        size = np.concatenate([np.full(10, 100.0), rng.uniform(0.5, 1.5, 490)])
        probs = poisson_inclusion_probs(size, 60.0)
        assert probs.max() <= 1.0
        assert abs(probs.sum() - 60.0) <= 1e-6
        assert np.all(probs[:10] == 1.0)

    def test_realized_size_mean(self, rng):
        sc = scenario(population_size=5000)
        pop = gen_population(sc, rng)
        size = internal_size_values(sc, pop)
        sizes = [draw_poisson(pop, 200.0, size, rng).n for _ in range(400)]
        mean = np.mean(sizes)
        se = np.std(sizes, ddof=1) / np.sqrt(len(sizes))
        assert abs(mean - 200.0) <= 3 * se

    def test_ht_total_design_unbiased(self, rng):
        sc = scenario(population_size=3000)
        pop = gen_population(sc, rng)
        truth = pop.response.sum()
        size = external_size_values(pop)
        totals = []
        for _ in range(2000):
            s = draw_poisson(pop, 150.0, size, rng)
            totals.append(ht_total(s, s.response))
        mean = np.mean(totals)
        se = np.std(totals, ddof=1) / np.sqrt(len(totals))
        assert abs(mean - truth) <= 3 * se


class TestPopulationCoef:
    def test_linear_population_root_is_ls(self, rng):
        sc = scenario(population_size=3000)
        pop = gen_population(sc, rng)
        beta = population_coef(pop, sc.spec(), Which.FULL)
        H = np.column_stack([np.ones(pop.size), pop.covariates])
        ref = np.linalg.lstsq(H, pop.response, rcond=None)[0]
        assert_allclose(beta, ref, atol=1e-8)


class TestRunMonteCarlo:
    def test_single_replication_smoke(self):
        sc = scenario(replications=1)
        table = run_monte_carlo(sc)
        assert len(table.rows) == 3 * 3  # three estimators, three coefficients
        for row in table.rows:
            assert row.failures + row.n_used == 1
        csv = table.to_csv_string()
        assert csv.count("\n") == 10  # header + 9 rows

    def test_replication_is_deterministic(self):
        sc = scenario(replications=2)
        a = run_replication(sc, 0)
        b = run_replication(sc, 0)
        for est in sc.estimators:
            assert np.array_equal(a.err[est], b.err[est], equal_nan=True)

    def test_worker_count_does_not_change_bytes(self):
        sc = scenario(replications=4)
        serial = run_monte_carlo(sc, workers=1).to_csv_string()
        parallel = run_monte_carlo(sc, workers=2).to_csv_string()
        assert serial == parallel

    def test_metrics_reasonable_scale(self):
        sc = scenario(population_size=4000, n_internal=200, n_external=800,
                      replications=20, seed=5)
        table = run_monte_carlo(sc)
        for est in (Estimator.PROPOSED, Estimator.INTERNAL_ONLY):
            for j in range(3):
                row = table.row_for(est, j)
                assert row.n_used > 0
                assert np.isfinite(row.bias)
                assert row.mc_variance > 0
        prop_row = table.row_for(Estimator.PROPOSED, 1)
        assert 0.0 <= prop_row.coverage <= 1.0

    def test_estimator_subset(self):
        sc = scenario(replications=2,
                      estimators=frozenset({Estimator.INTERNAL_ONLY}))
        table = run_monte_carlo(sc)
        assert {row.estimator for row in table.rows} == \
            {Estimator.INTERNAL_ONLY}

    def test_poisson_cell_runs(self):
        sc = scenario(population_size=4000, n_internal=150, n_external=600,
                      replications=5, design_internal=DesignKind.POISSON,
                      design_external=DesignKind.POISSON,
                      covariate_mode=CovariateMode.DEPENDENT,
                      variance_mode=VarianceKind.HETERO)
        table = run_monte_carlo(sc)
        assert table.row_for(Estimator.PROPOSED, 0).n_used > 0


class TestScenarioValidation:
    def test_sample_larger_than_population_rejected(self):
        with pytest.raises(ValueError):
            scenario(n_internal=5000)

    def test_linear_needs_variance_mode(self):
        with pytest.raises(ValueError):
            scenario(variance_mode=None)

    def test_paper_scale_sizes(self):
        sc = Scenario.paper_scale()
        assert sc.population_size == 100_000
        assert sc.n_internal == 1_000
        assert sc.n_external == 10_000
        assert sc.replications == 1_000
