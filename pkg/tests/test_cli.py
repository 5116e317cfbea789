"""End-to-end command-line runs on temporary files."""

import json

import numpy as np
import pytest

import svycal.io as sio
from svycal import Family, Scenario, SummaryStatistic, Which, solve_weighted_z
from svycal.cli import main, scenario_from_toml
from svycal.simulate import draw_srs, gen_population

from conftest import make_sample


SCENARIO_TOML = """
family = "linear"
population_size = 1500
n_internal = 80
n_external = 300
covariate_mode = "independent"
variance_mode = "homo"
design_internal = "srs"
design_external = "srs"
replications = 3
seed = 77
estimators = ["proposed", "internal_only"]
"""


@pytest.fixture
def sample_files(tmp_path, rng):
    """Internal sample CSV plus an external summary JSON."""
    sc = Scenario(population_size=4000, n_internal=150, n_external=600,
                  seed=5150)
    pop = gen_population(sc, rng)
    spec = sc.spec()
    internal = draw_srs(pop, 150, rng)
    external_draw = draw_srs(pop, 600, rng)
    alpha2 = solve_weighted_z(external_draw, spec, Which.REDUCED,
                              external_draw.design_weights)
    from svycal.benchmark import variance_linearized
    V2 = variance_linearized(external_draw, spec, Which.REDUCED, alpha2)
    internal_csv = str(tmp_path / "internal.csv")
    sio.emit_sample_csv(internal, internal_csv)
    summary_json = str(tmp_path / "external.json")
    sio.emit_summary_json(
        SummaryStatistic(coef=alpha2, covariance=V2, n_source=600),
        summary_json)
    return internal_csv, summary_json


class TestSimulateCommand:
    def test_smoke_and_artifacts(self, tmp_path):
        config = tmp_path / "scenario.toml"
        config.write_text(SCENARIO_TOML)
        out = tmp_path / "metrics.csv"
        svg = tmp_path / "chart.svg"
        rc = main(["simulate", "--config", str(config), "--out", str(out),
                   "--svg", str(svg)])
        assert rc == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("family,covariate_mode")
        assert len(lines) == 1 + 2 * 3  # two estimators x three coefficients
        assert svg.read_text().lstrip().startswith("<?xml")

    def test_byte_identical_across_worker_counts(self, tmp_path):
        config = tmp_path / "scenario.toml"
        config.write_text(SCENARIO_TOML)
        out1, out2 = tmp_path / "m1.csv", tmp_path / "m2.csv"
        assert main(["simulate", "--config", str(config), "--out", str(out1),
                     "--workers", "1"]) == 0
        assert main(["simulate", "--config", str(config), "--out", str(out2),
                     "--workers", "3"]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_replication_log(self, tmp_path):
        config = tmp_path / "scenario.toml"
        config.write_text(SCENARIO_TOML)
        out = tmp_path / "metrics.csv"
        rep_log = tmp_path / "reps.csv"
        assert main(["simulate", "--config", str(config), "--out", str(out),
                     "--replication-log", str(rep_log)]) == 0
        lines = rep_log.read_text().strip().splitlines()
        assert len(lines) == 1 + 3 * 2  # three replications x two estimators

    def test_unknown_key_fails_cleanly(self, tmp_path, capsys):
        config = tmp_path / "scenario.toml"
        config.write_text(SCENARIO_TOML + "\nbogus = 3\n")
        rc = main(["simulate", "--config", str(config),
                   "--out", str(tmp_path / "m.csv")])
        assert rc == 1
        record = json.loads(capsys.readouterr().err.strip())
        assert "bogus" in record["message"]

    def test_scenario_parse_values(self, tmp_path):
        config = tmp_path / "scenario.toml"
        config.write_text(SCENARIO_TOML)
        sc = scenario_from_toml(str(config))
        assert sc.population_size == 1500 and sc.replications == 3


class TestEstimateCommand:
    def test_report_artifact(self, sample_files, tmp_path):
        internal_csv, summary_json = sample_files
        out = tmp_path / "report.json"
        rc = main(["estimate", "--internal", internal_csv,
                   "--summary", summary_json, "--family", "linear",
                   "--full", "x1,x2", "--reduced", "x1",
                   "--design", "srs:4000", "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert len(doc["coef"]) == 3
        assert doc["variance_mode"] == "pooled_benchmark"
        assert doc["calibration"]["max_constraint_residual"] <= 1e-10
        assert all(lo < hi for lo, hi in zip(doc["ci_lower"], doc["ci_upper"]))

    def test_external_only_mode(self, sample_files, tmp_path):
        internal_csv, summary_json = sample_files
        out = tmp_path / "report.json"
        rc = main(["estimate", "--internal", internal_csv,
                   "--summary", summary_json, "--family", "linear",
                   "--reduced", "x1", "--design", "srs:4000",
                   "--use-external-only", "--out", str(out)])
        assert rc == 0
        assert json.loads(out.read_text())["variance_mode"] == \
            "external_dominant"

    def test_logistic_family_end_to_end(self, tmp_path, rng):
        sc = Scenario(family=Family.LOGISTIC, variance_mode=None,
                      population_size=6000, n_internal=300, n_external=1200,
                      seed=2121)
        pop = gen_population(sc, rng)
        spec = sc.spec()
        internal = draw_srs(pop, 300, rng)
        ext_draw = draw_srs(pop, 1200, rng)
        alpha2 = solve_weighted_z(ext_draw, spec, Which.REDUCED,
                                  ext_draw.design_weights)
        from svycal.benchmark import variance_linearized
        V2 = variance_linearized(ext_draw, spec, Which.REDUCED, alpha2)
        internal_csv = str(tmp_path / "int.csv")
        summary_json = str(tmp_path / "ext.json")
        sio.emit_sample_csv(internal, internal_csv)
        sio.emit_summary_json(
            SummaryStatistic(coef=alpha2, covariance=V2, n_source=1200),
            summary_json)
        out = tmp_path / "report.json"
        rc = main(["estimate", "--internal", internal_csv,
                   "--summary", summary_json, "--family", "logistic",
                   "--reduced", "x1", "--design", "srs:6000",
                   "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert len(doc["coef"]) == 3
        assert doc["calibration"]["converged"] is True

    def test_missing_file_error_record(self, tmp_path, capsys):
        rc = main(["estimate", "--internal", str(tmp_path / "nope.csv"),
                   "--summary", str(tmp_path / "nope.json"),
                   "--family", "linear", "--reduced", "x1",
                   "--out", str(tmp_path / "r.json")])
        assert rc == 1
        record = json.loads(capsys.readouterr().err.strip())
        assert record["error"] in ("FileNotFoundError", "OSError")


class TestCalibrateCommand:
    def test_weights_satisfy_constraints(self, sample_files, tmp_path):
        internal_csv, summary_json = sample_files
        out = tmp_path / "weights.csv"
        rc = main(["calibrate", "--internal", internal_csv,
                   "--benchmark", summary_json, "--family", "linear",
                   "--reduced", "x1", "--design", "srs:4000",
                   "--out", str(out)])
        assert rc == 0
        rows = out.read_text().strip().splitlines()[1:]
        w = np.array([float(r.split(",")[2]) for r in rows])
        d = np.array([float(r.split(",")[1]) for r in rows])
        assert w.sum() == pytest.approx(d.sum(), rel=1e-10)
        assert np.all(w > 0)


class TestPropensityCommand:
    def test_debiased_summary(self, tmp_path, rng):
        sc = Scenario(population_size=5000, n_internal=200, n_external=800,
                      seed=808)
        pop = gen_population(sc, rng)
        internal = draw_srs(pop, 200, rng)
        big_idx = rng.choice(5000, size=800, replace=False)
        big = make_sample(pop.covariates[big_idx], pop.response[big_idx],
                          np.ones(800))
        internal_csv = str(tmp_path / "internal.csv")
        big_csv = str(tmp_path / "big.csv")
        sio.emit_sample_csv(internal, internal_csv)
        sio.emit_sample_csv(big, big_csv)
        out = tmp_path / "alpha2.json"
        rc = main(["propensity", "--big", big_csv, "--internal", internal_csv,
                   "--family", "linear", "--reduced", "x1",
                   "--design", "srs:5000", "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert len(doc["alpha"]) == 2
        assert doc["n"] == 800


class TestRunConfigEntry:
    def test_programmatic_dispatch(self, tmp_path):
        from svycal.cli import RunConfig, run_command
        a1 = tmp_path / "a1.json"
        a2 = tmp_path / "a2.json"
        a1.write_text(json.dumps({"alpha": [1.0], "V": [[4.0]]}))
        a2.write_text(json.dumps({"alpha": [3.0], "V": [[1.0]]}))
        out = tmp_path / "pooled.json"
        config = RunConfig(command="pool", options={
            "internal_summary": str(a1), "external_summary": str(a2),
            "out": str(out)})
        assert run_command(config) == 0
        assert json.loads(out.read_text())["alpha"][0] == pytest.approx(2.6)


class TestPoolCommand:
    def test_scalar_hand_value(self, tmp_path):
        a1 = tmp_path / "a1.json"
        a2 = tmp_path / "a2.json"
        a1.write_text(json.dumps({"alpha": [1.0], "V": [[4.0]]}))
        a2.write_text(json.dumps({"alpha": [3.0], "V": [[1.0]]}))
        out = tmp_path / "pooled.json"
        rc = main(["pool", "--internal-summary", str(a1),
                   "--external-summary", str(a2), "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["alpha"][0] == pytest.approx(2.6, rel=1e-12)
        assert doc["W"][0][0] == pytest.approx(0.8, rel=1e-12)

    def test_schema_error_exit(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"alpha": [1.0]}))
        ok = tmp_path / "ok.json"
        ok.write_text(json.dumps({"alpha": [1.0], "V": [[1.0]]}))
        rc = main(["pool", "--internal-summary", str(bad),
                   "--external-summary", str(ok),
                   "--out", str(tmp_path / "p.json")])
        assert rc == 1
        record = json.loads(capsys.readouterr().err.strip())
        assert record["error"] == "SchemaError"
