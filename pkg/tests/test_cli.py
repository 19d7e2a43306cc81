import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from ipscurve.cli import cmd_estimate, cmd_simulate, cmd_summarize, main
from ipscurve.dataset import save_frame
from ipscurve.pipeline import ConfigError, RunConfig
from ipscurve.simulate import probation_like_dgp, sample_dgp

SCHEMA = {"outcome_column": "y", "treatment_column": "a", "covariate_columns": ["prior_arrests", "behavioral_health", "male"]}


@pytest.fixture
def data(tmp_path):
    path = tmp_path / "data.csv"
    save_frame(sample_dgp(probation_like_dgp(), 600, seed=21), path)
    return path


def write_config(tmp_path, name="cfg.json", **overrides):
    cfg = {"schema": dict(SCHEMA), "seed": 5, "bootstrap": {"replicates": 300}, **overrides}
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def read_curve(path):
    with open(path) as fh:
        header = fh.readline()
        rows = list(csv.DictReader(fh))
    return header, rows


class TestEstimate:
    def test_outputs_and_collapse(self, tmp_path, data):
        out = tmp_path / "out"
        assert cmd_estimate(write_config(tmp_path), data, out) == 0
        header, rows = read_curve(out / "curve.csv")
        assert header.startswith("# schema_version=1 config_digest=") and "seed=5" in header
        assert len(rows) == 101
        assert list(rows[0]) == ["delta", "estimate", "std_error", "pointwise_lo", "pointwise_hi", "band_lo", "band_hi"]
        d = np.array([float(r["delta"]) for r in rows])
        assert np.all(np.diff(d) > 0)
        y = np.loadtxt(data, delimiter=",", skiprows=1, usecols=1)
        at_one = next(r for r in rows if float(r["delta"]) == 1.0)
        assert float(at_one["estimate"]) == pytest.approx(y.mean(), abs=1e-12)
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["schema_version"] == 1 and "wall_time_seconds" in manifest
        assert manifest["runs"][0]["learner_provenance"]["folds"]
        for name in ("curve.json", "contrast.json"):
            doc = json.loads((out / name).read_text())
            assert doc["config_digest"] == manifest["config_digest"] and doc["seed"] == 5

    def test_band_ordering(self, tmp_path, data):
        out = tmp_path / "out"
        cmd_estimate(write_config(tmp_path), data, out)
        doc = json.loads((out / "curve.json").read_text())
        assert doc["critical_value"] >= doc["pointwise_z"]
        for r in doc["rows"]:
            assert r["band_lo"] <= r["pointwise_lo"] <= r["estimate"] <= r["pointwise_hi"] <= r["band_hi"]

    def test_byte_identical_rerun(self, tmp_path, data):
        cfg = write_config(tmp_path)
        cmd_estimate(cfg, data, tmp_path / "o1")
        cmd_estimate(cfg, data, tmp_path / "o2")
        for name in ("curve.csv", "curve.json", "contrast.json"):
            assert (tmp_path / "o1" / name).read_bytes() == (tmp_path / "o2" / name).read_bytes()

    def test_unknown_column_exit_2(self, tmp_path, data, capsys):
        schema = dict(SCHEMA, covariate_columns=["prior_arrests", "zipcode"])
        assert cmd_estimate(write_config(tmp_path, schema=schema), data, tmp_path / "o") == 2
        assert "zipcode" in capsys.readouterr().err

    def test_non_binary_treatment_exit_3(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("y,a,prior_arrests,behavioral_health,male\n1,0,1,0,1\n0,2,0,1,1\n")
        assert cmd_estimate(write_config(tmp_path), path, tmp_path / "o") == 3
        assert "non-binary treatment" in capsys.readouterr().err

    def test_estimation_failure_exit_4(self, tmp_path, capsys):
        path = tmp_path / "one_treated.csv"
        rows = ["1,1,1,0,1"] + [f"{i % 2},0,{i % 2},0,1" for i in range(20)]
        path.write_text("y,a,prior_arrests,behavioral_health,male\n" + "\n".join(rows) + "\n")
        assert cmd_estimate(write_config(tmp_path), path, tmp_path / "o") == 4
        assert "treated" in capsys.readouterr().err

    def test_stratified_outputs(self, tmp_path):
        frame = sample_dgp(probation_like_dgp(), 500, seed=3)
        labels = np.where(frame.x[:, 1] == 1, "bh", "no_bh")
        path = tmp_path / "s.csv"
        with open(path, "w") as fh:
            fh.write("y,a,prior_arrests,male,dx\n")
            for i in range(frame.n):
                fh.write(f"{frame.y[i]},{frame.a[i]},{frame.x[i, 0]:g},{frame.x[i, 2]:g},{labels[i]}\n")
        schema = dict(SCHEMA, covariate_columns=["prior_arrests", "male"])
        cfg = write_config(tmp_path, schema=schema, stratify="dx")
        assert cmd_estimate(cfg, path, tmp_path / "o") == 0
        for label in ("bh", "no_bh"):
            _, rows = read_curve(tmp_path / "o" / "strata" / label / "curve.csv")
            assert len(rows) == 101
        runs = json.loads((tmp_path / "o" / "run_manifest.json").read_text())["runs"]
        assert [r["label"] for r in runs] == ["pooled", "bh", "no_bh"]
        assert sum(r["n"] for r in runs[1:]) == runs[0]["n"]


class TestConfig:
    def test_seed_required(self):
        with pytest.raises(ConfigError, match="seed"):
            RunConfig.from_dict({"schema": SCHEMA})

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="colour"):
            RunConfig.from_dict({"schema": SCHEMA, "seed": 1, "colour": "red"})

    def test_grid_order(self):
        with pytest.raises(ConfigError, match="grid"):
            RunConfig.from_dict({"schema": SCHEMA, "seed": 1, "grid": {"min": 5, "max": 1}})

    def test_contrast_must_be_on_grid(self):
        with pytest.raises(ConfigError, match="nearest"):
            RunConfig.from_dict({"schema": SCHEMA, "seed": 1, "contrast": {"delta_lo": 0.3, "delta_hi": 10}})

    def test_defaults_and_digest(self):
        cfg = RunConfig.from_dict({"schema": SCHEMA, "seed": 1})
        assert cfg.k_folds == 2 and cfg.alpha == 0.05 and cfg.contrast == (0.1, 10.0)
        assert len(cfg.delta_grid()) == 101
        assert [s.kind for s in cfg.learners.propensity] == ["constant", "ridge_logistic", "gbt"]
        assert cfg.digest() == RunConfig.from_dict({"seed": 1, "schema": SCHEMA}).digest()
        assert cfg.digest() != RunConfig.from_dict({"schema": SCHEMA, "seed": 2}).digest()

    def test_learner_list(self):
        cfg = RunConfig.from_dict({"schema": SCHEMA, "seed": 1, "learners": [{"kind": "gbt", "tree_count": 10}]})
        assert cfg.learners.outcome[0].hyperparameters["tree_count"] == 10

    def test_bad_json_exit_2(self, tmp_path, data):
        path = tmp_path / "cfg.json"
        path.write_text("{not json")
        assert cmd_estimate(path, data, tmp_path / "o") == 2


class TestSummarize:
    def test_treatment_table(self, tmp_path, data):
        assert cmd_summarize(write_config(tmp_path), data, tmp_path / "s") == 0
        doc = json.loads((tmp_path / "s" / "summary_treatment.json").read_text())
        assert doc["groups"] == ["untreated", "treated"] and doc["total_n"] == 600
        assert sum(doc["group_n"]) == 600 and doc["schema_version"] == 1
        text = (tmp_path / "s" / "summary_treatment.csv").read_text()
        assert text.startswith("# schema_version=1")


class TestSimulate:
    def test_unknown_suite(self, tmp_path):
        assert cmd_simulate("foo", tmp_path) == 2

    def test_oracle_consistency_small(self, tmp_path):
        assert cmd_simulate("oracle_consistency", tmp_path, reps=20, n=400) == 0
        doc = json.loads((tmp_path / "oracle_single_cell.json").read_text())
        assert len(doc["rows"]) == 101
        assert json.loads((tmp_path / "oracle_consistency_summary.json").read_text())["passed"]

    def test_literal_formula_bias_small(self, tmp_path):
        assert cmd_simulate("literal_formula_bias", tmp_path, reps=20, n=1000) == 0
        rows = json.loads((tmp_path / "literal_formula_single_cell.json").read_text())["rows"]
        assert abs(rows[-1]["bias"]) > 0.05


def test_main_parses_global_threads(tmp_path, data):
    cfg = write_config(tmp_path)
    assert main(["--threads", "1", "estimate", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "a")]) == 0
    assert main(["estimate", "--threads", "1", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "curve.csv").read_bytes() == (tmp_path / "b" / "curve.csv").read_bytes()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ipscurve", "simulate", "--suite", "nope", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "unknown suite" in proc.stderr
