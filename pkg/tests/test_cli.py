"""End-to-end command-line runs: artifacts, exit codes, byte determinism."""

import json
import os
import shutil

import pytest

from coxaffine.cli import main

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
DENSE = os.path.join(FIXTURES, "events_dense.csv")

DESK_MODEL = {"kind": "feller", "kappa": 0.2, "theta": 0.04, "sigma": 0.05, "lambda0": 0.04}
UNIT_MODEL = {"kind": "feller", "kappa": 1.0, "theta": 1.0, "sigma": 0.5, "lambda0": 1.0}


def write_model(tmp_path, doc, name="model.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def read_config_line(path):
    with open(path) as fh:
        first = fh.readline()
    assert first.startswith("# config: ")
    return json.loads(first[len("# config: "):])


class TestSimulate:
    def test_artifacts(self, tmp_path):
        model = write_model(tmp_path, UNIT_MODEL)
        out = str(tmp_path / "run")
        code = main(["simulate", "--model", model, "--out", out, "--seed", "7", "--len", "5"])
        assert code == 0
        summary = json.loads((tmp_path / "run" / "summary.json").read_text())
        assert summary["config"]["seed"] == 7
        assert summary["config"]["model_params"]["theta"] == 1.0
        assert summary["total_hazard"] > 0.0
        with open(tmp_path / "run" / "path.csv") as fh:
            fh.readline()
            assert fh.readline().strip() == "t,lambda,cum_hazard"
        n_rows = sum(1 for _ in open(tmp_path / "run" / "arrivals.csv")) - 2
        assert n_rows == summary["n_arrivals"]
        cfg = read_config_line(str(tmp_path / "run" / "path.csv"))
        assert cfg == read_config_line(str(tmp_path / "run" / "arrivals.csv"))
        assert "jobs" not in cfg

    def test_rerun_byte_identical(self, tmp_path):
        model = write_model(tmp_path, UNIT_MODEL)
        out = tmp_path / "run"
        snap = tmp_path / "snap"
        assert main(["simulate", "--model", model, "--out", str(out), "--seed", "3"]) == 0
        shutil.copytree(out, snap)
        assert main(["simulate", "--model", model, "--out", str(out), "--seed", "3"]) == 0
        for name in ("path.csv", "arrivals.csv", "summary.json"):
            assert (out / name).read_bytes() == (snap / name).read_bytes(), name

    def test_seed_changes_output(self, tmp_path):
        model = write_model(tmp_path, UNIT_MODEL)
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        main(["simulate", "--model", model, "--out", a, "--seed", "1"])
        main(["simulate", "--model", model, "--out", b, "--seed", "2"])
        na = json.loads(open(os.path.join(a, "summary.json")).read())["n_arrivals"]
        nb = json.loads(open(os.path.join(b, "summary.json")).read())["n_arrivals"]
        assert na != nb


class TestPmf:
    def test_artifacts_and_mass(self, tmp_path):
        model = write_model(tmp_path, UNIT_MODEL)
        out = tmp_path / "run"
        code = main(["pmf", "--model", model, "--out", str(out), "--kmax", "12"])
        assert code == 0
        doc = json.loads((out / "pmf.json").read_text())
        assert len(doc["probs"]) == 13
        assert doc["probs"][0] > 0.0
        assert sum(doc["probs"]) + doc["tail_bound"] == pytest.approx(1.0, abs=1e-12)
        rows = [ln for ln in (out / "pmf.csv").read_text().splitlines() if ln and not ln.startswith("#")]
        assert rows[0] == "k,p_k" and len(rows) == 14


class TestFit:
    def test_dense_fixture_recovers_theta(self, tmp_path):
        out = tmp_path / "run"
        code = main(["fit", "--data", DENSE, "--out", str(out), "--seed", "1"])
        assert code == 0
        doc = json.loads((out / "estimate.json").read_text())
        # the fixture's generating intensity has long-run mean 0.5 per minute
        assert doc["estimates"]["theta"] == pytest.approx(0.5, rel=0.25)
        assert doc["config"]["pipeline"]["mapping"] == "no_arrival_log"
        assert doc["config"]["n_obs"] == 4800
        for name in ("params.csv", "residuals.csv", "fitted_vs_observed.csv", "ljung_box.csv"):
            assert (out / name).exists(), name
        params_rows = (out / "params.csv").read_text().splitlines()
        assert params_rows[1] == "parameter,estimate,std_error"
        assert [r.split(",")[0] for r in params_rows[2:]] == ["kappa", "theta", "sigma", "R"]

    def test_frequency_pipeline(self, tmp_path):
        cfg = tmp_path / "pipeline.json"
        cfg.write_text(json.dumps({"mapping": "frequency"}))
        out = tmp_path / "run"
        code = main(["fit", "--data", DENSE, "--config", str(cfg), "--out", str(out)])
        assert code == 0
        doc = json.loads((out / "estimate.json").read_text())
        assert doc["config"]["pipeline"]["mapping"] == "frequency"
        assert doc["estimates"]["theta"] == pytest.approx(0.5, rel=0.3)


class TestValidate:
    def test_artifacts_and_parallel_determinism(self, tmp_path):
        model = write_model(tmp_path, DESK_MODEL)
        out = tmp_path / "run"
        snap = tmp_path / "snap"
        base = ["validate", "--model", model, "--out", str(out), "--seed", "5",
                "--reps", "6", "--len", "250"]
        assert main(base + ["--jobs", "1"]) == 0
        names = [
            "replication_summary.csv",
            "hist_kappa.csv",
            "hist_theta.csv",
            "hist_sigma.csv",
            "estimates.csv",
            "summary.json",
        ]
        for name in names:
            assert (out / name).exists(), name
        shutil.copytree(out, snap)
        assert main(base + ["--jobs", "2"]) == 0
        for name in names:
            assert (out / name).read_bytes() == (snap / name).read_bytes(), name
        doc = json.loads((out / "summary.json").read_text())
        assert doc["n_requested"] == 6 and doc["n_failed"] == 0
        est_rows = [
            ln for ln in (out / "estimates.csv").read_text().splitlines()
            if ln and not ln.startswith("#")
        ]
        assert est_rows[0] == "kappa,theta,sigma,R,converged,ljung_box_clean"
        assert len(est_rows) == 7


class TestExitCodes:
    def test_missing_data_file(self, tmp_path):
        code = main(["fit", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")])
        assert code == 2

    def test_malformed_model_json(self, tmp_path):
        p = tmp_path / "model.json"
        p.write_text("{not json")
        code = main(["pmf", "--model", str(p), "--out", str(tmp_path / "o")])
        assert code == 2

    def test_wrong_model_kind(self, tmp_path):
        p = tmp_path / "model.json"
        p.write_text(json.dumps({"kind": "hawkes"}))
        code = main(["pmf", "--model", str(p), "--out", str(tmp_path / "o")])
        assert code == 2

    def test_bad_pipeline_config(self, tmp_path):
        cfg = tmp_path / "pipeline.json"
        cfg.write_text(json.dumps({"window": 5}))
        code = main(["fit", "--data", DENSE, "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 2

    def test_usage_error(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path / "o")]) == 2
        assert main(["frobnicate"]) == 2

    def test_numeric_failure(self, tmp_path):
        # series too short for any replication to fit: estimation error
        model = write_model(tmp_path, DESK_MODEL)
        code = main(
            ["validate", "--model", model, "--out", str(tmp_path / "o"),
             "--reps", "2", "--len", "10"]
        )
        assert code == 1
