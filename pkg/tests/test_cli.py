import csv
import json
import subprocess
import sys

import pytest

from sqrtkf.cli import main

SINGULAR_F = {"model": {"family": "polynomial", "n": 1, "m": 1, "d": 1, "q": 1, "p": 1,
                        "terms": {"F": [[[[0.0]], [0]]], "G": [[[[1.0]], [0]]], "H": [[[[1.0]], [0]]],
                                  "P0": [[[[1.0]], [0]]], "R": [[[[1.0]], [1]]], "Q": [[[[1.0]], [0]]]},
                        "bounds": [[0.1, 10.0]]},
              "simulate": {"theta": [1.0], "N": 20, "seed": 1}}


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_simulate_example3(tmp_path):
    out = tmp_path / "z.csv"
    assert main(["simulate", "--out", str(out), "--seed", "42", "--samples", "1000"]) == 0
    lines = out.read_text().splitlines()
    body = [l for l in lines if not l.startswith("#")]
    assert body[0] == "k,z_1,z_2,u_1"
    assert len(body) == 1001
    meta = [l for l in lines if l.startswith("#")]
    assert any(l.startswith("# config_hash:") for l in meta)
    assert any(l.startswith("# version:") for l in meta)
    assert "# seed: 42" in meta
    assert json.load(open(tmp_path / "z.json"))["metadata"]["seed"] == 42


def test_simulate_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert main(["simulate", "--out", str(p), "--samples", "50", "--set", "model.delta=1e-3"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_zero_samples_is_a_config_error(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path / "z.csv"), "--set", "simulate.N=0"]) == 2
    err = _err(capsys)
    assert err["exit"] == 2 and "simulate.N" in err["message"]


@pytest.mark.parametrize("argv, code", [
    (["bogus"], 2),
    (["simulate", "--config", "/nonexistent.json"], 2),
    (["simulate", "--set", "model.family=nope"], 2),
    (["simulate", "--set", "model.delta=-1"], 2),
    (["estimate", "--set", "estimate.shrink=3"], 2),
    (["benchmark", "--deltas", "a,b"], 2),
])
def test_config_errors(argv, code, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == code


def test_estimate_end_to_end(tmp_path):
    data = tmp_path / "z.csv"
    assert main(["simulate", "--out", str(data), "--samples", "250", "--seed", "3"]) == 0
    out = tmp_path / "est.json"
    assert main(["estimate", "--data", str(data), "--engine", "esrcf", "--out", str(out),
                 "--set", "estimate.method=bfgs", "--set", "estimate.max_step=1.0"]) == 0
    doc = json.load(open(out))
    assert abs(doc["theta_hat"][0] - 5.0) <= 0.5
    assert doc["termination"] in ("gradTol", "thetaTol")
    assert doc["metadata"]["seed"] == 3 and doc["metadata"]["engine"] == "esrcf"
    body = [l for l in open(tmp_path / "est_trace.csv") if not l.startswith("#")]
    assert next(csv.reader(body)) == ["n", "theta_1", "mu", "gradnorm", "gamma"]


def test_estimate_records_conventional_breakdown(tmp_path):
    out = tmp_path / "est.json"
    assert main(["estimate", "--engine", "conventional", "--samples", "50", "--out", str(out),
                 "--set", "model.delta=1e-8"]) == 0
    doc = json.load(open(out))
    assert doc["termination"] == "filterFailure"
    assert doc["failure"]["step"] >= 1


def test_esrif_needs_invertible_F(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(SINGULAR_F))
    assert main(["estimate", "--config", str(cfg), "--engine", "esrif", "--out", str(tmp_path / "e.json")]) == 3
    assert _err(capsys)["message"] == "eSRIF requires invertible F"
    assert main(["estimate", "--config", str(cfg), "--engine", "esrcf", "--out", str(tmp_path / "e.json")]) == 0


def test_bad_data_file_is_a_domain_error(tmp_path, capsys):
    data = tmp_path / "z.csv"
    data.write_text("k,z_1\n1,0.5\n")
    assert main(["estimate", "--data", str(data), "--out", str(tmp_path / "e.json")]) == 3
    assert "measurement columns" in _err(capsys)["message"]


def test_verify_lemmas(tmp_path):
    out = tmp_path / "v.json"
    assert main(["verify-lemmas", "--out", str(out)]) == 0
    doc = json.load(open(out))
    assert doc["upper"]["self_check"] <= 1e-12 and doc["lower"]["self_check"] <= 1e-12
    assert "config_hash" in doc["metadata"]


def test_gradcheck_random_model(tmp_path):
    out = tmp_path / "g.json"
    argv = ["gradcheck", "--out", str(out), "--samples", "40", "--engine", "esrcf", "--engine", "esrif",
            "--engine", "conventional", "--set", "model.family=random", "--set", "model.n=2",
            "--set", "model.p=2", "--set", "model.seed=5", "--set", "simulate.theta=[0.2,-0.1]"]
    assert main(argv) == 0
    doc = json.load(open(out))
    assert doc["max_rel_error"] <= 1e-6
    assert set(doc["engines"]) == {"esrcf", "esrif", "conventional"}


def test_benchmark_schema(tmp_path):
    outdir = tmp_path / "bench"
    argv = ["benchmark", "--out", str(outdir), "--replicates", "1", "--samples", "40", "--deltas", "1e-2"]
    assert main(argv) == 0
    lines = (outdir / "sweep.csv").read_text().splitlines()
    body = [l for l in lines if not l.startswith("#")]
    assert body[0] == "delta,engine,replicate,theta_hat,converged,termination"
    assert len(body) == 4
    assert any(l.startswith("# config_hash:") for l in lines)
    assert (outdir / "sweep_traces.csv").exists()
    doc = json.load(open(outdir / "sweep.json"))
    assert len(doc["summary"]) == 3


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "sqrtkf", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "sqrtkf" in res.stdout
