import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sqrtkf.io import (ConfigError, apply_override, config_hash, load_config, metadata, read_log,
                       read_log_csv, spec_from_config, write_log_csv, write_log_json)
from sqrtkf.model import MeasurementLog, example3_spec, simulate


def test_defaults_and_overrides(tmp_path):
    cfg = load_config()
    assert cfg["model"]["family"] == "example3"
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"model": {"delta": 1e-3}, "estimate": {"engine": "esrif"}}))
    cfg = load_config(path, ["simulate.N=25", "model.family=example3", "estimate.theta0=[2.0]"])
    assert cfg["model"] == {"family": "example3", "delta": 1e-3}
    assert cfg["simulate"]["N"] == 25 and cfg["simulate"]["seed"] == 0
    assert cfg["estimate"] == {"engine": "esrif", "theta0": [2.0]}


@pytest.mark.parametrize("item", ["novalue", "=3", "model.delta.x=1"])
def test_bad_overrides(item):
    with pytest.raises(ConfigError):
        apply_override(load_config(), item)


def test_unreadable_configs(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_config_hash_is_canonical():
    a = {"x": 1, "y": {"b": 2, "a": 1}}
    b = {"y": {"a": 1, "b": 2}, "x": 1}
    assert config_hash(a) == config_hash(b)
    assert len(config_hash(a)) == 16
    assert config_hash(a) != config_hash({"x": 2})
    meta = metadata(a, 7, engine="esrcf")
    assert meta["seed"] == 7 and meta["engine"] == "esrcf" and meta["tool"] == "sqrtkf"
    assert meta["version"]


def test_spec_families():
    assert spec_from_config({"family": "example3", "delta": 1e-3}).params == {"delta": 1e-3}
    spec = spec_from_config({"family": "random", "seed": 3, "n": 2, "m": 1, "p": 2})
    assert (spec.n, spec.m, spec.p) == (2, 1, 2)
    spec = spec_from_config({"family": "polynomial", "n": 1, "m": 1, "d": 0, "q": 1, "p": 1,
                             "terms": {"H": [[[[1.0]], [0]]]}, "bounds": [[0, 1]]})
    np.testing.assert_array_equal(spec.bounds, [[0.0, 1.0]])


@pytest.mark.parametrize("model", [
    {"family": "kalman"},
    {"family": "example3", "delta": -1},
    {"family": "example3", "delta": "x"},
    {"family": "random", "n": 0},
    {"family": "random", "n": 1.5},
    {"family": "polynomial", "n": 1, "m": 1, "d": 0, "q": 1},
    {"family": "example3", "bounds": [[1, 2], [3, 4]]},
    "example3",
])
def test_spec_errors(model):
    with pytest.raises(ConfigError):
        spec_from_config(model)


def test_csv_round_trip_is_bit_faithful(tmp_path):
    log = simulate(example3_spec(1e-2), [5.0], 40, seed=2)
    path = tmp_path / "z.csv"
    write_log_csv(log, path, {"config_hash": "abc"})
    back = read_log_csv(path)
    assert np.array_equal(back.z, log.z) and np.array_equal(back.u, log.u)
    assert back.metadata["seed"] == 2 and back.metadata["config_hash"] == "abc"
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# ")
    assert "k,z_1,z_2,u_1" in lines
    write_log_json(log, tmp_path / "z.json")
    back = read_log(tmp_path / "z.json")
    assert np.array_equal(back.z, log.z) and back.metadata["theta"] == [5.0]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=20))
def test_float_formatting_round_trips(tmp_path_factory, values):
    z = np.array(values)[:, None]
    path = tmp_path_factory.mktemp("rt") / "z.csv"
    write_log_csv(MeasurementLog(z=z, u=np.zeros((len(values), 0))), path)
    assert np.array_equal(read_log(path).z, z)


@pytest.mark.parametrize("text", ["", "# only: 1\n", "x,z_1\n1,2\n", "k,z_1,w\n1,2,3\n", "k,z_1\n"])
def test_malformed_logs(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ValueError):
        read_log_csv(path)
