"""File formats: run configs, measurement logs and output metadata.

Config files are JSON objects::

    {
      "model":     {"family": "example3", "delta": 0.01, "bounds": [[1e-3, 1e3]]},
      "simulate":  {"theta": [5.0], "N": 1000, "seed": 42},
      "gradcheck": {"theta": [2.0]},
      "estimate":  {"engine": "esrcf", "theta0": [1.0], "method": "gradient", ...},
      "benchmark": {"deltas": [0.01, 0.001, 1e-05], "replicates": 20, ...}
    }

Model families are ``example3`` (key ``delta``), ``random`` (keys ``seed``,
``n``, ``m``, ``p``, ``d``, ``q``, ``scale``) and ``polynomial`` (keys
``n``, ``m``, ``d``, ``q``, ``p`` and ``terms``, see ``polynomial_spec``).
``simulate.theta`` defaults to ``[5.0]`` for ``example3`` and to zeros
otherwise; ``estimate.theta0`` defaults to ``[1.0]`` and zeros likewise.
Every section is optional; ``--set a.b=value`` overrides are applied after
parsing, with ``value`` read as JSON when possible and as a string otherwise.
"""

import copy
import csv
import hashlib
import json

import numpy as np

from . import __version__
from .errors import SqrtKFError
from .model import GENERATOR, MeasurementLog, example3_spec, polynomial_spec, random_spec


class ConfigError(SqrtKFError, ValueError):
    """Malformed or inconsistent configuration (CLI exit code 2)."""


DEFAULT_CONFIG = {
    "model": {"family": "example3", "delta": 1e-2},
    "simulate": {"N": 1000, "seed": 0},
    "estimate": {},
    "benchmark": {},
}


def load_config(path=None, overrides=()):
    """Read a JSON config (or the defaults) and apply ``key=value`` overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        for key, val in user.items():
            if isinstance(val, dict) and isinstance(cfg.get(key), dict):
                cfg[key] = {**cfg[key], **val}
            else:
                cfg[key] = val
    for item in overrides:
        apply_override(cfg, item)
    return cfg


def apply_override(cfg, item):
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {key!r}: {part!r} is not a section")
        node = nxt
    node[parts[-1]] = value
    return cfg


def config_hash(cfg):
    """Short SHA-256 of the canonical JSON form of ``cfg``."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def metadata(cfg, seed=None, **extra):
    meta = {"tool": "sqrtkf", "version": __version__, "config_hash": config_hash(cfg), "seed": seed}
    meta.update(extra)
    return meta


def _int(section, key, name, minimum=0):
    val = section.get(key)
    if isinstance(val, bool) or not isinstance(val, (int, float)) or val != int(val) or val < minimum:
        raise ConfigError(f"{name}.{key} must be an integer >= {minimum}, got {val!r}")
    return int(val)


def spec_from_config(model_cfg):
    """Build a ``ModelSpec`` from the ``model`` section of a config."""
    if not isinstance(model_cfg, dict):
        raise ConfigError("model section must be an object")
    family = model_cfg.get("family", "example3")
    bounds = model_cfg.get("bounds")
    try:
        if family == "example3":
            delta = model_cfg.get("delta", 1e-2)
            if not isinstance(delta, (int, float)) or not delta > 0:
                raise ConfigError(f"model.delta must be positive, got {delta!r}")
            spec = example3_spec(float(delta))
        elif family == "random":
            kw = {k: _int(model_cfg, k, "model", 1) for k in ("n", "m", "p", "d") if k in model_cfg}
            if "q" in model_cfg:
                kw["q"] = _int(model_cfg, "q", "model", 0)
            spec = random_spec(model_cfg.get("seed", 0), scale=float(model_cfg.get("scale", 0.1)), **kw)
        elif family == "polynomial":
            dims = [_int(model_cfg, k, "model", 0) for k in ("n", "m", "d", "q", "p")]
            spec = polynomial_spec(model_cfg.get("terms", {}), *dims)
        else:
            raise ConfigError(f"model.family {family!r} is not one of example3, random, polynomial")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid model section: {exc}") from None
    if bounds is not None:
        try:
            spec.bounds = np.asarray(bounds, dtype=float).reshape(spec.p, 2)
        except ValueError:
            raise ConfigError(f"model.bounds must be {spec.p} pairs") from None
    return spec


# ---------------------------------------------------------------------------
# measurement logs


def _fmt(x):
    # repr of a Python float is the shortest string that round-trips
    return repr(float(x))


def write_log_csv(log: MeasurementLog, path, meta=None):
    """CSV with header ``k,z_1..z_m,u_1..u_d``; metadata as ``#`` comment lines."""
    m = log.z.shape[1]
    d = log.u.shape[1] if log.u is not None else 0
    info = {**log.metadata, **(meta or {})}
    with open(path, "w", newline="") as fh:
        for key in sorted(info):
            fh.write(f"# {key}: {json.dumps(info[key], sort_keys=True)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k"] + [f"z_{i + 1}" for i in range(m)] + [f"u_{i + 1}" for i in range(d)])
        for k in range(log.N):
            row = [k + 1] + [_fmt(v) for v in log.z[k]]
            if d:
                row += [_fmt(v) for v in log.u[k]]
            w.writerow(row)


def read_log_csv(path) -> MeasurementLog:
    meta, rows = {}, []
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition(": ")
            try:
                meta[key] = json.loads(val)
            except json.JSONDecodeError:
                meta[key] = val
        elif line.strip():
            body.append(line)
    if not body:
        raise ValueError(f"{path}: no header row")
    reader = csv.reader(body)
    header = next(reader)
    if not header or header[0] != "k":
        raise ValueError(f"{path}: header must start with 'k'")
    zc = [i for i, h in enumerate(header) if h.startswith("z_")]
    uc = [i for i, h in enumerate(header) if h.startswith("u_")]
    if len(zc) + len(uc) + 1 != len(header):
        raise ValueError(f"{path}: unexpected columns in header {header}")
    for line in reader:
        rows.append([float(v) for v in line])
    if not rows:
        raise ValueError(f"{path}: no data rows")
    arr = np.array(rows, dtype=float)
    return MeasurementLog(z=arr[:, zc], u=arr[:, uc], metadata=meta)


def write_log_json(log: MeasurementLog, path, meta=None):
    doc = {"metadata": {**log.metadata, **(meta or {})},
           "z": log.z.tolist(), "u": log.u.tolist()}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def read_log_json(path) -> MeasurementLog:
    with open(path) as fh:
        doc = json.load(fh)
    z = np.asarray(doc["z"], dtype=float)
    u = np.asarray(doc.get("u", np.zeros((z.shape[0], 0))), dtype=float).reshape(z.shape[0], -1)
    return MeasurementLog(z=z, u=u, metadata=doc.get("metadata", {}))


def read_log(path) -> MeasurementLog:
    """Read a log in either format, chosen by file extension."""
    if str(path).endswith(".json"):
        return read_log_json(path)
    return read_log_csv(path)


__all__ = ["ConfigError", "DEFAULT_CONFIG", "GENERATOR", "load_config", "apply_override",
           "config_hash", "metadata", "spec_from_config", "write_log_csv", "read_log_csv",
           "write_log_json", "read_log_json", "read_log"]
