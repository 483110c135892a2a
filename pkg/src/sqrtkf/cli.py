"""Command-line interface: ``sqrtkf <subcommand> [options]``.

Subcommands
-----------
simulate       draw a measurement log from a model config
estimate       maximum-likelihood estimate of theta from a measurement log
verify-lemmas  post-array derivative check on the worked 3 x 4 examples
benchmark      Monte Carlo ill-conditioning sweep on the example3 family
gradcheck      analytic likelihood gradient against central differences

Exit codes: 0 success, 2 usage or config error, 3 domain or data error,
4 internal error. Failures are reported as one JSON line on stderr.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .bench import SweepConfig, run_sweep, verify_lemma_tables
from .errors import (DimensionMismatch, DomainError, FilterFailure, SingularMatrix,
                     SqrtKFError)
from .estimator import OptimizerConfig, check_engine, estimate, evaluate_pi
from .filters import ENGINES
from .io import (ConfigError, config_hash, load_config, metadata, read_log, spec_from_config,
                 write_log_csv, write_log_json)
from .model import fd_step, simulate

logger = logging.getLogger("sqrtkf")

EXIT_OK, EXIT_CONFIG, EXIT_DOMAIN, EXIT_INTERNAL = 0, 2, 3, 4

GRADCHECK_GATE = 1e-4


class DataError(SqrtKFError, ValueError):
    """Unreadable or inconsistent data file (exit code 3)."""


def _prepend_metadata(path, meta):
    with open(path) as fh:
        body = fh.read()
    with open(path, "w") as fh:
        for key in sorted(meta):
            fh.write(f"# {key}: {json.dumps(meta[key], sort_keys=True)}\n")
        fh.write(body)


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def _theta_true(cfg, spec):
    theta = cfg["simulate"].get("theta")
    if theta is None:
        theta = [5.0] if spec.name == "example3" else [0.0] * spec.p
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != (spec.p,):
        raise ConfigError(f"simulate.theta must have {spec.p} components")
    return theta


def _seed(cfg, args):
    seed = args.seed if args.seed is not None else cfg["simulate"].get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
    return seed


def _samples(cfg, args):
    N = args.samples if getattr(args, "samples", None) is not None else cfg["simulate"].get("N", 1000)
    if isinstance(N, bool) or not isinstance(N, int) or N < 1:
        raise ConfigError(f"simulate.N must be a positive integer, got {N!r}")
    return N


def _load_data(path, spec):
    try:
        log = read_log(path)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read data file {path}: {exc}") from None
    if log.z.shape[1] != spec.m:
        raise DataError(f"data has {log.z.shape[1]} measurement columns, model expects {spec.m}")
    if spec.d and log.u.size and log.u.shape[1] != spec.d:
        raise DataError(f"data has {log.u.shape[1]} input columns, model expects {spec.d}")
    return log


def _data_or_simulated(cfg, args, spec):
    if args.data:
        return _load_data(args.data, spec)
    return simulate(spec, _theta_true(cfg, spec), _samples(cfg, args), seed=_seed(cfg, args))


def _out(path, default):
    path = path or default
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    return path


def _stem(path):
    root, _ = os.path.splitext(path)
    return root


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg, args):
    spec = spec_from_config(cfg["model"])
    theta = _theta_true(cfg, spec)
    N, seed = _samples(cfg, args), _seed(cfg, args)
    log = simulate(spec, theta, N, seed=seed)
    out = _out(args.out, "measurements.csv")
    meta = metadata(cfg, seed)
    if out.endswith(".json"):
        write_log_json(log, out, meta)
    else:
        write_log_csv(log, out, meta)
        write_log_json(log, _stem(out) + ".json", meta)
    logger.info("wrote %d samples to %s", N, out)
    return EXIT_OK


def _optimizer(cfg, args, spec):
    est = dict(cfg.get("estimate", {}))
    if args.engine:
        est["engine"] = args.engine[-1]
    if est.get("theta0") is None:
        est["theta0"] = [1.0] if spec.name == "example3" else [0.0] * spec.p
    if est.get("engine", "esrcf") not in ENGINES:
        raise ConfigError(f"estimate.engine must be one of {sorted(ENGINES)}")
    try:
        return OptimizerConfig(**est)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid estimate section: {exc}") from None


def cmd_estimate(cfg, args):
    spec = spec_from_config(cfg["model"])
    config = _optimizer(cfg, args, spec)
    data = _data_or_simulated(cfg, args, spec)
    start = np.asarray(config.theta0, dtype=float).reshape(spec.p)
    bounds = config.bounds if config.bounds is not None else spec.bounds
    if bounds is not None:
        b = np.asarray(bounds, dtype=float).reshape(spec.p, 2)
        start = np.clip(start, b[:, 0], b[:, 1])  # estimate projects the same way
    check_engine(spec, start, config.engine)
    res = estimate(spec, data, config)
    out = _out(args.out, "estimate.json")
    meta = metadata(cfg, data.metadata.get("seed"), engine=config.engine,
                    data=args.data, optimizer=vars(config))
    res.to_json(out, meta)
    trace = _stem(out) + "_trace.csv"
    res.write_trace(trace)
    _prepend_metadata(trace, meta)
    logger.info("theta_hat=%s termination=%s", res.theta.tolist(), res.termination)
    print(json.dumps({"theta_hat": res.theta.tolist(), "termination": res.termination}))
    return EXIT_OK


def cmd_verify_lemmas(cfg, args):
    report = verify_lemma_tables()
    out = _out(args.out, "verify_lemmas.json")
    _write_json(out, {"metadata": metadata(cfg, None), **report})
    summary = {k: {"max_deviation": v["max_deviation"], "self_check": v["self_check"]}
               for k, v in report.items()}
    print(json.dumps(summary))
    ok = all(v["self_check"] <= 1e-12 and v["max_deviation"] <= 1e-3 for v in report.values())
    return EXIT_OK if ok else EXIT_DOMAIN


def _sweep_config(cfg, args):
    b = dict(cfg.get("benchmark", {}))
    if args.replicates is not None:
        b["replicates"] = args.replicates
    if args.samples is not None:
        b["N"] = args.samples
    if args.deltas:
        try:
            b["deltas"] = [float(x) for x in args.deltas.split(",")]
        except ValueError:
            raise ConfigError(f"--deltas must be a comma-separated list of numbers: {args.deltas!r}") from None
    if args.seed is not None:
        b["base_seed"] = args.seed
    if args.engine:
        b["engines"] = list(args.engine)
    for e in b.get("engines", []):
        if e not in ENGINES:
            raise ConfigError(f"unknown engine {e!r}")
    try:
        return SweepConfig.desk(**b)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid benchmark section: {exc}") from None


def cmd_benchmark(cfg, args):
    sweep = _sweep_config(cfg, args)
    outdir = args.out or "benchmark"
    os.makedirs(outdir, exist_ok=True)

    def progress(batch):
        r = batch[0]
        logger.info("delta=%g replicate=%d: %s", r.delta, r.replicate,
                    ", ".join(f"{b.engine}={b.theta_hat:.4f}" for b in batch))

    report = run_sweep(sweep, progress=progress)
    meta = metadata(cfg, sweep.base_seed)
    report.to_json(os.path.join(outdir, "sweep.json"), meta)
    for name, writer in (("sweep.csv", report.write_csv), ("sweep_traces.csv", report.write_trace_csv)):
        path = os.path.join(outdir, name)
        writer(path)
        _prepend_metadata(path, meta)
    for row in report.summary():
        print(json.dumps(row))
    return EXIT_OK


def gradient_check(spec, data, theta, engine):
    """Analytic gradient, central differences and their relative discrepancy."""
    theta = np.asarray(theta, dtype=float)
    acc = evaluate_pi(spec, data, theta, engine)
    fd = np.empty(spec.p)
    for i in range(spec.p):
        h = fd_step(theta[i])
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        fd[i] = (evaluate_pi(spec, data, tp, engine).value
                 - evaluate_pi(spec, data, tm, engine).value) / (tp[i] - tm[i])
    scale = max(np.max(np.abs(fd)), np.finfo(float).tiny)
    rel = float(np.max(np.abs(acc.gradient - fd)) / scale)
    return {"theta": theta.tolist(), "mu": acc.value, "gradient": acc.gradient.tolist(),
            "fd_gradient": fd.tolist(), "max_rel_error": rel}


def cmd_gradcheck(cfg, args):
    spec = spec_from_config(cfg["model"])
    data = _data_or_simulated(cfg, args, spec)
    theta = cfg.get("gradcheck", {}).get("theta")
    theta = _theta_true(cfg, spec) if theta is None else np.asarray(theta, dtype=float).reshape(spec.p)
    engines = list(args.engine) if args.engine else ["esrcf"]
    results = {}
    for engine in engines:
        check_engine(spec, theta, engine)
        results[engine] = gradient_check(spec, data, theta, engine)
    worst = max(r["max_rel_error"] for r in results.values())
    out = _out(args.out, "gradcheck.json")
    _write_json(out, {"metadata": metadata(cfg, data.metadata.get("seed")), "gate": GRADCHECK_GATE,
                      "max_rel_error": worst, "engines": results})
    print(json.dumps({e: r["max_rel_error"] for e, r in results.items()}))
    return EXIT_OK if worst <= GRADCHECK_GATE else EXIT_DOMAIN


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "verify-lemmas": cmd_verify_lemmas,
            "benchmark": cmd_benchmark, "gradcheck": cmd_gradcheck}


def build_parser():
    parser = argparse.ArgumentParser(prog="sqrtkf", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output file (directory for benchmark)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. model.delta=1e-3 (repeatable)")
        p.add_argument("--seed", type=int)
        p.add_argument("--engine", action="append", choices=sorted(ENGINES),
                       help="filter engine (repeatable for benchmark and gradcheck)")
        p.add_argument("--samples", type=int, help="number of measurements N")
        p.add_argument("--verbose", "-v", action="count", default=0)
        if name in ("estimate", "gradcheck"):
            p.add_argument("--data", help="measurement log (.csv or .json)")
        if name == "benchmark":
            p.add_argument("--replicates", type=int)
            p.add_argument("--deltas", help="comma-separated list, e.g. 1e-2,1e-3,1e-5")
    return parser


def _fail(code, exc):
    line = {"error": type(exc).__name__, "exit": code, "message": str(exc)}
    print(json.dumps(line), file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except (DomainError, DimensionMismatch, SingularMatrix, DataError, FilterFailure) as exc:
        return _fail(EXIT_DOMAIN, exc)
    except OSError as exc:
        return _fail(EXIT_CONFIG, exc)
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        logger.debug("internal error", exc_info=True)
        return _fail(EXIT_INTERNAL, exc)


if __name__ == "__main__":
    sys.exit(main())
