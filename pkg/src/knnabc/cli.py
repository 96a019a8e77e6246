"""Command-line front end: calibrate, run, replicate, ingest-returns, defaults.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

import argparse
import csv
import datetime
import hashlib
import json
import math
import os
import sys
from collections import namedtuple

import numpy as np

from . import config as cfg
from .calibration import Metric, calibrate, check_schedule
from .diagnostics import COLUMNS, act_ess, kde
from .models import MODELS, get_model, read_dataset, write_dataset
from .rng import CALIB, DATA, DomainError, stream
from .study import NEEDS_CALIBRATION, SAMPLER_DEFAULTS, replicate_study, run_sampler, sampler_config


class UsageError(ValueError):
    """Bad command-line arguments or configuration (exit code 2)."""


ReturnsSeries = namedtuple("ReturnsSeries", ["dates", "returns"])


def git_hash(data):
    """Content hash of ``data`` computed the way git hashes a blob."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _num(v):
    return repr(float(v))


def _write_text(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


# --- inputs -------------------------------------------------------------------

def resolve(config, model=None, seed=None, out=None):
    """Merge command-line flags over the config file and validate the result."""
    config = dict(config or {})
    if model is not None:
        config["model"] = model
    if seed is not None:
        config["seed"] = seed
    if out is not None:
        config["out"] = out
    if "model" not in config:
        raise UsageError("no model given: use --model or a config file")
    try:
        cfg.validate(config)
    except cfg.ConfigError as exc:
        raise UsageError(str(exc)) from None
    config.setdefault("seed", 0)
    config.setdefault("out", "out")
    return config


def dataset(config):
    """Observed data: the configured file, or a simulation at the truth."""
    model = get_model(config["model"])
    if "data" in config:
        return read_dataset(config["data"])
    truth = np.asarray(config.get("truth", model.truth), dtype=float)
    n = config.get("n", model.n_default)
    return model.simulate(truth, n, stream(config["seed"], DATA))


def _write_data(out, y):
    path = os.path.join(out, "data.csv")
    write_dataset(path, y)
    with open(path, "rb") as fh:
        return git_hash(fh.read())


def save_schedule(path, eps):
    _write_text(path, cfg.dumps({"J": len(eps) - 1, "eps": [float(e) for e in eps]}))


def load_schedule(path):
    with open(path) as fh:
        data = json.load(fh)
    eps = check_schedule(data["eps"])
    if data.get("J", eps.size - 1) != eps.size - 1:
        raise DomainError(f"{path}: J does not match the number of tolerances")
    return eps


# --- commands -----------------------------------------------------------------

def cmd_calibrate(config):
    """Estimate the metric and tolerance schedule; write both as JSON."""
    model = get_model(config["model"])
    out = config["out"]
    y0 = dataset(config)
    cal = dict(cfg.CALIBRATION_DEFAULTS, **config.get("calibration", {}))
    metric, eps, pilot = calibrate(model, y0, stream(config["seed"], CALIB), B=cal["B"],
                                   J=cal["J"], rounds=cal["rounds"], n_outer=cal["n_outer"],
                                   n_inner=cal["n_inner"])
    os.makedirs(out, exist_ok=True)
    _write_data(out, y0)
    _write_text(os.path.join(out, "metric.json"), cfg.dumps(metric.to_dict()))
    save_schedule(os.path.join(out, "schedule.json"), eps)
    print(f"eps0 = {eps[0]:.6g}  epsJ = {eps[-1]:.6g}  "
          f"(pilot empty windows: {pilot.flags['empty_windows']})")
    return metric, eps


def _calibration_for(config, model):
    out = config["out"]
    mpath, spath = os.path.join(out, "metric.json"), os.path.join(out, "schedule.json")
    if os.path.exists(mpath) and os.path.exists(spath):
        metric, eps = Metric.load(mpath), load_schedule(spath)
        if metric.p != model.p:
            raise DomainError(f"{mpath} has p={metric.p}, model {model.name} needs {model.p}")
        return metric, eps
    return cmd_calibrate(config)


def _summary(draws, cpu):
    draws = np.atleast_2d(draws)
    stats = []
    for k in range(draws.shape[1]):
        if draws.shape[0] >= 10:
            tau, ess, per_cpu = act_ess(draws[:, k], cpu)
        else:
            tau = ess = per_cpu = math.nan
        stats.append({"mean": float(draws[:, k].mean()), "ACT": tau, "ESS": ess,
                      "ESS_per_CPU": per_cpu})
    return stats


def cmd_run(config, sampler, kde_curves=False):
    """Run one sampler; write chain.csv, manifest.json and timings.json.

    ``chain.csv`` and ``manifest.json`` depend only on (config, seed).  Wall
    times live in ``timings.json`` so that reruns leave the other files
    byte-identical.
    """
    if sampler not in SAMPLER_DEFAULTS:
        raise UsageError(f"unknown sampler {sampler!r}; choose from "
                         f"{', '.join(sorted(SAMPLER_DEFAULTS))}")
    model = get_model(config["model"])
    out = config["out"]
    params = sampler_config(sampler, config.get("samplers", {}).get(sampler))
    y0 = dataset(config)
    os.makedirs(out, exist_ok=True)
    inputs = {"data.csv": _write_data(out, y0)}
    calibration = None
    if sampler in NEEDS_CALIBRATION:
        calibration = _calibration_for(config, model)
        for name in ("metric.json", "schedule.json"):
            with open(os.path.join(out, name), "rb") as fh:
                inputs[name] = git_hash(fh.read())
    recorded = {k: v for k, v in config.items() if k != "out"}
    inputs["config"] = git_hash(cfg.dumps(recorded).encode())

    draws, cpu, res = run_sampler(sampler, model, y0, params, config["seed"], calibration)
    q = model.q
    names = [f"theta{k + 1}" for k in range(q)]
    lines = []
    if sampler == "smc":
        lines.append(",".join(names + ["discrepancy"]))
        for theta, delta in zip(res.particles, res.discrepancies):
            lines.append(",".join([_num(v) for v in theta] + [_num(delta)]))
        record = {"n_sim": int(res.n_sim), "alive": res.alive, "move_rate": res.move_rate}
        timings = {"cpu_seconds": cpu}
    else:
        lines.append(",".join(names + ["accepted", "eps"]))
        for theta, acc, eps in zip(res.draws, res.accepted, res.eps):
            lines.append(",".join([_num(v) for v in theta] + [str(int(acc)), _num(eps)]))
        record = {"n_sim": int(res.n_sim), "n_sim_setup": int(res.n_sim_setup), "B": res.B,
                  "acceptance_rate": res.acceptance_rate, "adaptations": res.adaptations,
                  "flags": res.flags}
        timings = {"cpu_seconds": cpu, "wall_ns": res.wall_ns.tolist()}
    _write_text(os.path.join(out, "chain.csv"), "\n".join(lines) + "\n")

    stats = _summary(draws, cpu)
    manifest = {
        "model": model.name,
        "sampler": sampler,
        "seed": config["seed"],
        "config": recorded,
        "params": params,
        "inputs": inputs,
        "posterior_mean": [s["mean"] for s in stats],
        "ESS": [s["ESS"] for s in stats],
        **record,
    }
    _write_text(os.path.join(out, "manifest.json"), cfg.dumps(manifest))
    timings["ESS_per_CPU"] = [s["ESS_per_CPU"] for s in stats]
    _write_text(os.path.join(out, "timings.json"), cfg.dumps(timings))
    if kde_curves and draws.shape[0] >= 30:
        for k, name in enumerate(names):
            curve = kde(draws[:, k])
            rows = ["x,density"] + [f"{_num(x)},{_num(d)}"
                                    for x, d in zip(curve.grid, curve.density)]
            _write_text(os.path.join(out, f"kde_{name}.csv"), "\n".join(rows) + "\n")

    print(f"{sampler} on {model.name}: {draws.shape[0]} post-burn-in draws, {cpu:.2f} s")
    if "acceptance_rate" in record:
        print(f"acceptance rate {record['acceptance_rate']:.4f}")
    for name, s in zip(names, stats):
        print(f"  {name}: mean {s['mean']:.4f}  ESS {s['ESS']:.1f}  "
              f"ESS/CPU {s['ESS_per_CPU']:.3f}")
    return res


def write_table(path, rows):
    lines = [",".join(COLUMNS)]
    for row in rows:
        lines.append(",".join([row["sampler"]] + [_num(row[c]) for c in COLUMNS[1:]]))
    _write_text(path, "\n".join(lines) + "\n")


def cmd_replicate(config, threads=1):
    """Replicate study over the configured samplers; writes the table and a manifest.

    Returns the rows and failures.
    """
    samplers = list(config.get("samplers", {}))
    if not samplers:
        raise UsageError("a replicate study needs at least one entry under 'samplers'")
    model = config["model"]
    out = config["out"]
    rows, failures = replicate_study(
        model, samplers, config.get("replicates", 100), config["seed"], n=config.get("n"),
        truth=config.get("truth"), overrides=config.get("samplers"),
        calibration=config.get("calibration"), reference=config.get("reference"),
        threads=threads)
    os.makedirs(out, exist_ok=True)
    write_table(os.path.join(out, f"study_{model}.csv"), rows)
    failed = {}
    for name, r, msg in failures:
        failed.setdefault(name, []).append({"replicate": r, "error": msg})
    recorded = {k: v for k, v in config.items() if k != "out"}
    manifest = {"model": model, "seed": config["seed"], "config": recorded, "failures": failed,
                "inputs": {"config": git_hash(cfg.dumps(recorded).encode())}}
    _write_text(os.path.join(out, f"study_{model}_manifest.json"), cfg.dumps(manifest))
    print(",".join(COLUMNS))
    for row in rows:
        flag = f"  [{len(failed[row['sampler']])} failed]" if row["sampler"] in failed else ""
        print(",".join([row["sampler"]] + [f"{row[c]:.4g}" for c in COLUMNS[1:]]) + flag)
    return rows, failures


def ingest_returns(path):
    """Scaled, mean-centred log returns from a ``date,close`` price CSV.

    Returns
    -------
    ReturnsSeries
        ``dates`` of the second through last prices and
        ``returns = 200 * (r - mean(r))`` with ``r`` the log differences.
    """
    dates, prices = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"date", "close"} <= set(reader.fieldnames):
            raise DomainError(f"{path}: expected columns date, close")
        for row_no, row in enumerate(reader, start=2):
            try:
                dates.append(datetime.date.fromisoformat(row["date"].strip()))
            except ValueError:
                raise DomainError(f"{path}, row {row_no}: cannot parse date "
                                  f"{row['date']!r}") from None
            try:
                price = float(row["close"])
            except ValueError:
                raise DomainError(f"{path}, row {row_no}: cannot parse price "
                                  f"{row['close']!r}") from None
            if not price > 0 or not math.isfinite(price):
                raise DomainError(f"{path}, row {row_no}: price must be positive, got {price}")
            prices.append(price)
    if len(prices) < 2:
        raise DomainError(f"{path}: need at least two prices")
    r = np.diff(np.log(prices))
    return ReturnsSeries(dates[1:], 200.0 * (r - r.mean()))


def cmd_ingest(path, out):
    series = ingest_returns(path)
    os.makedirs(out, exist_ok=True)
    lines = ["date,y"] + [f"{d.isoformat()},{_num(v)}" for d, v in zip(*series)]
    target = os.path.join(out, "returns.csv")
    _write_text(target, "\n".join(lines) + "\n")
    print(f"{len(series.returns)} returns written to {target}")
    return series


# --- entry point --------------------------------------------------------------

def _u64(text):
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON experiment config")
    common.add_argument("--seed", type=_u64, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--threads", type=_positive, help="worker processes (replicate)")
    common.add_argument("--model", choices=sorted(MODELS), help="model name")

    parser = argparse.ArgumentParser(prog="knnabc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("calibrate", parents=[common], help="estimate metric and tolerance schedule")
    run = sub.add_parser("run", parents=[common], help="run one sampler")
    run.add_argument("--sampler", required=True, help="sampler name")
    run.add_argument("--kde", action="store_true", help="also write KDE curves as CSV")
    sub.add_parser("replicate", parents=[common], help="run a replicate study")
    ingest = sub.add_parser("ingest-returns", parents=[common], help="prices to scaled returns")
    ingest.add_argument("prices", help="CSV with columns date, close")
    sub.add_parser("defaults", parents=[common], help="print the default config")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "defaults":
            sys.stdout.write(cfg.dumps(cfg.default_config(args.model or "ma2")))
            return 0
        if args.command == "ingest-returns":
            cmd_ingest(args.prices, args.out or "out")
            return 0
        if args.command == "run" and args.sampler not in SAMPLER_DEFAULTS:
            raise UsageError(f"unknown sampler {args.sampler!r}; choose from "
                             f"{', '.join(sorted(SAMPLER_DEFAULTS))}")
        try:
            base = cfg.load(args.config) if args.config else {}
        except cfg.ConfigError as exc:
            raise UsageError(str(exc)) from None
        config = resolve(base, args.model, args.seed, args.out)
        if args.command == "calibrate":
            cmd_calibrate(config)
        elif args.command == "run":
            cmd_run(config, args.sampler, args.kde)
        else:
            threads = args.threads or config.get("threads", 1)
            cmd_replicate(config, threads)
        return 0
    except UsageError as exc:
        print(f"knnabc: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"knnabc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
