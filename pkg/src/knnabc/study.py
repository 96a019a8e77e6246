"""Sampler registry and the multi-replicate comparison study."""

import zlib
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .calibration import calibrate
from .diagnostics import COLUMNS, compare_stats
from .models import MA2, get_model
from .rng import DATA, stream
from .samplers import (AdaptationPlan, SamplerConfig, run_aabc, run_abc_mcmc_m, run_abc_smc,
                       run_absl, run_bsl, run_exact_ma2, run_pmcmc)

ABC_RUN = {"M": 50_000, "B": 10_000, "J": 15}
BSL_RUN = {"M": 10_000, "B": 2_000, "J": 15, "m": 50}

SAMPLER_DEFAULTS = {
    "abc-rw": dict(ABC_RUN),
    "abc-is": dict(ABC_RUN),
    "aabc-u": dict(ABC_RUN, N0=500),
    "aabc-l": dict(ABC_RUN, N0=500),
    "bsl-rw": dict(BSL_RUN),
    "bsl-is": dict(BSL_RUN),
    "absl-u": dict(ABC_RUN, m=50, N0=500),
    "absl-l": dict(ABC_RUN, m=50, N0=500),
    "smc": {"particles": 500, "max_moves": 1},
    "exact": {"M": 5_000, "B": 2_000, "J": 15},
    "pmcmc": {"M": 5_000, "B": 2_000, "J": 15, "P": 100},
}

CALIBRATION_DEFAULTS = {"rounds": 3, "n_outer": 500, "n_inner": 100, "B": 10_000, "J": 15}

NEEDS_CALIBRATION = {"abc-rw", "abc-is", "aabc-u", "aabc-l", "smc"}


def derive_seed(seed, *labels):
    """Deterministic 64-bit seed for a labelled cell of a study."""
    key = tuple(zlib.crc32(str(label).encode()) for label in labels)
    return int(np.random.SeedSequence(int(seed), spawn_key=key).generate_state(1, np.uint64)[0])


def sampler_config(name, overrides=None):
    if name not in SAMPLER_DEFAULTS:
        raise KeyError(name)
    params = dict(SAMPLER_DEFAULTS[name])
    params.update(overrides or {})
    return params


def run_sampler(name, model, y0, params, seed, calibration=None):
    """Run one registered sampler.

    Returns
    -------
    draws : ndarray
        Post-burn-in draws (particles for SMC).
    cpu : float
        Wall-clock seconds of the sampling loop.
    output : ChainOutput or SmcOutput
    """
    params = dict(params)
    if name in NEEDS_CALIBRATION and calibration is None:
        raise ValueError(f"sampler {name!r} needs a metric and tolerance schedule")
    if name == "smc":
        metric, schedule = calibration
        res = run_abc_smc(model, y0, metric, schedule, seed, n_particles=params["particles"],
                          max_moves=params["max_moves"])
        return res.particles, res.cpu_seconds, res
    keys = ("M", "B", "m", "N0", "J", "c", "scheme", "max_init")
    config = SamplerConfig(**{k: params[k] for k in keys if k in params})
    family, _, variant = name.partition("-")
    if family in ("abc", "aabc"):
        metric, schedule = calibration
        plan = AdaptationPlan(config.B, len(schedule) - 1)
        if family == "abc":
            out = run_abc_mcmc_m(model, y0, metric, schedule, plan, variant, config, seed)
        else:
            config.scheme = "uniform" if variant == "u" else "linear"
            out = run_aabc(model, y0, metric, schedule, plan, config, seed)
    elif family == "bsl":
        out = run_bsl(model, y0, variant, config, seed)
    elif family == "absl":
        config.scheme = "uniform" if variant == "u" else "linear"
        out = run_absl(model, y0, config, seed)
    elif name == "exact":
        if not isinstance(model, MA2):
            raise ValueError("the exact sampler exists only for MA2")
        out = run_exact_ma2(y0, config, seed)
    elif name == "pmcmc":
        out = run_pmcmc(model, y0, config, seed, P=params.get("P", 100))
    else:
        raise KeyError(name)
    out.name = name
    return out.post_burn, out.cpu_seconds, out


def _cell(args):
    name, model_name, y0, params, seed, calibration = args
    model = get_model(model_name)
    try:
        draws, cpu, _ = run_sampler(name, model, y0, params, seed, calibration)
        return draws, cpu, None
    except Exception as exc:  # a failed cell is reported, the study goes on
        return None, None, f"{type(exc).__name__}: {exc}"


def run_cells(model_name, samplers, R, seed, n=None, truth=None, overrides=None,
              calibration=None, reference=None, threads=1):
    """Simulate ``R`` datasets and run every sampler on each.

    Returns
    -------
    results : dict
        Sampler name to a list of ``R`` tuples ``(draws, cpu, error)``; a
        failed cell has ``draws=None`` and the error message.  The reference
        sampler is included.
    truth : ndarray
    reference : str or None
    """
    if R < 2:
        raise ValueError("a replicate study needs R >= 2")
    model = get_model(model_name)
    n = model.n_default if n is None else int(n)
    truth = model.truth if truth is None else np.asarray(truth, dtype=float)
    overrides = overrides or {}
    cal = dict(CALIBRATION_DEFAULTS, **(calibration or {}))
    if reference is None and model_name == "ma2":
        reference = "exact"
    names = list(samplers)
    if reference is not None and reference not in names:
        names.append(reference)
    params = {name: sampler_config(name, overrides.get(name)) for name in names}

    datasets, calibrations = [], []
    for r in range(R):
        y0 = model.simulate(truth, n, stream(derive_seed(seed, model_name, "data", r), DATA))
        datasets.append(y0)
        if NEEDS_CALIBRATION.intersection(names):
            metric, schedule, _ = calibrate(
                model, y0, derive_seed(seed, model_name, "calibration", r), B=cal["B"],
                J=cal["J"], rounds=cal["rounds"], n_outer=cal["n_outer"], n_inner=cal["n_inner"])
            calibrations.append((metric, schedule))
        else:
            calibrations.append(None)

    cells = [(name, model_name, datasets[r], params[name],
              derive_seed(seed, model_name, name, r), calibrations[r])
             for name in names for r in range(R)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_cell, cells))
    else:
        results = [_cell(cell) for cell in cells]
    by_name = {name: results[i * R:(i + 1) * R] for i, name in enumerate(names)}
    return by_name, truth, reference


def aggregate(by_name, samplers, truth, reference=None):
    """One metrics row per sampler from per-replicate results.

    Replicates where the sampler (or the reference) failed are left out; a
    sampler with fewer than two usable replicates gets a row of NaN.
    """
    ref = by_name.get(reference)
    rows = []
    for name in samplers:
        ok = [r for r, (draws, _, _) in enumerate(by_name[name])
              if draws is not None and (ref is None or ref[r][0] is not None)]
        row = {"sampler": name}
        if len(ok) >= 2:
            approx = [by_name[name][r][0] for r in ok]
            exact = [ref[r][0] for r in ok] if ref is not None and name != reference else None
            cpu = [by_name[name][r][1] for r in ok]
            row.update(compare_stats(approx, exact, truth, cpu))
            if name == reference:
                row.update(DIM=0.0, DIC=0.0, TV=0.0)
        else:
            row.update(dict.fromkeys(COLUMNS[1:], float("nan")))
        rows.append(row)
    return rows


def replicate_study(model_name, samplers, R, seed, n=None, truth=None, overrides=None,
                    calibration=None, reference=None, threads=1):
    """Run every sampler on ``R`` datasets simulated at ``truth``.

    Parameters
    ----------
    model_name : str
    samplers : list of str
    R : int
        Number of replicate datasets (>= 2).
    seed : int
        Master seed; each (dataset, sampler) cell gets a derived seed.
    overrides : dict, optional
        Per-sampler parameter overrides.
    calibration : dict, optional
        Overrides for the metric/tolerance calibration.
    reference : str, optional
        Sampler whose draws stand in for the exact posterior in DIM/DIC/TV;
        defaults to ``exact`` for MA2 and none otherwise.
    threads : int
        Worker processes for the cells.

    Returns
    -------
    rows : list of dict
        One per sampler, keyed by ``COLUMNS``.
    failures : list of (sampler, replicate, message)
    """
    by_name, truth, reference = run_cells(model_name, samplers, R, seed, n, truth, overrides,
                                          calibration, reference, threads)
    failures = [(name, r, msg) for name, cells in by_name.items()
                for r, (_, _, msg) in enumerate(cells) if msg is not None]
    return aggregate(by_name, samplers, truth, reference), failures
