"""Experiment configuration: JSON schema, defaults and validation."""

import copy
import json

import jsonschema

from .models import MODELS
from .samplers import SamplerConfig
from .study import CALIBRATION_DEFAULTS, SAMPLER_DEFAULTS

PF_PARTICLES = 100
SMC_PARTICLES = 500


class ConfigError(ValueError):
    """A configuration that fails the schema or a cross-field check."""


_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG_INT = {"type": "integer", "minimum": 0}

SAMPLER_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "M": _POS_INT,
        "B": _NONNEG_INT,
        "m": {"type": "integer", "minimum": 2},
        "N0": _POS_INT,
        "J": _POS_INT,
        "c": {"type": "number", "exclusiveMinimum": 0},
        "scheme": {"enum": ["uniform", "linear"]},
        "max_init": _POS_INT,
        "particles": _POS_INT,
        "max_moves": _POS_INT,
        "P": _POS_INT,
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": {"enum": sorted(MODELS)},
        "n": {"type": "integer", "minimum": 3},
        "truth": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "data": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "out": {"type": "string"},
        "replicates": {"type": "integer", "minimum": 2},
        "threads": _POS_INT,
        "reference": {"enum": sorted(SAMPLER_DEFAULTS)},
        "samplers": {
            "type": "object",
            "propertyNames": {"enum": sorted(SAMPLER_DEFAULTS)},
            "additionalProperties": SAMPLER_SCHEMA,
        },
        "calibration": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rounds": _POS_INT,
                "n_outer": {"type": "integer", "minimum": 2},
                "n_inner": {"type": "integer", "minimum": 2},
                "B": _POS_INT,
                "J": _POS_INT,
            },
        },
    },
}


def default_config(model="ma2"):
    """Default run settings for every sampler, as a config document."""
    samplers = copy.deepcopy(SAMPLER_DEFAULTS)
    for name, params in samplers.items():
        family = name.split("-")[0]
        if family in ("abc", "aabc", "bsl", "absl"):
            kind = "is" if family in ("aabc", "absl") else name.split("-")[1]
            params["c"] = SamplerConfig().scale(kind, MODELS[model]().q,
                                                "bsl" if "bsl" in family else "abc")
    samplers["smc"]["particles"] = SMC_PARTICLES
    samplers["pmcmc"]["P"] = PF_PARTICLES
    return {
        "model": model,
        "seed": 0,
        "out": "out",
        "replicates": 100,
        "threads": 1,
        "calibration": dict(CALIBRATION_DEFAULTS),
        "samplers": samplers,
    }


def validate(config):
    """Check ``config`` against the schema and the cross-field rules.

    Raises
    ------
    ConfigError
        With every problem found, before any computation starts.
    """
    validator = jsonschema.Draft202012Validator(SCHEMA)
    problems = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}"
                for e in sorted(validator.iter_errors(config), key=lambda e: list(e.path))]
    if not problems:
        model = MODELS[config["model"]]()
        if "truth" in config and len(config["truth"]) != model.q:
            problems.append(f"truth: {config['model']} has {model.q} parameters, "
                            f"got {len(config['truth'])}")
        if "truth" in config and "data" in config:
            problems.append("give either truth or data, not both")
        for name, params in config.get("samplers", {}).items():
            merged = dict(SAMPLER_DEFAULTS[name], **params)
            if "M" in merged and not merged["B"] < merged["M"]:
                problems.append(f"samplers/{name}: need B < M, got B={merged['B']}, "
                                f"M={merged['M']}")
        if config.get("reference") == "exact" and config["model"] != "ma2":
            problems.append("reference: the exact sampler exists only for ma2")
    if problems:
        raise ConfigError("invalid config:\n  " + "\n  ".join(problems))
    return config


def load(path):
    """Read and validate a JSON config file."""
    try:
        with open(path) as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return validate(config)


def dumps(obj):
    """Canonical JSON text, so identical content gives identical bytes."""
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
