"""Physics-informed neural networks for Yajima-Oikawa rogue waves.

Thin wrapper over the C++ core. Configs are plain dicts with the same keys
as the CLI's JSON config files; a "preset" key picks the base config.
"""

import json
import os

from ._core import (
    NonFiniteError,
    RogueWaveError,
    RWParams,
    bright_params,
    classify,
    dark_params,
    derive_rw_parameters,
    eval_rw,
    intermediate_params,
    parameter_relative_error,
    predict,
    preset_names,
    relative_l2_error,
)
from . import _core

__all__ = [
    "NonFiniteError",
    "RogueWaveError",
    "RWParams",
    "bright_params",
    "classify",
    "dark_params",
    "derive_rw_parameters",
    "eval_rw",
    "intermediate_params",
    "parameter_relative_error",
    "predict",
    "preset",
    "preset_names",
    "relative_l2_error",
    "resolve",
    "run",
    "self_test",
    "sweep",
    "verify",
]


def preset(name):
    """The named preset as a config dict."""
    return json.loads(_core._preset_json(name))


def resolve(config):
    """Validate a (partial) config dict and return the complete config."""
    return json.loads(_core._resolve_json(json.dumps(config)))


def run(config, out_dir):
    """Train one forward or inverse model; returns the run record as a dict."""
    return json.loads(_core._run_json(json.dumps(config), os.fspath(out_dir)))


def sweep(alphas, noises, config, out_dir):
    """Inverse runs over every (noise, alpha) pair; one record per cell."""
    return json.loads(
        _core._sweep_json(list(alphas), list(noises), json.dumps(config), os.fspath(out_dir))
    )


def verify():
    return _core.exact_solution_suite()


def self_test():
    return _core.property_suite()
