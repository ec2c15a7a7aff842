"""PWRD aggregation of per-group ITT estimates, comparators and power simulation."""

import json

from ._pwrd import (
    Panel,
    PwrdError,
    aggregate_external,
    aggregate_test,
    analyze,
    flat_weights,
    pitman_relative_efficiency,
    pwrd_weights,
    test_slope,
)
from . import _pwrd

__all__ = [
    "Panel",
    "PwrdError",
    "aggregate_external",
    "aggregate_test",
    "analyze",
    "default_scenario",
    "estimate_power",
    "expected_year_proportions",
    "flat_weights",
    "icc_sweep",
    "negative_effect_sweep",
    "pitman_relative_efficiency",
    "pwrd_weights",
    "read_panel",
    "simulate",
    "test_slope",
]

METHODS = ("pwrd", "flat", "mixed", "exit")


def _scenario_text(scenario):
    if scenario is None:
        return ""
    if isinstance(scenario, str):
        return scenario
    return json.dumps(scenario)


def default_scenario():
    """Default 52-cluster layout as a dict, with thresholds calibrated."""
    return json.loads(_pwrd.default_scenario())


def read_panel(path, schema=None):
    with open(path) as f:
        text = f.read()
    if schema is not None and not isinstance(schema, str):
        schema = json.dumps(schema)
    return Panel.from_csv(text, schema or "")


def simulate(scenario=None, replicate=0, with_effect=True):
    return _pwrd.simulate(_scenario_text(scenario), replicate, with_effect)


def expected_year_proportions(scenario=None):
    return _pwrd.expected_year_proportions(_scenario_text(scenario))


def estimate_power(scenario=None, grid=(0.0,), methods=METHODS, n_reps=1000, alpha=0.05, workers=1):
    """Returns (rows, warnings); rows are dicts in long format."""
    return _pwrd.estimate_power(_scenario_text(scenario), list(grid), list(methods), n_reps, alpha, workers)


def icc_sweep(scenario=None, iccs=(0.05, 0.1, 0.15, 0.2, 0.25), methods=METHODS, n_reps=1000, alpha=0.05,
              workers=1):
    return _pwrd.icc_sweep(_scenario_text(scenario), list(iccs), list(methods), n_reps, alpha, workers)


def negative_effect_sweep(scenario=None, tau=5.0, ps=(0.0, 0.2, 0.4, 0.6, 0.8, 1.0), methods=METHODS,
                          n_reps=1000, alpha=0.05, workers=1):
    return _pwrd.negative_effect_sweep(_scenario_text(scenario), tau, list(ps), list(methods), n_reps, alpha,
                                       workers)
