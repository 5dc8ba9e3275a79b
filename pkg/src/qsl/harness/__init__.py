"""Experiment harness: configuration, decay fits, calibration, registry,
reports and the ``qsl`` command line.

Only the fitting helpers load eagerly; the core modules use them, so the
rest of the harness (which imports the core modules) loads on first use.
"""

import importlib

from .fitting import DecayFit, DecayOrderRegressor, fit_decay_order

_LAZY = {
    "CalibrationRecord": "calibration", "ConstantCalibrator": "calibration", "calibrate_constants": "calibration",
    "ExperimentConfig": "config", "SuiteConfig": "config", "load_config": "config", "parse_config": "config",
    "CLAIMS": "experiments", "REGISTRY": "experiments", "Experiment": "experiments",
    "ExperimentResult": "experiments", "Verdict": "experiments", "get_experiment": "experiments",
    "SuiteResult": "suite", "emit_report": "suite", "run_suite": "suite",
}

__all__ = ["DecayFit", "DecayOrderRegressor", "fit_decay_order", *_LAZY]


def __getattr__(name):
    if name in _LAZY:
        return getattr(importlib.import_module(f".{_LAZY[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
