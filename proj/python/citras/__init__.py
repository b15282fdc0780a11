"""Covariate-aware patch transformer for time series forecasting."""

import json
import os

from . import _citras
from ._citras import (
    AlignmentError,
    CheckpointError,
    ConfigError,
    ContractError,
    DivisibilityError,
    Error,
    UnsupportedError,
    Window,
)

__all__ = [
    "AlignmentError",
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DivisibilityError",
    "Error",
    "Model",
    "UnsupportedError",
    "Window",
    "complexity_probe",
    "experiment_windows",
    "parse_config",
    "run_cli",
]


def _dump(obj):
    return "" if obj is None else json.dumps(obj)


class Model:
    """Model parameters plus configuration."""

    def __init__(self, config=None, seed=2021, _impl=None):
        self._impl = _impl if _impl is not None else _citras.Model(_dump(config), seed)

    @classmethod
    def load(cls, path):
        return cls(_impl=_citras.Model.load(os.fspath(path)))

    def save(self, path, dtype="f64"):
        self._impl.save(os.fspath(path), dtype)

    @property
    def config(self):
        return json.loads(self._impl.config_json)

    @property
    def parameter_count(self):
        return self._impl.parameter_count

    def forward(self, window):
        """Next-patch predictions indexed [step][target][position]."""
        return self._impl.forward(window)

    def forecast(self, window, horizon):
        """Rolling forecast; returns (predictions per target, iterations)."""
        return self._impl.forecast(window, horizon)

    def evaluate(self, windows, horizons, threads=1):
        return json.loads(self._impl.evaluate(list(windows), list(horizons), threads))

    def fit(self, train, val, train_config=None, threads=1):
        return json.loads(self._impl.fit(list(train), list(val), _dump(train_config), threads))

    def attention_csv(self, window):
        return self._impl.attention_csv(window)


def experiment_windows(run_config, base_dir=""):
    """Train, validation and test windows for a run configuration dict."""
    return _citras.experiment_windows(json.dumps(run_config), os.fspath(base_dir))


def complexity_probe(config, variates, steps):
    return json.loads(_citras.complexity_probe(_dump(config), list(variates), list(steps)))


def parse_config(path):
    return json.loads(_citras.parse_config(os.fspath(path)))


def run_cli(args):
    return _citras.run_cli([str(a) for a in args])
