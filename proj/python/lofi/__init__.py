# Copyright 2026 The lofi Authors
# SPDX-License-Identifier: Apache-2.0
"""Python access to the lofi simulator."""

import json

from . import _lofi
from ._lofi import (
    ConfigError,
    NumericalError,
    mcnemar_exact,
    overhead_percent,
    uniform_average,
    wise_ft,
)

__all__ = [
    "ConfigError",
    "NumericalError",
    "barrier_scan",
    "config_hash",
    "cost_grid",
    "ema",
    "init_params",
    "loss_and_grad",
    "mcnemar_exact",
    "overhead_percent",
    "run_experiment",
    "run_sweep",
    "simulate_iteration",
    "uniform_average",
    "verify_equivalence",
    "wise_ft",
]


def _text(value):
    return value if isinstance(value, str) else json.dumps(value)


def config_hash(config):
    return _lofi.config_hash(_text(config))


def simulate_iteration(profile, overlap, sync=True):
    return _lofi.simulate_iteration(_text(profile), overlap, sync)


def cost_grid(study):
    """Rows of the cost grid as dicts with typed values."""
    lines = _lofi.cost_grid(_text(study)).strip().split("\n")
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        row = dict(zip(header, line.split(",")))
        row["overlap"] = row["overlap"] == "true"
        for key in ("batch_factor", "seconds", "overhead_percent"):
            row[key] = float(row[key])
        rows.append(row)
    return rows


def ema(stream, decay):
    """Returns (accum, debiased) after feeding every vector of `stream`."""
    return _lofi.ema([list(v) for v in stream], decay)


def init_params(network, seed):
    return _lofi.init_params(_text(network), seed)


def loss_and_grad(network, params, inputs, labels):
    return _lofi.loss_and_grad(_text(network), list(params), [list(r) for r in inputs], list(labels))


def run_experiment(config, out_root, force=False, sequential=False):
    """Returns (artifact_dir, reused, summary)."""
    path, reused, summary = _lofi.run_experiment(_text(config), str(out_root), force, sequential)
    return path, reused, json.loads(summary)


def verify_equivalence(config, out_root):
    return [
        {"name": name, "identical": same, "detail": detail}
        for name, same, detail in _lofi.verify_equivalence(_text(config), str(out_root))
    ]


def barrier_scan(config, out_root):
    return _lofi.barrier_scan(_text(config), str(out_root))


def run_sweep(config, axis, out_root):
    return _lofi.run_sweep(_text(config), axis, str(out_root))
