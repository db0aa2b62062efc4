# Copyright 2026 The lofi Authors
# SPDX-License-Identifier: Apache-2.0

import json
import pathlib

import pytest

import lofi

ROOT = pathlib.Path(__file__).resolve().parents[2]


def smoke_config():
    return json.loads((ROOT / "configs" / "smoke.json").read_text())


def test_mcnemar_example():
    assert lofi.mcnemar_exact(0, 10, 2, 0) == pytest.approx(158 / 4096, abs=1e-12)
    assert lofi.mcnemar_exact(3, 0, 0, 4) == 1.0


def test_ema_scalar_example():
    accum, debiased = lofi.ema([[1.0], [2.0]], 0.9)
    # the first vector seeds the shape; both are fed
    assert accum[0] == pytest.approx(0.29, abs=1e-12)
    assert debiased[0] == pytest.approx(0.29 / 0.19, abs=1e-12)


def test_wise_ft_and_average():
    assert lofi.wise_ft([0.0, 2.0], [2.0, 4.0], 0.5) == [1.0, 3.0]
    assert lofi.wise_ft([0.1, 0.2], [5.0, 6.0], 0.0) == [0.1, 0.2]
    assert lofi.uniform_average([[1.0, 3.0], [3.0, 5.0]]) == [2.0, 4.0]


def test_cost_model():
    profile = {"layers": [{"backward_seconds": 1, "gradient_bytes": 1}] * 2, "bandwidth": 1}
    assert lofi.simulate_iteration(profile, overlap=False) == 4.0
    assert lofi.simulate_iteration(profile, overlap=True) == 3.0
    assert lofi.overhead_percent(4.0, 3.0) == pytest.approx(100 / 3)
    rows = lofi.cost_grid(json.loads((ROOT / "profiles" / "calibration.json").read_text()))
    assert {r["strategy"] for r in rows} == {"full_sync", "independent"}


def test_gradient_matches_finite_difference():
    net = {"input_dim": 3, "hidden_dim": 4, "num_blocks": 1, "num_classes": 3}
    params = lofi.init_params(net, 5)
    inputs = [[0.3, -1.0, 0.5], [1.2, 0.1, -0.4]]
    labels = [0, 2]
    loss, grad = lofi.loss_and_grad(net, params, inputs, labels)
    h = 1e-6
    for i in (0, len(params) // 2, len(params) - 1):
        up = list(params)
        down = list(params)
        up[i] += h
        down[i] -= h
        fd = (lofi.loss_and_grad(net, up, inputs, labels)[0] - lofi.loss_and_grad(net, down, inputs, labels)[0]) / (2 * h)
        assert grad[i] == pytest.approx(fd, rel=1e-5, abs=1e-8)
    assert loss > 0


def test_config_errors_name_the_field():
    config = smoke_config()
    config["train"]["lr_base"] = -1
    with pytest.raises(lofi.ConfigError, match="train.lr_base"):
        lofi.config_hash(config)


def test_run_is_deterministic_and_reused(tmp_path):
    config = smoke_config()
    path, reused, summary = lofi.run_experiment(config, tmp_path / "a")
    assert not reused
    assert pathlib.Path(path, "summary.csv").exists()
    rows = {(r["row"], r["split"], r["metric"]): r["mean"] for r in summary["aggregate"]}
    assert 0.0 <= rows[("lofi", "test_id", "accuracy")] <= 1.0
    _, reused_again, _ = lofi.run_experiment(config, tmp_path / "a")
    assert reused_again
    path_b, _, summary_b = lofi.run_experiment(config, tmp_path / "b", sequential=True)
    assert summary_b == summary
    assert pathlib.Path(path).name == pathlib.Path(path_b).name == lofi.config_hash(config)


def test_equivalences_hold(tmp_path):
    checks = lofi.verify_equivalence(smoke_config(), tmp_path)
    assert checks
    assert all(c["identical"] for c in checks), checks


def test_barrier_scan_writes_report(tmp_path):
    out = pathlib.Path(lofi.barrier_scan(smoke_config(), tmp_path))
    report = json.loads((out / "barrier.json").read_text())
    assert len(report["seeds"]) == 2
