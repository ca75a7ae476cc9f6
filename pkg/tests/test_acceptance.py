"""Acceptance criteria, one test per criterion, one printed line per result.

Run with `pytest tests/test_acceptance.py -v -s`. Criteria 7-9 share one
full default-config pipeline run (the `pipeline_run` session fixture);
criterion 9 performs a second run to compare reports.
"""

import dataclasses
import json
import time

import numpy as np
import pytest

from flowgad.config import load_config
from flowgad.graphs import build_snapshot, fit_feature_stats, standardize
from flowgad.metrics import pr_auc, roc_auc, tpr_at_fpr
from flowgad.model import ModelDims, forward, init_params, jitter_params
from flowgad.pipeline import run_all
from flowgad.scoring import (
    CalibrationStats,
    RawEdgeScores,
    aggregate_operator,
    calibrate,
    fit_calibration,
    inference_mask_groups,
    robust_z,
    score_edges,
)
from flowgad.training import gradient_check, masked_losses, sample_mask

from conftest import random_batch
from test_metrics import brute_ap, brute_roc, brute_tpr_at_fpr


def _ok(criterion: int, message: str) -> None:
    print(f"\nACCEPTANCE CRITERION {criterion}: PASS - {message}")


def test_criterion_1_metric_oracle_equivalence():
    rng = np.random.default_rng(1001)
    start = time.perf_counter()
    checked = 0
    while checked < 500:
        n = int(rng.integers(2, 13))
        labels = rng.random(n) < rng.uniform(0.2, 0.8)
        if labels.all() or not labels.any():
            continue
        if rng.random() < 0.4:  # deliberate ties
            scores = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0], size=n)
        else:
            scores = rng.normal(size=n)
        s, l = scores.tolist(), labels.tolist()
        assert roc_auc(scores, labels) == brute_roc(s, l)
        assert pr_auc(scores, labels) == brute_ap(s, l)
        for budget in (0.01, 0.05):
            assert tpr_at_fpr(scores, labels, budget) == brute_tpr_at_fpr(s, l, budget)
        checked += 1
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    _ok(1, f"3 metrics match brute-force oracles exactly on 500 inputs ({elapsed:.1f}s)")


def test_criterion_2_gradient_correctness(toy_snapshot):
    assert toy_snapshot.n_hosts == 8
    start = time.perf_counter()
    params = jitter_params(init_params(ModelDims(), seed=1), seed=2)
    mask = sample_mask(toy_snapshot.n_edges, 0.2, np.random.default_rng(0))
    err = gradient_check(params, toy_snapshot, mask, seed=3)
    assert err <= 1e-4, f"gradient check failed: {err:.3e}"

    def corrupt(grads):
        grads["reg_w2"] = grads["reg_w2"] * 1.5
        return grads

    err_bad = gradient_check(params, toy_snapshot, mask, seed=3, corrupt=corrupt)
    assert err_bad >= 1e-2, f"mutation not detected: {err_bad:.3e}"
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    _ok(2, f"max rel error {err:.2e} <= 1e-4; mutation flagged at {err_bad:.2e} ({elapsed:.1f}s)")


def test_criterion_3_masking_contracts(toy_snapshot):
    params = jitter_params(init_params(ModelDims(), seed=4), seed=5)
    mask = sample_mask(toy_snapshot.n_edges, 0.2, np.random.default_rng(1))
    unmasked = np.setdiff1d(np.arange(toy_snapshot.n_edges), mask)

    # (a) loss invariant to unmasked-edge target changes, exactly.
    state = forward(params, toy_snapshot, mask=mask)
    base = masked_losses(
        state.y_reg, state.logits, toy_snapshot.edge_targets_reg,
        toy_snapshot.edge_targets_cls, mask,
    )
    tampered_reg = toy_snapshot.edge_targets_reg.copy()
    tampered_reg[unmasked] += 1e6
    tampered_cls = toy_snapshot.edge_targets_cls.copy()
    tampered_cls[unmasked] = (tampered_cls[unmasked] + 1) % 3
    after = masked_losses(state.y_reg, state.logits, tampered_reg, tampered_cls, mask)
    assert base == after

    # (b) outputs invariant to masked-edge attribute perturbation, exactly.
    perturbed = dataclasses.replace(
        toy_snapshot,
        edge_features=toy_snapshot.edge_features
        + np.random.default_rng(2).normal(size=toy_snapshot.edge_features.shape)
        * np.isin(np.arange(toy_snapshot.n_edges), mask)[:, None],
    )
    state_p = forward(params, perturbed, mask=mask)
    assert np.array_equal(state.y_reg, state_p.y_reg)
    assert np.array_equal(state.logits, state_p.logits)

    # (c) the inference partition masks every edge exactly once.
    for m in (1, 3, 5, 26, 97):
        groups = inference_mask_groups(m, 0.2, np.random.default_rng(3))
        assert np.array_equal(np.sort(np.concatenate(groups)), np.arange(m))
    _ok(3, "loss locality, masked-attribute independence, exact-once partition")


def test_criterion_4_calibration_properties(tiny_benign_snapshots):
    # Bounded z everywhere, including degenerate MAD.
    rng = np.random.default_rng(6)
    for _ in range(200):
        values = rng.normal(0, rng.uniform(0.01, 100), size=50)
        med = float(rng.normal())
        mad = float(rng.uniform(0, 2))
        z = robust_z(values, med, mad, tau_mad=1e-3, tau_clip=10.0)
        assert np.all(np.abs(z) <= 10.0)

    # Benign-train calibrated z_reg has median 0 within 1e-9.
    params = jitter_params(init_params(ModelDims(hidden=16), seed=7), seed=8)
    snaps = tiny_benign_snapshots[:5]
    stats = fit_calibration(snaps, params, seed=9)
    pooled = np.concatenate([score_edges(s, params, seed=9).s_reg for s in snaps])
    z = robust_z(pooled, stats.med_reg, stats.mad_reg, stats.tau_mad, stats.tau_clip)
    assert abs(float(np.median(z))) <= 1e-9

    # Worked example: med=3, mad=1, z(100) clipped to 10 with the shared constants.
    example = CalibrationStats(
        med_reg=3.0, mad_reg=1.0, med_cls=0.0, mad_cls=1.0,
        tau_mad=1e-3, tau_clip=10.0, alpha=1.0,
    )
    raw = RawEdgeScores(s_reg=np.array([1.0, 2.0, 3.0, 4.0, 100.0]), s_cls=np.zeros(5))
    combined = calibrate(raw, example)
    assert combined.tolist() == [-2.0, -1.0, 0.0, 1.0, 10.0]
    _ok(4, "z bounded by clip; benign median 0 within 1e-9; worked example exact")


def test_criterion_5_aggregation_properties():
    rng = np.random.default_rng(10)
    for _ in range(1000):
        m = int(rng.integers(1, 60))
        values = rng.normal(0, rng.uniform(0.1, 5), size=m) * rng.choice(
            [1.0, 0.2], size=m
        )
        mean = aggregate_operator(values, "mean")
        mx = aggregate_operator(values, "max")
        q90 = aggregate_operator(values, "q90")
        topk = aggregate_operator(values, "topk_mean")
        assert mx >= q90 - 1e-12 and mx >= mean - 1e-12 and mx >= topk - 1e-12
        assert topk >= mean - 1e-12

    values = np.array([2.0, 4.0, 2.0])  # out {2,4} at 1.0, in {10} at 0.2
    assert aggregate_operator(values, "mean") == 8.0 / 3.0
    assert aggregate_operator(values, "max") == 4.0
    assert aggregate_operator(values, "q90") == pytest.approx(3.6, abs=1e-12)
    assert aggregate_operator(values, "topk_mean") == 4.0
    _ok(5, "operator dominance on 1000 random multisets; worked example exact")


def test_criterion_6_graph_conservation_and_equivariance():
    rng = np.random.default_rng(11)
    params = jitter_params(init_params(ModelDims(hidden=32), seed=12), seed=13)
    for trial in range(100):
        n_hosts = int(rng.integers(3, 10))
        n_flows = int(rng.integers(1, 80))
        batch = random_batch(rng, n_hosts=n_hosts, n_flows=n_flows)
        snap = build_snapshot(batch, "benign")
        recovered = float(np.expm1(snap.edge_features[:, 0]).sum())
        assert recovered == pytest.approx(n_flows, rel=1e-6)

        if trial % 10 == 0:
            std = standardize([snap], fit_feature_stats([snap]))[0]
            perm = rng.permutation(std.n_hosts)
            inv = np.argsort(perm)
            permuted = dataclasses.replace(
                std,
                hosts=tuple(std.hosts[i] for i in perm),
                edges=inv[std.edges],
                node_features=std.node_features[perm],
                node_labels=std.node_labels[perm],
            )
            base = forward(params, std)
            out = forward(params, permuted)
            np.testing.assert_allclose(out.y_reg, base.y_reg, atol=1e-5)
            np.testing.assert_allclose(out.logits, base.logits, atol=1e-5)
            np.testing.assert_allclose(out.z, base.z[perm], atol=1e-5)
    _ok(6, "flow-count conservation within 1e-6 on 100 windows; equivariance within 1e-5")


def test_criterion_7_synthetic_end_to_end_gate(pipeline_run):
    reports = pipeline_run["summary"]["reports"]
    model = reports["model"]
    iforest = reports["iforest"]
    assert model["aggregation"] == "q90" and model["calibrated"] is True
    assert model["roc_auc"] >= 0.85, model
    assert model["tpr_at_fpr"]["0.05"] >= 0.60, model
    assert model["roc_auc"] > iforest["roc_auc"]
    assert pipeline_run["elapsed"] <= 600.0
    _ok(
        7,
        f"ROC-AUC {model['roc_auc']:.4f} >= 0.85, TPR@5%FPR "
        f"{model['tpr_at_fpr']['0.05']:.4f} >= 0.60, beats Isolation Forest "
        f"({iforest['roc_auc']:.4f}) in {pipeline_run['elapsed']:.0f}s",
    )


def test_criterion_8_calibration_ablation_directionality(pipeline_run):
    reports = pipeline_run["summary"]["reports"]
    calibrated = reports["model"]["roc_auc"]
    raw = reports["model_raw"]["roc_auc"]
    assert calibrated >= raw, (calibrated, raw)
    _ok(8, f"calibrated ROC-AUC {calibrated:.4f} >= raw {raw:.4f} on identical raw scores")


def test_criterion_9_determinism(pipeline_run, tmp_path):
    config = load_config(None, {"out_dir": str(tmp_path)})
    assert config.fingerprint() == pipeline_run["config"].fingerprint()
    summary = run_all(config, tmp_path, log=lambda *a: None)
    assert summary["reports"] == pipeline_run["summary"]["reports"]
    a = (pipeline_run["out"] / "report_model_q90_cal.json").read_bytes()
    b = (tmp_path / "report_model_q90_cal.json").read_bytes()
    assert a == b
    a = json.loads((pipeline_run["out"] / "run_summary.json").read_text())
    b = json.loads((tmp_path / "run_summary.json").read_text())
    assert a == b
    _ok(9, "two same-seed runs produce identical evaluation reports")


@pytest.mark.skip(
    reason="optional, non-gating: requires the multi-GB CICIDS2017 download; "
    "see README 'Reproducing the published evaluation' for the preset and the "
    "reference operating band (node-level ROC-AUC 0.9753 +/- 0.05, TPR@5%FPR "
    "0.8569 +/- 0.10 with q90 aggregation)"
)
def test_criterion_10_cicids2017_reproduction():
    pass
