"""on-disk artifact round-trips and lineage guards."""

import numpy as np
import pytest

from flowgad.artifacts import (
    load_checkpoint,
    load_edge_scores,
    load_host_rows,
    load_snapshots,
    save_checkpoint,
    save_edge_scores,
    save_host_rows,
    save_snapshots,
)
from flowgad.errors import ArtifactError
from flowgad.graphs import FeatureStats, build_snapshot
from flowgad.model import ModelDims, init_params
from flowgad.scoring import CalibrationStats, HostRow, RawEdgeScores

from conftest import random_batch


@pytest.fixture()
def snaps():
    rng = np.random.default_rng(0)
    return [build_snapshot(random_batch(rng), "benign") for _ in range(3)]


def test_snapshots_round_trip_bit_exact(tmp_path, snaps):
    path = tmp_path / "snapshots.npz"
    save_snapshots(path, snaps, meta={"fingerprint": "f1", "feature_layout_version": "v"})
    loaded, meta = load_snapshots(path)
    assert meta["fingerprint"] == "f1" and meta["count"] == 3
    for a, b in zip(snaps, loaded):
        assert a.hosts == b.hosts
        assert np.array_equal(a.edges, b.edges)
        assert np.array_equal(a.node_features, b.node_features)
        assert np.array_equal(a.edge_features, b.edge_features)
        assert np.array_equal(a.edge_targets_reg, b.edge_targets_reg)
        assert np.array_equal(a.edge_targets_cls, b.edge_targets_cls)
        assert np.array_equal(a.node_labels, b.node_labels)
        assert a.graph_label == b.graph_label
        assert (a.window_index, a.t_start, a.t_end) == (b.window_index, b.t_start, b.t_end)


def test_checkpoint_round_trip(tmp_path):
    params = init_params(ModelDims(hidden=16), seed=4)
    stats = FeatureStats(mean=np.arange(51.0), std=np.ones(51) * 0.5)
    path = tmp_path / "checkpoint.npz"
    save_checkpoint(path, params, stats, meta={"fingerprint": "f2"})
    loaded, loaded_stats, meta = load_checkpoint(path)
    assert meta["fingerprint"] == "f2"
    assert loaded.dims == params.dims
    for name in params.arrays:
        assert np.array_equal(loaded.arrays[name], params.arrays[name])
    assert np.array_equal(loaded_stats.mean, stats.mean)
    assert loaded_stats.floor == stats.floor


def test_edge_scores_round_trip(tmp_path):
    raw = [
        RawEdgeScores(s_reg=np.array([0.1, 0.2]), s_cls=np.array([0.0, 0.9])),
        RawEdgeScores(s_reg=np.array([0.3]), s_cls=np.array([0.5])),
    ]
    calib = CalibrationStats(med_reg=0.2, mad_reg=0.1, med_cls=0.1, mad_cls=0.05)
    path = tmp_path / "edge_scores.npz"
    save_edge_scores(path, [7, 9], raw, calib, meta={"fingerprint": "f3"})
    per_window, loaded_calib, meta = load_edge_scores(path)
    assert meta["fingerprint"] == "f3"
    assert loaded_calib == calib
    assert np.array_equal(per_window[7].s_reg, raw[0].s_reg)
    assert np.array_equal(per_window[9].s_cls, raw[1].s_cls)


def test_host_rows_round_trip(tmp_path):
    rows = [
        HostRow(window_index=3, host="10.0.0.1", label=True, m_incident=4,
                raw_score=1.234567890123456789, calibrated_score=-0.5),
        HostRow(window_index=3, host="srv", label=False, m_incident=1,
                raw_score=0.0, calibrated_score=10.0),
    ]
    path = tmp_path / "host_scores.csv"
    save_host_rows(path, rows, meta={"fingerprint": "f4", "method": "model"})
    loaded, meta = load_host_rows(path)
    assert meta["fingerprint"] == "f4"
    assert loaded == rows  # repr round-trips floats exactly


def test_missing_artifact_names_producer(tmp_path):
    with pytest.raises(ArtifactError, match="build-graphs"):
        load_snapshots(tmp_path / "none.npz")
    with pytest.raises(ArtifactError, match="train"):
        load_checkpoint(tmp_path / "none.npz")
    with pytest.raises(ArtifactError, match="score"):
        load_edge_scores(tmp_path / "none.npz")


def test_wrong_format_rejected(tmp_path, snaps):
    path = tmp_path / "snapshots.npz"
    save_snapshots(path, snaps, meta={})
    with pytest.raises(ArtifactError, match="format"):
        load_checkpoint(path)
