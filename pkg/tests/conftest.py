"""Shared fixtures: toy windows, toy snapshots, and one full pipeline run."""

from __future__ import annotations

import time

import numpy as np
import pytest

from flowgad.config import load_config
from flowgad.graphs import build_snapshot, build_snapshots, fit_feature_stats, standardize
from flowgad.ingest import FlowRecord, WindowBatch, partition_windows
from flowgad.pipeline import run_all
from flowgad.synth import SynthConfig, generate_flows


def make_flow(
    ts=0.0,
    src="a",
    dst="b",
    src_port=50000,
    dst_port=443,
    protocol="tcp",
    duration=0.5,
    bytes=1000,
    packets=3,
    label="benign",
) -> FlowRecord:
    return FlowRecord(
        ts=ts,
        src_host=src,
        dst_host=dst,
        src_port=src_port,
        dst_port=dst_port,
        protocol=protocol,
        duration=duration,
        bytes=bytes,
        packets=packets,
        label=label,
    )


def make_batch(records, window_index=0, t_start=0.0, t_end=30.0) -> WindowBatch:
    return WindowBatch(
        window_index=window_index, t_start=t_start, t_end=t_end, records=tuple(records)
    )


def random_batch(rng: np.random.Generator, n_hosts=8, n_flows=30) -> WindowBatch:
    hosts = [f"h{i}" for i in range(n_hosts)]
    records = []
    for k in range(n_flows):
        s, d = rng.choice(n_hosts, size=2, replace=False)
        records.append(
            make_flow(
                ts=float(rng.uniform(0, 30)),
                src=hosts[int(s)],
                dst=hosts[int(d)],
                dst_port=int(rng.choice([80, 443, 53, 8080, 22])),
                duration=float(rng.exponential(0.5)),
                bytes=int(rng.integers(60, 20000)),
                packets=int(rng.integers(1, 30)),
            )
        )
    return make_batch(records)


@pytest.fixture(scope="session")
def toy_snapshot():
    """Seeded 8-node standardized snapshot used by the model/training tests."""
    rng = np.random.default_rng(42)
    snap = build_snapshot(random_batch(rng), benign_tag="benign")
    return standardize([snap], fit_feature_stats([snap]))[0]


@pytest.fixture(scope="session")
def tiny_benign_snapshots():
    """A handful of benign standardized snapshots from a small generator run."""
    config = SynthConfig(
        n_hosts=14,
        n_servers=4,
        duration_seconds=480.0,
        window_seconds=30.0,
        benign_flow_rate=0.15,
        n_compromised=0,
        seed=5,
    )
    records, _ = generate_flows(config)
    batches = partition_windows(records, config.window_seconds)
    snaps = build_snapshots(batches, benign_tag="benign", window_seconds=30.0)
    stats = fit_feature_stats(snaps)
    return standardize(snaps, stats)


@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory):
    """One full default-config run; shared by CLI and acceptance tests."""
    out = tmp_path_factory.mktemp("run_a")
    config = load_config(None, {"out_dir": str(out)})
    start = time.perf_counter()
    summary = run_all(config, out, log=lambda *a: None)
    elapsed = time.perf_counter() - start
    return {"out": out, "config": config, "summary": summary, "elapsed": elapsed}
