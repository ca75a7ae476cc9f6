"""Stage orchestration: each stage reads/writes documented artifacts.

Stages are separate so downstream ablations (recalibration, re-aggregation)
never retrain. Every artifact embeds the config fingerprint; consumers
refuse mismatched lineages.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from . import artifacts, baselines, metrics, scoring
from .config import RunConfig
from .errors import ArtifactError, DataError, SchemaError
from .graphs import build_snapshots, chronological_split, fit_feature_stats, standardize
from .ingest import (
    SCHEMA_PRESETS,
    ParseStats,
    SchemaMap,
    parse_flow_csv,
    partition_windows,
    write_canonical_csv,
)
from .metrics import EvaluationReport, evaluate_run, format_report
from .model import ModelDims
from .scoring import HostRow
from .synth import generate
from .training import train


def paths(out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    return {
        "out": out,
        "synth_flows": out / "synth" / "flows.csv",
        "synth_manifest": out / "synth" / "manifest.json",
        "records": out / "records.csv",
        "ingest_meta": out / "ingest_meta.json",
        "snapshots": out / "snapshots.npz",
        "checkpoint": out / "checkpoint.npz",
        "history": out / "history.json",
        "edge_scores": out / "edge_scores.npz",
        "summary": out / "run_summary.json",
    }


def _effective_schema(config: RunConfig):
    if config.schema is not None:
        try:
            schema = SchemaMap(**config.schema)
        except TypeError as exc:
            raise SchemaError(f"invalid custom schema map: {exc}") from None
    else:
        if config.dataset_preset not in SCHEMA_PRESETS:
            raise SchemaError(
                f"unknown dataset preset {config.dataset_preset!r}; "
                f"available: {sorted(SCHEMA_PRESETS)}"
            )
        schema = SCHEMA_PRESETS[config.dataset_preset]
    benign_tag = config.benign_tag or schema.benign_tag
    return schema, benign_tag


def stage_synth(config: RunConfig, out_dir: str | Path) -> Path:
    p = paths(out_dir)
    p["synth_flows"].parent.mkdir(parents=True, exist_ok=True)
    generate(
        config.synth,
        p["synth_flows"],
        p["synth_manifest"],
        extra_meta={"fingerprint": config.fingerprint()},
    )
    return p["synth_flows"]


def stage_ingest(
    config: RunConfig, out_dir: str | Path, input_csv: str | Path | None = None
) -> Path:
    p = paths(out_dir)
    source = Path(input_csv or config.input_csv or p["synth_flows"])
    if not source.exists():
        raise ArtifactError(
            f"input flow CSV {source} not found; pass --input, set input_csv, "
            "or run `flowgad synth-gen` first"
        )
    schema, benign_tag = _effective_schema(config)
    stats = ParseStats()
    records = list(parse_flow_csv(source, schema, stats))
    p["out"].mkdir(parents=True, exist_ok=True)
    write_canonical_csv(p["records"], records)
    p["ingest_meta"].write_text(
        json.dumps(
            {
                "format": "ingest-meta-v1",
                "fingerprint": config.fingerprint(),
                "source": str(source),
                "benign_tag": benign_tag,
                "accepted": stats.accepted,
                "rejected": stats.rejected,
                "reject_reasons": dict(stats.reasons),
            },
            indent=2,
            sort_keys=True,
        )
    )
    return p["records"]


def stage_build_graphs(config: RunConfig, out_dir: str | Path) -> Path:
    p = paths(out_dir)
    meta_path = p["ingest_meta"]
    if not meta_path.exists():
        raise ArtifactError(f"missing artifact {meta_path}; run `flowgad ingest` first")
    ingest_meta = json.loads(meta_path.read_text())
    benign_tag = ingest_meta["benign_tag"]
    stats = ParseStats()
    records = list(
        parse_flow_csv(p["records"], SCHEMA_PRESETS["canonical"], stats)
    ) if p["records"].exists() else []
    if not records:
        raise DataError(f"no records in {p['records']}; nothing to window")
    batches = partition_windows(records, config.window_seconds)
    snapshots = build_snapshots(
        batches,
        benign_tag=benign_tag,
        window_seconds=config.window_seconds,
        rate_denominator=config.rate_denominator,
    )
    artifacts.save_snapshots(
        p["snapshots"],
        snapshots,
        meta={
            "fingerprint": config.fingerprint(),
            "feature_layout_version": config.feature_layout_version,
            "benign_tag": benign_tag,
            "window_seconds": config.window_seconds,
        },
    )
    return p["snapshots"]


def _load_split(config: RunConfig, out_dir: str | Path):
    p = paths(out_dir)
    snapshots, meta = artifacts.load_snapshots(p["snapshots"])
    if meta.get("feature_layout_version") != config.feature_layout_version:
        raise SchemaError(
            f"feature-layout version mismatch: snapshots carry "
            f"{meta.get('feature_layout_version')!r}, config expects "
            f"{config.feature_layout_version!r}"
        )
    train_snaps, test_snaps = chronological_split(snapshots, config.train_fraction)
    return snapshots, train_snaps, test_snaps, meta


def stage_train(config: RunConfig, out_dir: str | Path) -> Path:
    p = paths(out_dir)
    _, train_snaps, _, _ = _load_split(config, out_dir)
    stats = fit_feature_stats(train_snaps, floor=config.std_floor)
    std_train = standardize(train_snaps, stats)
    dims = ModelDims(hidden=config.hidden)
    params, history = train(std_train, config.train, dims=dims, dropout=config.dropout)
    artifacts.save_checkpoint(
        p["checkpoint"],
        params,
        stats,
        meta={
            "fingerprint": config.fingerprint(),
            "feature_layout_version": config.feature_layout_version,
            "n_train_snapshots": len(train_snaps),
        },
    )
    history_record = {"fingerprint": config.fingerprint()}
    history_record.update(history.to_dict())
    p["history"].write_text(json.dumps(history_record, indent=2, sort_keys=True))
    return p["checkpoint"]


def _incident_counts(snapshot) -> list[int]:
    counts = [0] * snapshot.n_hosts
    for k in range(snapshot.n_edges):
        counts[int(snapshot.edges[k, 0])] += 1
        counts[int(snapshot.edges[k, 1])] += 1
    return counts


def stage_score(config: RunConfig, out_dir: str | Path, method: str = "model") -> Path:
    p = paths(out_dir)
    _, train_snaps, test_snaps, snap_meta = _load_split(config, out_dir)

    if method == "model":
        params, stats, ckpt_meta = artifacts.load_checkpoint(p["checkpoint"])
        if ckpt_meta.get("fingerprint") != snap_meta.get("fingerprint"):
            raise ArtifactError(
                "checkpoint/snapshots fingerprint mismatch: retrain or rebuild graphs"
            )
        std_train = standardize(train_snaps, stats)
        std_test = standardize(test_snaps, stats)
        calibration = scoring.fit_calibration(
            std_train,
            params,
            mask_ratio=config.train.mask_ratio,
            seed=config.seed,
            tau_mad=config.tau_mad,
            tau_clip=config.tau_clip,
            alpha=config.alpha,
        )
        raw_scores = scoring.score_test_snapshots(
            std_test, params, mask_ratio=config.train.mask_ratio, seed=config.seed
        )
        artifacts.save_edge_scores(
            p["edge_scores"],
            [s.window_index for s in std_test],
            raw_scores,
            calibration,
            meta={
                "fingerprint": config.fingerprint(),
                "mask_ratio": config.train.mask_ratio,
                "seed": config.seed,
            },
        )
        return p["edge_scores"]

    if method == "iforest":
        # Raw node features: isolation trees split on untransformed ranges.
        train_rows = np.concatenate([s.node_features for s in train_snaps], axis=0)
        model = baselines.iforest_fit(train_rows, seed=config.seed)
        rows = []
        for snap in test_snaps:
            values = baselines.iforest_score(model, snap.node_features)
            counts = _incident_counts(snap)
            for i, host in enumerate(snap.hosts):
                rows.append(
                    HostRow(
                        window_index=snap.window_index,
                        host=host,
                        label=bool(snap.node_labels[i]),
                        m_incident=counts[i],
                        raw_score=float(values[i]),
                        calibrated_score=float(values[i]),
                    )
                )
        out = p["out"] / "host_scores_iforest.csv"
        artifacts.save_host_rows(
            out, rows, meta={"fingerprint": config.fingerprint(), "method": "iforest"}
        )
        return out

    if method == "autoencoder":
        stats = fit_feature_stats(train_snaps, floor=config.std_floor)
        std_train = standardize(train_snaps, stats)
        std_test = standardize(test_snaps, stats)
        train_rows = np.concatenate([s.node_features for s in std_train], axis=0)
        model = baselines.ae_fit(train_rows, seed=config.seed)
        rows = []
        for snap in std_test:
            values = baselines.ae_score(model, snap.node_features)
            counts = _incident_counts(snap)
            for i, host in enumerate(snap.hosts):
                rows.append(
                    HostRow(
                        window_index=snap.window_index,
                        host=host,
                        label=bool(snap.node_labels[i]),
                        m_incident=counts[i],
                        raw_score=float(values[i]),
                        calibrated_score=float(values[i]),
                    )
                )
        out = p["out"] / "host_scores_autoencoder.csv"
        artifacts.save_host_rows(
            out, rows, meta={"fingerprint": config.fingerprint(), "method": "autoencoder"}
        )
        return out

    raise SchemaError(f"unknown scoring method {method!r}")


def model_host_rows(
    config: RunConfig,
    out_dir: str | Path,
    aggregation: str | None = None,
) -> tuple[list[HostRow], list, str]:
    """Host rows for the model from the edge-scores artifact (no retraining)."""
    p = paths(out_dir)
    _, _, test_snaps, snap_meta = _load_split(config, out_dir)
    per_window, calibration, score_meta = artifacts.load_edge_scores(p["edge_scores"])
    if score_meta.get("fingerprint") != snap_meta.get("fingerprint"):
        raise ArtifactError("edge-scores/snapshots fingerprint mismatch: re-run `flowgad score`")
    op = aggregation or config.aggregation
    rows: list[HostRow] = []
    for snap in test_snaps:
        if snap.window_index not in per_window:
            raise ArtifactError(
                f"edge scores missing window {snap.window_index}; re-run `flowgad score`"
            )
        raw = per_window[snap.window_index]
        if len(raw) != snap.n_edges:
            raise ArtifactError(
                f"edge-score count mismatch in window {snap.window_index}"
            )
        combined_cal = scoring.calibrate(raw, calibration)
        combined_raw = scoring.combine_uncalibrated(raw, alpha=calibration.alpha)
        rows.extend(
            scoring.aggregate_hosts(
                snap,
                combined_raw,
                combined_cal,
                op=op,
                lambda_src=config.lambda_src,
                lambda_dst=config.lambda_dst,
            )
        )
    return rows, test_snaps, op


def stage_evaluate(
    config: RunConfig,
    out_dir: str | Path,
    method: str = "model",
    aggregation: str | None = None,
    use_calibration: bool = True,
    budgets: tuple[float, ...] | None = None,
    plots: bool = False,
) -> EvaluationReport:
    p = paths(out_dir)
    budgets = tuple(budgets or config.fpr_budgets)
    fingerprint = config.fingerprint()

    if method == "model":
        rows, test_snaps, op = model_host_rows(config, out_dir, aggregation)
        tag = f"model_{op}_{'cal' if use_calibration else 'raw'}"
        artifacts.save_host_rows(
            p["out"] / f"host_scores_{tag}.csv",
            rows,
            meta={
                "fingerprint": fingerprint,
                "method": "model",
                "aggregation": op,
                "calibrated": use_calibration,
            },
        )
        report = evaluate_run(
            test_snaps,
            rows,
            fingerprint=fingerprint,
            use_calibrated=use_calibration,
            budgets=budgets,
            method="model",
            aggregation=op,
        )
    elif method in ("iforest", "autoencoder"):
        rows, meta = artifacts.load_host_rows(p["out"] / f"host_scores_{method}.csv")
        _, _, test_snaps, snap_meta = _load_split(config, out_dir)
        if meta.get("fingerprint") != snap_meta.get("fingerprint"):
            raise ArtifactError("host-scores/snapshots fingerprint mismatch")
        tag = method
        report = evaluate_run(
            test_snaps,
            rows,
            fingerprint=fingerprint,
            use_calibrated=True,
            budgets=budgets,
            method=method,
            aggregation=None,
        )
    else:
        raise SchemaError(f"unknown evaluation method {method!r}")

    (p["out"] / f"report_{tag}.json").write_text(report.to_json())
    (p["out"] / f"report_{tag}.txt").write_text(format_report(report))
    if plots:
        from .plots import emit_plots

        pool = metrics.pool_host_rows(rows, use_calibrated=use_calibration)
        emit_plots(pool.scores, pool.labels, p["out"] / "plots", tag)
    return report


def run_all(
    config: RunConfig,
    out_dir: str | Path,
    plots: bool = False,
    log=print,
) -> dict:
    """Chain every stage; returns the summary written to run_summary.json."""
    p = paths(out_dir)
    timings: dict[str, float] = {}

    def timed(name: str, fn, *args, **kwargs):
        start = time.perf_counter()
        result = fn(*args, **kwargs)
        timings[name] = time.perf_counter() - start
        log(f"[flowgad] {name}: {timings[name]:.1f}s")
        return result

    if config.input_csv is None:
        timed("synth-gen", stage_synth, config, out_dir)
    timed("ingest", stage_ingest, config, out_dir)
    timed("build-graphs", stage_build_graphs, config, out_dir)
    timed("train", stage_train, config, out_dir)
    timed("score-model", stage_score, config, out_dir, "model")
    for method in config.baselines:
        timed(f"score-{method}", stage_score, config, out_dir, method)

    reports: dict[str, EvaluationReport] = {}
    reports["model"] = timed(
        "evaluate-model", stage_evaluate, config, out_dir, "model",
        config.aggregation, True, None, plots,
    )
    reports["model_raw"] = timed(
        "evaluate-model-raw", stage_evaluate, config, out_dir, "model",
        config.aggregation, False, None, False,
    )
    for method in config.baselines:
        reports[method] = timed(
            f"evaluate-{method}", stage_evaluate, config, out_dir, method,
            None, True, None, False,
        )

    summary = {
        "format": "run-summary-v1",
        "fingerprint": config.fingerprint(),
        "aggregation": config.aggregation,
        "reports": {name: r.to_dict() for name, r in reports.items()},
    }
    p["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True))
    log(f"[flowgad] total: {sum(timings.values()):.1f}s -> {p['summary']}")
    return summary
