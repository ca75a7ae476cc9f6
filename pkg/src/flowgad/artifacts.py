"""On-disk artifact formats: snapshots, checkpoints, edge scores, host rows.

Array payloads live in ``.npz`` containers (bit-exact round-trips for
integers, full float64 precision for reals) with a JSON metadata entry that
carries a format-version field and the config fingerprint. Host score rows
are CSV plus a JSON metadata sidecar so they stay analyst-readable.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ArtifactError, SchemaError
from .graphs import FeatureStats, GraphSnapshot
from .model import ModelDims, ModelParams, param_shapes
from .scoring import CalibrationStats, HostRow, RawEdgeScores

SNAPSHOTS_FORMAT = "snapshots-v1"
CHECKPOINT_FORMAT = "checkpoint-v1"
EDGE_SCORES_FORMAT = "edge-scores-v1"
HOST_ROWS_FORMAT = "host-rows-v1"


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}; run `flowgad {producer}` first")
    return path


def _load_npz(path: Path, expected_format: str, producer: str) -> tuple[dict, dict]:
    with np.load(_require(path, producer), allow_pickle=False) as npz:
        data = {name: npz[name] for name in npz.files}
    if "__meta__" not in data:
        raise ArtifactError(f"{path}: missing metadata entry")
    meta = json.loads(str(data.pop("__meta__")))
    if meta.get("format") != expected_format:
        raise ArtifactError(
            f"{path}: format {meta.get('format')!r}, expected {expected_format!r}"
        )
    return data, meta


def _save_npz(path: Path, arrays: dict, meta: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path, __meta__=np.str_(json.dumps(meta, sort_keys=True)), **arrays)


def save_snapshots(
    path: str | Path, snapshots: Sequence[GraphSnapshot], meta: dict
) -> None:
    arrays: dict = {}
    per_snapshot = []
    for i, s in enumerate(snapshots):
        key = f"s{i:05d}"
        arrays[f"{key}_hosts"] = np.asarray(s.hosts, dtype=np.str_)
        arrays[f"{key}_edges"] = s.edges
        arrays[f"{key}_node_features"] = s.node_features
        arrays[f"{key}_edge_features"] = s.edge_features
        arrays[f"{key}_targets_reg"] = s.edge_targets_reg
        arrays[f"{key}_targets_cls"] = s.edge_targets_cls
        arrays[f"{key}_node_labels"] = s.node_labels
        per_snapshot.append(
            {
                "window_index": s.window_index,
                "t_start": s.t_start,
                "t_end": s.t_end,
                "graph_label": bool(s.graph_label),
            }
        )
    full_meta = {"format": SNAPSHOTS_FORMAT, "count": len(snapshots), "snapshots": per_snapshot}
    full_meta.update(meta)
    _save_npz(Path(path), arrays, full_meta)


def load_snapshots(path: str | Path) -> tuple[list[GraphSnapshot], dict]:
    data, meta = _load_npz(Path(path), SNAPSHOTS_FORMAT, "build-graphs")
    snapshots = []
    for i, info in enumerate(meta["snapshots"]):
        key = f"s{i:05d}"
        snapshots.append(
            GraphSnapshot(
                window_index=int(info["window_index"]),
                t_start=float(info["t_start"]),
                t_end=float(info["t_end"]),
                hosts=tuple(str(h) for h in data[f"{key}_hosts"]),
                edges=data[f"{key}_edges"],
                node_features=data[f"{key}_node_features"],
                edge_features=data[f"{key}_edge_features"],
                edge_targets_reg=data[f"{key}_targets_reg"],
                edge_targets_cls=data[f"{key}_targets_cls"],
                node_labels=data[f"{key}_node_labels"],
                graph_label=bool(info["graph_label"]),
            )
        )
    return snapshots, meta


def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    stats: FeatureStats,
    meta: dict,
) -> None:
    arrays = {f"param_{name}": arr for name, arr in params.arrays.items()}
    arrays["stats_mean"] = stats.mean
    arrays["stats_std"] = stats.std
    full_meta = {
        "format": CHECKPOINT_FORMAT,
        "dims": {
            "node_dim": params.dims.node_dim,
            "edge_dim": params.dims.edge_dim,
            "hidden": params.dims.hidden,
            "reg_dim": params.dims.reg_dim,
            "n_classes": params.dims.n_classes,
            "n_layers": params.dims.n_layers,
        },
        "dropout": params.dropout,
        "epsilon": params.epsilon,
        "seed": params.seed,
        "std_floor": stats.floor,
        "param_names": list(params.arrays),
    }
    full_meta.update(meta)
    _save_npz(Path(path), arrays, full_meta)


def load_checkpoint(path: str | Path) -> tuple[ModelParams, FeatureStats, dict]:
    data, meta = _load_npz(Path(path), CHECKPOINT_FORMAT, "train")
    dims = ModelDims(**meta["dims"])
    expected = param_shapes(dims)
    arrays = {}
    for name in expected:
        key = f"param_{name}"
        if key not in data:
            raise SchemaError(f"{path}: checkpoint is missing parameter {name!r}")
        arrays[name] = data[key]
    params = ModelParams(
        dims=dims,
        arrays=arrays,
        dropout=float(meta["dropout"]),
        epsilon=float(meta["epsilon"]),
        seed=int(meta["seed"]),
    )
    params.validate()
    stats = FeatureStats(
        mean=data["stats_mean"], std=data["stats_std"], floor=float(meta["std_floor"])
    )
    return params, stats, meta


def save_edge_scores(
    path: str | Path,
    window_indices: Sequence[int],
    raw_scores: Sequence[RawEdgeScores],
    calibration: CalibrationStats,
    meta: dict,
) -> None:
    win = np.concatenate(
        [np.full(len(r), w, dtype=np.int64) for w, r in zip(window_indices, raw_scores)]
    ) if raw_scores else np.zeros(0, dtype=np.int64)
    edge_idx = np.concatenate(
        [np.arange(len(r), dtype=np.int64) for r in raw_scores]
    ) if raw_scores else np.zeros(0, dtype=np.int64)
    arrays = {
        "window_index": win,
        "edge_index": edge_idx,
        "s_reg": np.concatenate([r.s_reg for r in raw_scores]) if raw_scores else np.zeros(0),
        "s_cls": np.concatenate([r.s_cls for r in raw_scores]) if raw_scores else np.zeros(0),
    }
    full_meta = {
        "format": EDGE_SCORES_FORMAT,
        "calibration": calibration.to_dict(),
        "windows": [int(w) for w in window_indices],
    }
    full_meta.update(meta)
    _save_npz(Path(path), arrays, full_meta)


def load_edge_scores(path: str | Path) -> tuple[dict[int, RawEdgeScores], CalibrationStats, dict]:
    data, meta = _load_npz(Path(path), EDGE_SCORES_FORMAT, "score")
    calibration = CalibrationStats(**meta["calibration"])
    per_window: dict[int, RawEdgeScores] = {}
    win = data["window_index"]
    for w in meta["windows"]:
        sel = win == w
        order = np.argsort(data["edge_index"][sel], kind="mergesort")
        per_window[int(w)] = RawEdgeScores(
            s_reg=data["s_reg"][sel][order], s_cls=data["s_cls"][sel][order]
        )
    return per_window, calibration, meta


def save_host_rows(path: str | Path, rows: Sequence[HostRow], meta: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["window_index", "host", "label", "m_incident", "raw_score", "calibrated_score"]
        )
        for r in rows:
            writer.writerow(
                [r.window_index, r.host, int(r.label), r.m_incident,
                 repr(r.raw_score), repr(r.calibrated_score)]
            )
    full_meta = {"format": HOST_ROWS_FORMAT, "count": len(rows)}
    full_meta.update(meta)
    meta_path = path.with_suffix(path.suffix + ".meta.json")
    meta_path.write_text(json.dumps(full_meta, indent=2, sort_keys=True))


def load_host_rows(path: str | Path) -> tuple[list[HostRow], dict]:
    path = _require(Path(path), "score")
    meta_path = path.with_suffix(path.suffix + ".meta.json")
    meta = json.loads(_require(meta_path, "score").read_text())
    if meta.get("format") != HOST_ROWS_FORMAT:
        raise ArtifactError(f"{meta_path}: unexpected format {meta.get('format')!r}")
    rows: list[HostRow] = []
    with path.open(newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                HostRow(
                    window_index=int(rec["window_index"]),
                    host=rec["host"],
                    label=bool(int(rec["label"])),
                    m_incident=int(rec["m_incident"]),
                    raw_score=float(rec["raw_score"]),
                    calibrated_score=float(rec["calibrated_score"]),
                )
            )
    return rows, meta
