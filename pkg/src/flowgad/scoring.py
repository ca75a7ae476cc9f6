"""Edge anomaly scores, robust calibration, and weighted host aggregation.

Each edge is scored by how poorly its observed semantics are reconstructed
when hidden: the mean absolute error over the three regressed dims plus one
minus the probability assigned to the true port bucket. Raw scores are
robustly standardized with median/MAD statistics pooled over benign
training edges (floored and clipped), combined, weighted by endpoint role,
and aggregated per host.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError
from .graphs import GraphSnapshot
from .model import ModelParams, forward, softmax

AGGREGATION_OPERATORS = ("mean", "max", "q90", "topk_mean")


@dataclass
class RawEdgeScores:
    """Per-edge raw discrepancies: s_reg >= 0 and s_cls in [0, 1]."""

    s_reg: np.ndarray
    s_cls: np.ndarray

    def __len__(self) -> int:
        return int(self.s_reg.shape[0])


@dataclass(frozen=True)
class CalibrationStats:
    """Benign-train median/MAD per score component plus floor/clip constants."""

    med_reg: float
    mad_reg: float
    med_cls: float
    mad_cls: float
    tau_mad: float = 1e-3
    tau_clip: float = 10.0
    alpha: float = 1.0

    def to_dict(self) -> dict:
        return {
            "med_reg": self.med_reg,
            "mad_reg": self.mad_reg,
            "med_cls": self.med_cls,
            "mad_cls": self.mad_cls,
            "tau_mad": self.tau_mad,
            "tau_clip": self.tau_clip,
            "alpha": self.alpha,
        }


def inference_mask_groups(
    n_edges: int, mask_ratio: float, rng: np.random.Generator
) -> list[np.ndarray]:
    """Disjoint seeded partition of edge indices into ceil(1/ratio) groups.

    Every edge lands in exactly one group, so one inference pass per group
    scores each edge while that edge's attributes are hidden, matching the
    training-time masking distribution.
    """
    n_groups = int(math.ceil(1.0 / mask_ratio))
    perm = rng.permutation(n_edges)
    return [np.sort(g) for g in np.array_split(perm, n_groups)]


def score_edges(
    snapshot: GraphSnapshot,
    params: ModelParams,
    mask_ratio: float = 0.2,
    seed: int = 0,
) -> RawEdgeScores:
    """Raw (s_reg, s_cls) per edge, each computed in the pass masking it."""
    m = snapshot.n_edges
    rng = np.random.default_rng([seed, snapshot.window_index])
    s_reg = np.zeros(m)
    s_cls = np.zeros(m)
    for group in inference_mask_groups(m, mask_ratio, rng):
        if group.size == 0:
            continue
        state = forward(params, snapshot, mask=group)
        diff = np.abs(state.y_reg[group] - snapshot.edge_targets_reg[group])
        s_reg[group] = diff.mean(axis=1)
        probs = softmax(state.logits[group])
        true_p = probs[np.arange(group.size), snapshot.edge_targets_cls[group]]
        s_cls[group] = 1.0 - true_p
    return RawEdgeScores(s_reg=s_reg, s_cls=s_cls)


def median_mad(values: np.ndarray) -> tuple[float, float]:
    """Median and median absolute deviation from the median."""
    if values.size == 0:
        raise DataError("cannot take robust statistics of an empty pool")
    med = float(np.median(values))
    return med, float(np.median(np.abs(values - med)))


def fit_calibration(
    benign_snapshots: Sequence[GraphSnapshot],
    params: ModelParams,
    mask_ratio: float = 0.2,
    seed: int = 0,
    tau_mad: float = 1e-3,
    tau_clip: float = 10.0,
    alpha: float = 1.0,
) -> CalibrationStats:
    """Median/MAD of raw scores pooled over all benign training edges."""
    if not benign_snapshots:
        raise DataError("calibration requires at least one benign snapshot")
    regs: list[np.ndarray] = []
    clss: list[np.ndarray] = []
    for snap in benign_snapshots:
        raw = score_edges(snap, params, mask_ratio=mask_ratio, seed=seed)
        regs.append(raw.s_reg)
        clss.append(raw.s_cls)
    med_reg, mad_reg = median_mad(np.concatenate(regs))
    med_cls, mad_cls = median_mad(np.concatenate(clss))
    return CalibrationStats(
        med_reg=med_reg,
        mad_reg=mad_reg,
        med_cls=med_cls,
        mad_cls=mad_cls,
        tau_mad=tau_mad,
        tau_clip=tau_clip,
        alpha=alpha,
    )


def robust_z(
    values: np.ndarray, med: float, mad: float, tau_mad: float, tau_clip: float
) -> np.ndarray:
    """Floored, clipped robust z-score: clip((x - med)/max(mad, floor))."""
    z = (values - med) / max(mad, tau_mad)
    return np.clip(z, -tau_clip, tau_clip)


def calibrate(raw: RawEdgeScores, stats: CalibrationStats) -> np.ndarray:
    """Final per-edge score z_reg + alpha * z_cls."""
    z_reg = robust_z(raw.s_reg, stats.med_reg, stats.mad_reg, stats.tau_mad, stats.tau_clip)
    z_cls = robust_z(raw.s_cls, stats.med_cls, stats.mad_cls, stats.tau_mad, stats.tau_clip)
    return z_reg + stats.alpha * z_cls


def combine_uncalibrated(raw: RawEdgeScores, alpha: float = 1.0) -> np.ndarray:
    """Ablation path: the same combination on raw, unnormalized scores."""
    return raw.s_reg + alpha * raw.s_cls


def aggregate_operator(values: np.ndarray, op: str) -> float:
    """One of mean / max / q90 (linear-interpolated) / top-k mean.

    q90 interpolates between order statistics at position 0.9 * (m - 1);
    top-k averages the largest max(floor(0.1 * m), 1) values.
    """
    if values.size == 0:
        raise DataError("cannot aggregate an empty score multiset")
    if op == "mean":
        return float(values.mean())
    if op == "max":
        return float(values.max())
    if op == "q90":
        return float(np.quantile(values, 0.9, method="linear"))
    if op == "topk_mean":
        k = max(int(math.floor(0.1 * values.size)), 1)
        return float(np.sort(values)[-k:].mean())
    raise ValueError(f"unknown aggregation operator {op!r}")


@dataclass
class HostRow:
    """Score-export row for one (snapshot, host) instance."""

    window_index: int
    host: str
    label: bool
    m_incident: int
    raw_score: float
    calibrated_score: float


def weighted_incident_scores(
    snapshot: GraphSnapshot,
    edge_scores: np.ndarray,
    lambda_src: float = 1.0,
    lambda_dst: float = 0.2,
) -> list[np.ndarray]:
    """Per host, the multiset of weighted incident edge scores.

    Outgoing edges contribute lambda_src * s, incoming lambda_dst * s.
    Zero-weighted contributions still count toward the multiset size used
    for top-k sizing.
    """
    per_host: list[list[float]] = [[] for _ in range(snapshot.n_hosts)]
    for k in range(snapshot.n_edges):
        s, d = int(snapshot.edges[k, 0]), int(snapshot.edges[k, 1])
        per_host[s].append(lambda_src * edge_scores[k])
        per_host[d].append(lambda_dst * edge_scores[k])
    return [np.asarray(v, dtype=np.float64) for v in per_host]


def aggregate_hosts(
    snapshot: GraphSnapshot,
    edge_scores_raw: np.ndarray,
    edge_scores_calibrated: np.ndarray,
    op: str = "q90",
    lambda_src: float = 1.0,
    lambda_dst: float = 0.2,
) -> list[HostRow]:
    """One HostRow per host with at least one incident edge."""
    raw_sets = weighted_incident_scores(snapshot, edge_scores_raw, lambda_src, lambda_dst)
    cal_sets = weighted_incident_scores(snapshot, edge_scores_calibrated, lambda_src, lambda_dst)
    rows: list[HostRow] = []
    for i, host in enumerate(snapshot.hosts):
        if raw_sets[i].size == 0:
            continue  # isolated hosts are absent from the export
        rows.append(
            HostRow(
                window_index=snapshot.window_index,
                host=host,
                label=bool(snapshot.node_labels[i]),
                m_incident=int(raw_sets[i].size),
                raw_score=aggregate_operator(raw_sets[i], op),
                calibrated_score=aggregate_operator(cal_sets[i], op),
            )
        )
    return rows


def score_test_snapshots(
    snapshots: Sequence[GraphSnapshot],
    params: ModelParams,
    mask_ratio: float = 0.2,
    seed: int = 0,
) -> list[RawEdgeScores]:
    """Raw edge scores for every snapshot, in order."""
    return [score_edges(s, params, mask_ratio=mask_ratio, seed=seed) for s in snapshots]
