"""Ranking metrics and the pooled node-level evaluation protocol.

All three metrics are computed from scratch on pooled (snapshot, host)
instances: ROC-AUC as the tie-aware pair-ranking statistic, PR-AUC as
step-wise average precision over distinct-score blocks, and TPR at a fixed
FPR budget as the best achievable true-positive rate over realized
thresholds. Degenerate single-class pools are flagged, never fabricated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError
from .graphs import GraphSnapshot
from .scoring import HostRow


def _validate(scores: np.ndarray, labels: np.ndarray) -> tuple[int, int]:
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be parallel 1-D arrays")
    if scores.size == 0:
        raise DataError("empty score pool")
    if not np.all(np.isfinite(scores)):
        raise DataError("scores contain non-finite values")
    n_pos = int(labels.sum())
    return n_pos, int(labels.size - n_pos)


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks, ties sharing the average rank of their block."""
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of (positive, negative) pairs ranked correctly; ties count 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos, n_neg = _validate(scores, labels)
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC-AUC needs at least one positive and one negative")
    ranks = _average_ranks(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return u / (n_pos * n_neg)


def pr_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Average precision, stepping over distinct-score blocks in descending order.

    Every positive inside a tied block contributes the precision measured at
    the block's end, which makes the value independent of intra-block order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos, _ = _validate(scores, labels)
    if n_pos == 0:
        raise DataError("PR-AUC needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    total = 0.0
    seen = 0
    tp = 0
    i = 0
    n = scores.size
    while i < n:
        j = i
        while j + 1 < n and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        block_tp = int(sorted_labels[i : j + 1].sum())
        seen = j + 1
        tp += block_tp
        if block_tp:
            precision = tp / seen
            for _ in range(block_tp):
                total += precision
        i = j + 1
    return total / n_pos


def tpr_at_fpr(scores: np.ndarray, labels: np.ndarray, fpr_budget: float) -> float:
    """Best TPR subject to FPR <= budget over thresholds at realized scores.

    Alerts fire on score >= threshold. If no realized threshold satisfies
    the budget, returns 0 (the empty alert set).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos, n_neg = _validate(scores, labels)
    if n_pos == 0 or n_neg == 0:
        raise DataError("TPR@FPR needs at least one positive and one negative")
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    tp_cum = np.cumsum(labels[order])
    # Thresholding at a realized score admits every instance tied with it,
    # so candidates are the ends of distinct-score blocks.
    block_end = np.nonzero(np.diff(sorted_scores, append=-np.inf))[0]
    best = 0.0
    for end in block_end:
        tp = int(tp_cum[end])
        fp = int(end + 1 - tp)
        if fp / n_neg <= fpr_budget:
            best = max(best, tp / n_pos)
    return best


@dataclass
class LabeledScores:
    """Pooled parallel (score, label) lists over (snapshot, host) instances."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=bool)
        if self.scores.shape != self.labels.shape or self.scores.size == 0:
            raise DataError("labeled score pool must be non-empty and parallel")

    @property
    def n_positives(self) -> int:
        return int(self.labels.sum())

    @property
    def n_negatives(self) -> int:
        return int(self.labels.size - self.labels.sum())

    @property
    def degenerate(self) -> bool:
        return self.n_positives == 0 or self.n_negatives == 0


@dataclass
class EvaluationReport:
    """Pooled node-level metrics plus run identification."""

    roc_auc: float | None
    pr_auc: float | None
    tpr_at_fpr: dict[float, float | None]
    n_positives: int
    n_negatives: int
    n_snapshots: int
    degenerate: bool
    fingerprint: str
    method: str = "model"
    aggregation: str | None = None
    calibrated: bool | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "roc_auc": self.roc_auc,
            "pr_auc": self.pr_auc,
            "tpr_at_fpr": {repr(k): v for k, v in self.tpr_at_fpr.items()},
            "n_positives": self.n_positives,
            "n_negatives": self.n_negatives,
            "n_snapshots": self.n_snapshots,
            "degenerate": self.degenerate,
            "fingerprint": self.fingerprint,
            "method": self.method,
            "aggregation": self.aggregation,
            "calibrated": self.calibrated,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def pool_host_rows(
    rows: Sequence[HostRow], use_calibrated: bool = True
) -> LabeledScores:
    scores = [r.calibrated_score if use_calibrated else r.raw_score for r in rows]
    labels = [r.label for r in rows]
    return LabeledScores(scores=np.asarray(scores), labels=np.asarray(labels))


def evaluate_run(
    test_snapshots: Sequence[GraphSnapshot],
    rows: Sequence[HostRow],
    fingerprint: str = "",
    use_calibrated: bool = True,
    budgets: Sequence[float] = (0.01, 0.05),
    method: str = "model",
    aggregation: str | None = None,
) -> EvaluationReport:
    """Pool all (snapshot, host) instances and compute the three metrics.

    Raises if any non-isolated test host lacks a score row. A single-class
    pool produces a flagged report with undefined metrics.
    """
    if not test_snapshots:
        raise DataError("evaluation requires a non-empty test set")
    expected = {(s.window_index, h) for s in test_snapshots for h in s.hosts}
    got = {(r.window_index, r.host) for r in rows}
    missing = expected - got
    if missing:
        raise DataError(f"missing scores for {len(missing)} (snapshot, host) instances")

    pool = pool_host_rows(rows, use_calibrated=use_calibrated)
    notes: list[str] = []
    if pool.degenerate:
        notes.append("single-class pool: AUC metrics are undefined")
        metrics: tuple[float | None, float | None] = (None, None)
        tprs: dict[float, float | None] = {b: None for b in budgets}
    else:
        metrics = (roc_auc(pool.scores, pool.labels), pr_auc(pool.scores, pool.labels))
        tprs = {b: tpr_at_fpr(pool.scores, pool.labels, b) for b in budgets}
    return EvaluationReport(
        roc_auc=metrics[0],
        pr_auc=metrics[1],
        tpr_at_fpr=tprs,
        n_positives=pool.n_positives,
        n_negatives=pool.n_negatives,
        n_snapshots=len(test_snapshots),
        degenerate=pool.degenerate,
        fingerprint=fingerprint,
        method=method,
        aggregation=aggregation,
        calibrated=use_calibrated,
        notes=notes,
    )


def format_report(report: EvaluationReport) -> str:
    """Human-readable report body."""
    def fmt(x: float | None) -> str:
        return "undefined" if x is None else f"{x:.4f}"

    lines = [
        f"method:        {report.method}",
        f"aggregation:   {report.aggregation or '-'}",
        f"calibrated:    {report.calibrated}",
        f"fingerprint:   {report.fingerprint}",
        f"snapshots:     {report.n_snapshots}",
        f"instances:     {report.n_positives + report.n_negatives} "
        f"({report.n_positives} positive / {report.n_negatives} negative)",
        f"ROC-AUC:       {fmt(report.roc_auc)}",
        f"PR-AUC:        {fmt(report.pr_auc)}",
    ]
    for budget in sorted(report.tpr_at_fpr):
        lines.append(f"TPR@{budget:.0%}FPR:    {fmt(report.tpr_at_fpr[budget])}")
    for note in report.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines) + "\n"
