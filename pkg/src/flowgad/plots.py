"""Optional plot emission: score histograms, ROC and PR curves."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def roc_points(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(FPR, TPR) at every distinct-score threshold, plus the (0, 0) origin."""
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    tp = np.cumsum(labels[order])
    fp = np.arange(1, scores.size + 1) - tp
    ends = np.nonzero(np.diff(sorted_scores, append=-np.inf))[0]
    n_pos = max(int(labels.sum()), 1)
    n_neg = max(int(scores.size - labels.sum()), 1)
    fpr = np.concatenate([[0.0], fp[ends] / n_neg])
    tpr = np.concatenate([[0.0], tp[ends] / n_pos])
    return fpr, tpr


def pr_points(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(recall, precision) at every distinct-score threshold."""
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    tp = np.cumsum(labels[order])
    seen = np.arange(1, scores.size + 1)
    ends = np.nonzero(np.diff(sorted_scores, append=-np.inf))[0]
    n_pos = max(int(labels.sum()), 1)
    return tp[ends] / n_pos, tp[ends] / seen[ends]


def emit_plots(
    scores: np.ndarray, labels: np.ndarray, out_dir: str | Path, tag: str
) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    fig, ax = plt.subplots(figsize=(6, 4))
    bins = np.histogram_bin_edges(scores, bins=40)
    ax.hist(scores[~labels], bins=bins, alpha=0.6, label="benign", color="steelblue")
    ax.hist(scores[labels], bins=bins, alpha=0.6, label="malicious", color="crimson")
    ax.set_xlabel("host score")
    ax.set_ylabel("instances")
    ax.set_yscale("log")
    ax.legend()
    ax.set_title(f"score distribution ({tag})")
    path = out / f"scores_{tag}.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    if labels.any() and not labels.all():
        fpr, tpr = roc_points(scores, labels)
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.plot(fpr, tpr, color="steelblue")
        ax.plot([0, 1], [0, 1], "k--", alpha=0.4)
        ax.set_xlabel("FPR")
        ax.set_ylabel("TPR")
        ax.set_title(f"ROC ({tag})")
        path = out / f"roc_{tag}.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)

        rec, prec = pr_points(scores, labels)
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.plot(rec, prec, color="crimson")
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_ylim(0, 1.05)
        ax.set_title(f"PR ({tag})")
        path = out / f"pr_{tag}.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written
