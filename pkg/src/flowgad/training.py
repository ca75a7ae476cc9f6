"""Benign-only masked edge reconstruction training.

Per snapshot, a fresh random subset of edges has its attributes hidden and
only those edges contribute to the loss: Smooth L1 on the three continuous
targets plus cross-entropy on the port bucket, combined with configurable
weights. Optimization is decoupled-weight-decay Adam with per-snapshot
gradient steps, a seeded snapshot-level validation split, and early
stopping on validation loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DataError, NumericError
from .graphs import GraphSnapshot
from .model import ModelDims, ModelParams, backward, forward, init_params, softmax


@dataclass(frozen=True)
class TrainConfig:
    mask_ratio: float = 0.2
    lambda_reg: float = 1.0
    lambda_cls: float = 1.0
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    max_epochs: int = 100
    patience: int = 10
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must be in (0, 1)")
        if self.lambda_reg < 0 or self.lambda_cls < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")


@dataclass
class TrainHistory:
    """Per-epoch loss components and the selected best epoch."""

    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
        }


def sample_mask(
    n_edges: int, mask_ratio: float, rng: np.random.Generator
) -> np.ndarray:
    """Uniform without-replacement edge subset of size max(floor(ratio*m), 1)."""
    if n_edges < 1:
        raise ValueError("need at least one edge to sample a mask")
    size = max(int(math.floor(mask_ratio * n_edges)), 1)
    return np.sort(rng.choice(n_edges, size=size, replace=False))


def _smooth_l1(diff: np.ndarray) -> np.ndarray:
    absd = np.abs(diff)
    return np.where(absd < 1.0, 0.5 * diff**2, absd - 0.5)


def _smooth_l1_grad(diff: np.ndarray) -> np.ndarray:
    return np.where(np.abs(diff) < 1.0, diff, np.sign(diff))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def masked_losses(
    y_reg: np.ndarray,
    logits: np.ndarray,
    targets_reg: np.ndarray,
    targets_cls: np.ndarray,
    mask_idx: np.ndarray,
    lambda_reg: float = 1.0,
    lambda_cls: float = 1.0,
) -> tuple[float, float, float]:
    """(L_reg, L_cls, L) over the masked edges only.

    L_reg averages elementwise Smooth L1 (transition at 1) over the three
    target dims and the masked edges; L_cls is mean negative log-probability
    of the true bucket; L = lambda_reg * L_reg + lambda_cls * L_cls.
    """
    mask_idx = np.asarray(mask_idx, dtype=np.int64)
    if mask_idx.size == 0:
        raise DataError("masked loss requires a non-empty mask")
    diff = y_reg[mask_idx] - targets_reg[mask_idx]
    l_reg = float(_smooth_l1(diff).mean())
    logp = _log_softmax(logits[mask_idx])
    l_cls = float(-logp[np.arange(mask_idx.size), targets_cls[mask_idx]].mean())
    return l_reg, l_cls, lambda_reg * l_reg + lambda_cls * l_cls


def loss_output_grads(
    y_reg: np.ndarray,
    logits: np.ndarray,
    targets_reg: np.ndarray,
    targets_cls: np.ndarray,
    mask_idx: np.ndarray,
    lambda_reg: float,
    lambda_cls: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the combined loss w.r.t. both head outputs.

    Unmasked rows get exactly zero gradient; they contribute nothing.
    """
    mask_idx = np.asarray(mask_idx, dtype=np.int64)
    k = mask_idx.size
    d_y_reg = np.zeros_like(y_reg)
    d_logits = np.zeros_like(logits)
    diff = y_reg[mask_idx] - targets_reg[mask_idx]
    d_y_reg[mask_idx] = lambda_reg * _smooth_l1_grad(diff) / (k * diff.shape[1])
    probs = softmax(logits[mask_idx])
    probs[np.arange(k), targets_cls[mask_idx]] -= 1.0
    d_logits[mask_idx] = lambda_cls * probs / k
    return d_y_reg, d_logits


def snapshot_loss(
    params: ModelParams,
    snapshot: GraphSnapshot,
    mask_idx: np.ndarray,
    lambda_reg: float = 1.0,
    lambda_cls: float = 1.0,
) -> tuple[float, float, float]:
    """Deterministic (inference-mode) loss of one snapshot under one mask."""
    state = forward(params, snapshot, mask=mask_idx)
    return masked_losses(
        state.y_reg, state.logits, snapshot.edge_targets_reg,
        snapshot.edge_targets_cls, mask_idx, lambda_reg, lambda_cls,
    )


class AdamW:
    """Adam with decoupled weight decay; decay skips 1-D arrays (biases, gains)."""

    def __init__(
        self,
        arrays: dict[str, np.ndarray],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ) -> None:
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in arrays.items()}

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in arrays.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g**2
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            if self.weight_decay and p.ndim > 1:
                p -= self.lr * self.weight_decay * p
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train(
    snapshots: Sequence[GraphSnapshot],
    config: TrainConfig,
    dims: ModelDims = ModelDims(),
    dropout: float = 0.2,
) -> tuple[ModelParams, TrainHistory]:
    """Train on benign snapshots; return best-validation parameters.

    A seeded snapshot-level split reserves ceil(validation_fraction * n)
    snapshots for validation, masked once with fixed seeded masks for
    comparability across epochs. Training masks are resampled per snapshot
    per epoch. Stops early after ``patience`` epochs without improvement.
    """
    n = len(snapshots)
    if n < 2:
        raise DataError(f"training needs at least 2 benign snapshots, got {n}")
    rng = np.random.default_rng(config.seed)
    n_val = int(math.ceil(config.validation_fraction * n))
    val_idx = set(rng.choice(n, size=n_val, replace=False).tolist())
    train_set = [s for i, s in enumerate(snapshots) if i not in val_idx]
    val_set = [s for i, s in enumerate(snapshots) if i in val_idx]
    if not train_set:
        raise DataError("validation split consumed every snapshot")

    val_rng = np.random.default_rng([config.seed, 7919])
    val_masks = [sample_mask(s.n_edges, config.mask_ratio, val_rng) for s in val_set]

    params = init_params(dims=dims, seed=config.seed, dropout=dropout)
    optimizer = AdamW(
        params.arrays,
        lr=config.learning_rate,
        weight_decay=config.weight_decay,
    )

    history = TrainHistory()
    best_params = params.copy()
    since_improvement = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train_set))
        sums = np.zeros(3)
        for idx in order:
            snap = train_set[idx]
            mask = sample_mask(snap.n_edges, config.mask_ratio, rng)
            state = forward(params, snap, mask=mask, training=True, rng=rng)
            losses = masked_losses(
                state.y_reg, state.logits, snap.edge_targets_reg,
                snap.edge_targets_cls, mask, config.lambda_reg, config.lambda_cls,
            )
            if not all(math.isfinite(v) for v in losses):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, window {snap.window_index}: "
                    f"{losses} (check learning rate and input standardization)"
                )
            d_y_reg, d_logits = loss_output_grads(
                state.y_reg, state.logits, snap.edge_targets_reg,
                snap.edge_targets_cls, mask, config.lambda_reg, config.lambda_cls,
            )
            grads = backward(params, state, d_y_reg, d_logits)
            optimizer.step(params.arrays, grads)
            sums += losses

        val_sums = np.zeros(3)
        for snap, mask in zip(val_set, val_masks):
            val_sums += snapshot_loss(
                params, snap, mask, config.lambda_reg, config.lambda_cls
            )
        train_mean = sums / len(train_set)
        val_mean = val_sums / len(val_set)
        history.epochs.append(
            {
                "epoch": epoch,
                "train_reg": train_mean[0],
                "train_cls": train_mean[1],
                "train_total": train_mean[2],
                "val_reg": val_mean[0],
                "val_cls": val_mean[1],
                "val_total": val_mean[2],
            }
        )
        if val_mean[2] < history.best_val_loss:
            history.best_val_loss = float(val_mean[2])
            history.best_epoch = epoch
            best_params = params.copy()
            since_improvement = 0
        else:
            since_improvement += 1
            if since_improvement >= config.patience:
                break

    return best_params, history


def gradient_check(
    params: ModelParams,
    snapshot: GraphSnapshot,
    mask_idx: np.ndarray,
    lambda_reg: float = 1.0,
    lambda_cls: float = 1.0,
    step: float = 1e-5,
    min_coords: int = 50,
    seed: int = 0,
    corrupt: Callable[[dict[str, np.ndarray]], dict[str, np.ndarray]] | None = None,
) -> float:
    """Max relative error between analytic gradients and central differences.

    Coordinates are sampled to span every parameter group: per group, the
    largest-magnitude gradient entry plus seeded random entries, at least
    ``min_coords`` in total. Runs in inference mode (no dropout) so both
    sides evaluate the same deterministic function. ``corrupt`` can rewrite
    the analytic gradients to verify that broken gradients are detected.
    """
    state = forward(params, snapshot, mask=mask_idx)
    d_y_reg, d_logits = loss_output_grads(
        state.y_reg, state.logits, snapshot.edge_targets_reg,
        snapshot.edge_targets_cls, mask_idx, lambda_reg, lambda_cls,
    )
    grads = backward(params, state, d_y_reg, d_logits)
    if corrupt is not None:
        grads = corrupt(grads)

    rng = np.random.default_rng(seed)
    names = list(params.arrays)
    per_group = max(1, int(math.ceil(min_coords / len(names))))
    worst = 0.0
    for name in names:
        arr = params.arrays[name]
        flat_grad = grads[name].ravel()
        picks = {int(np.argmax(np.abs(flat_grad)))}
        while len(picks) < min(per_group + 1, arr.size):
            picks.add(int(rng.integers(arr.size)))
        flat = arr.ravel()
        for pos in sorted(picks):
            original = flat[pos]
            flat[pos] = original + step
            _, _, up = snapshot_loss(params, snapshot, mask_idx, lambda_reg, lambda_cls)
            flat[pos] = original - step
            _, _, down = snapshot_loss(params, snapshot, mask_idx, lambda_reg, lambda_cls)
            flat[pos] = original
            fd = (up - down) / (2.0 * step)
            analytic = flat_grad[pos]
            denom = max(abs(analytic), abs(fd), 1e-6)
            worst = max(worst, abs(analytic - fd) / denom)
    return worst
