"""Comparison detectors over node features: Isolation Forest and an MLP autoencoder.

Both consume the same graph snapshots and the same chronological split as
the main model. The Isolation Forest runs on raw node features; the
autoencoder on standardized ones, scoring nodes by mean absolute
reconstruction error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import IsolationForest

from .errors import DataError, NumericError
from .training import AdamW


@dataclass
class IsoForestModel:
    """200 seeded isolation trees, each on an independent subsample.

    The anomaly score is 2 ** (-E[path length] / c(subsample)) with the
    standard harmonic path-length normalizer; higher means more anomalous.
    The tree depth cap is ceil(log2(subsample)).
    """

    forest: IsolationForest
    n_trees: int
    subsample: int
    seed: int

    @property
    def max_depth(self) -> int:
        return int(math.ceil(math.log2(max(self.subsample, 2))))


def iforest_fit(
    rows: np.ndarray, seed: int = 0, n_trees: int = 200, subsample: int = 256
) -> IsoForestModel:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise DataError("Isolation Forest needs at least 2 training rows")
    effective = min(subsample, rows.shape[0])
    forest = IsolationForest(
        n_estimators=n_trees, max_samples=effective, random_state=seed
    )
    forest.fit(rows)
    return IsoForestModel(forest=forest, n_trees=n_trees, subsample=effective, seed=seed)


def iforest_score(model: IsoForestModel, rows: np.ndarray) -> np.ndarray:
    """Anomaly scores in (0, 1); negated sklearn score_samples is exactly
    2 ** (-E[path length] / c(n))."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    return -model.forest.score_samples(rows)


@dataclass
class AEModel:
    """51 -> 128 -> 32 -> 128 -> 51 autoencoder with rectified hidden layers."""

    arrays: dict[str, np.ndarray]

    @property
    def latent_width(self) -> int:
        return self.arrays["enc_w2"].shape[1]

    @property
    def hidden_width(self) -> int:
        return self.arrays["enc_w1"].shape[1]


def _ae_shapes(in_dim: int, hidden: int, latent: int) -> dict[str, tuple[int, ...]]:
    return {
        "enc_w1": (in_dim, hidden),
        "enc_b1": (hidden,),
        "enc_w2": (hidden, latent),
        "enc_b2": (latent,),
        "dec_w1": (latent, hidden),
        "dec_b1": (hidden,),
        "dec_w2": (hidden, in_dim),
        "dec_b2": (in_dim,),
    }


def ae_init(
    in_dim: int = 51, hidden: int = 128, latent: int = 32, seed: int = 0
) -> AEModel:
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in _ae_shapes(in_dim, hidden, latent).items():
        if name.endswith("_b1") or name.endswith("_b2"):
            arrays[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return AEModel(arrays=arrays)


def _ae_forward(arrays: dict[str, np.ndarray], x: np.ndarray):
    h1 = np.maximum(x @ arrays["enc_w1"] + arrays["enc_b1"], 0.0)
    latent = h1 @ arrays["enc_w2"] + arrays["enc_b2"]
    h2 = np.maximum(latent @ arrays["dec_w1"] + arrays["dec_b1"], 0.0)
    out = h2 @ arrays["dec_w2"] + arrays["dec_b2"]
    return out, (x, h1, latent, h2)


def ae_fit(
    rows: np.ndarray,
    seed: int = 0,
    epochs: int = 30,
    learning_rate: float = 1e-3,
    batch_size: int = 1024,
    hidden: int = 128,
    latent: int = 32,
) -> AEModel:
    """Train with Adam on mean squared reconstruction error (benign rows only)."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise DataError("autoencoder needs a non-empty 2-D training matrix")
    rng = np.random.default_rng(seed)
    model = ae_init(in_dim=rows.shape[1], hidden=hidden, latent=latent, seed=seed)
    arrays = model.arrays
    optimizer = AdamW(arrays, lr=learning_rate, weight_decay=0.0)
    n = rows.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = rows[order[start : start + batch_size]]
            out, (x, h1, latent_v, h2) = _ae_forward(arrays, batch)
            diff = out - x
            loss = float((diff**2).mean())
            if not math.isfinite(loss):
                raise NumericError("autoencoder training diverged to a non-finite loss")
            d_out = 2.0 * diff / diff.size
            grads = {
                "dec_w2": h2.T @ d_out,
                "dec_b2": d_out.sum(axis=0),
            }
            d_h2 = (d_out @ arrays["dec_w2"].T) * (h2 > 0)
            grads["dec_w1"] = latent_v.T @ d_h2
            grads["dec_b1"] = d_h2.sum(axis=0)
            d_latent = d_h2 @ arrays["dec_w1"].T
            grads["enc_w2"] = h1.T @ d_latent
            grads["enc_b2"] = d_latent.sum(axis=0)
            d_h1 = (d_latent @ arrays["enc_w2"].T) * (h1 > 0)
            grads["enc_w1"] = x.T @ d_h1
            grads["enc_b1"] = d_h1.sum(axis=0)
            optimizer.step(arrays, grads)
    return model


def ae_score(model: AEModel, rows: np.ndarray) -> np.ndarray:
    """Mean absolute reconstruction error per row."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    out, _ = _ae_forward(model.arrays, rows)
    return np.abs(out - rows).mean(axis=1)
