"""masked losses, training loop behavior, and the gradient check."""

import math

import numpy as np
import pytest

from flowgad.errors import DataError
from flowgad.model import ModelDims, forward, init_params, jitter_params
from flowgad.training import (
    TrainConfig,
    gradient_check,
    loss_output_grads,
    masked_losses,
    sample_mask,
    snapshot_loss,
    train,
)

DIMS = ModelDims(hidden=16)


class TestSampleMask:
    def test_ratio_floor(self):
        rng = np.random.default_rng(0)
        assert len(sample_mask(10, 0.2, rng)) == 2

    def test_minimum_one(self):
        rng = np.random.default_rng(0)
        assert len(sample_mask(1, 0.2, rng)) == 1
        assert len(sample_mask(4, 0.2, rng)) == 1

    def test_seed_determinism(self):
        m1 = sample_mask(50, 0.2, np.random.default_rng(7))
        m2 = sample_mask(50, 0.2, np.random.default_rng(7))
        assert np.array_equal(m1, m2)

    def test_without_replacement(self):
        mask = sample_mask(100, 0.5, np.random.default_rng(1))
        assert len(np.unique(mask)) == len(mask) == 50


class TestMaskedLosses:
    def test_perfect_predictions_and_uniform_logits(self):
        targets = np.array([[1.0, 2.0, 3.0], [0.5, 0.5, 0.5]])
        logits = np.zeros((2, 3))
        cls = np.array([0, 2])
        l_reg, l_cls, total = masked_losses(
            targets.copy(), logits, targets, cls, np.array([0, 1])
        )
        assert l_reg == 0.0
        assert l_cls == pytest.approx(math.log(3), abs=1e-12)
        assert total == pytest.approx(math.log(3), abs=1e-12)

    def test_smooth_l1_worked_example(self):
        y = np.array([[2.0, 0.0, 0.0]])
        targets = np.zeros((1, 3))
        logits = np.array([[10.0, 0.0, 0.0]])
        l_reg, _, _ = masked_losses(y, logits, targets, np.array([0]), np.array([0]))
        assert l_reg == pytest.approx((1.5 + 0.0 + 0.0) / 3, abs=1e-12)

    def test_smooth_l1_quadratic_region(self):
        y = np.array([[0.5, -0.2, 0.0]])
        targets = np.zeros((1, 3))
        l_reg, _, _ = masked_losses(
            y, np.zeros((1, 3)), targets, np.array([0]), np.array([0])
        )
        assert l_reg == pytest.approx((0.5 * 0.25 + 0.5 * 0.04) / 3, abs=1e-12)

    def test_unmasked_targets_do_not_matter(self):
        rng = np.random.default_rng(2)
        y = rng.normal(size=(6, 3))
        logits = rng.normal(size=(6, 3))
        targets = rng.normal(size=(6, 3))
        cls = rng.integers(0, 3, size=6)
        mask = np.array([1, 4])
        base = masked_losses(y, logits, targets, cls, mask)
        tampered = targets.copy()
        tampered[[0, 2, 3, 5]] = 999.0
        cls_t = cls.copy()
        cls_t[[0, 2, 3, 5]] = (cls_t[[0, 2, 3, 5]] + 1) % 3
        after = masked_losses(y, logits, tampered, cls_t, mask)
        assert base == after  # exact

    def test_empty_mask_fatal(self):
        with pytest.raises(DataError):
            masked_losses(
                np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 3)),
                np.zeros(2, dtype=int), np.array([], dtype=int),
            )

    def test_decomposition_exact(self):
        rng = np.random.default_rng(3)
        y = rng.normal(size=(5, 3))
        logits = rng.normal(size=(5, 3))
        targets = rng.normal(size=(5, 3))
        cls = rng.integers(0, 3, size=5)
        mask = np.array([0, 2, 4])
        for lr, lc in [(1.0, 1.0), (2.5, 0.0), (0.0, 3.0), (0.7, 1.3)]:
            l_reg, l_cls, total = masked_losses(y, logits, targets, cls, mask, lr, lc)
            assert total == lr * l_reg + lc * l_cls

    def test_unmasked_rows_get_zero_output_grads(self):
        rng = np.random.default_rng(4)
        y = rng.normal(size=(6, 3))
        logits = rng.normal(size=(6, 3))
        targets = rng.normal(size=(6, 3))
        cls = rng.integers(0, 3, size=6)
        mask = np.array([1, 3])
        d_y, d_l = loss_output_grads(y, logits, targets, cls, mask, 1.0, 1.0)
        unmasked = [0, 2, 4, 5]
        assert np.all(d_y[unmasked] == 0.0) and np.all(d_l[unmasked] == 0.0)
        assert np.any(d_y[mask] != 0.0) and np.any(d_l[mask] != 0.0)


class TestTrain:
    def test_loss_decreases_early(self, tiny_benign_snapshots):
        config = TrainConfig(max_epochs=5, patience=5, seed=0)
        params, history = train(tiny_benign_snapshots, config, dims=DIMS)
        totals = [e["train_total"] for e in history.epochs]
        assert totals[1] < totals[0] and totals[2] < totals[0]

    def test_cls_weight_zero_reduces_objective(self, tiny_benign_snapshots):
        config = TrainConfig(max_epochs=3, patience=3, lambda_cls=0.0, seed=0)
        _, history = train(tiny_benign_snapshots, config, dims=DIMS)
        for epoch in history.epochs:
            assert epoch["train_total"] == epoch["train_reg"]
            assert epoch["val_total"] == epoch["val_reg"]

    def test_seed_determinism(self, tiny_benign_snapshots):
        config = TrainConfig(max_epochs=4, patience=4, seed=9)
        p1, h1 = train(tiny_benign_snapshots, config, dims=DIMS)
        p2, h2 = train(tiny_benign_snapshots, config, dims=DIMS)
        assert h1.to_dict() == h2.to_dict()
        for name in p1.arrays:
            assert np.array_equal(p1.arrays[name], p2.arrays[name])

    def test_early_stopping_returns_best(self, tiny_benign_snapshots):
        config = TrainConfig(max_epochs=25, patience=3, seed=1)
        params, history = train(tiny_benign_snapshots, config, dims=DIMS)
        vals = [e["val_total"] for e in history.epochs]
        assert history.best_val_loss == min(vals)
        assert vals[history.best_epoch] == history.best_val_loss
        # Returned parameters reproduce the recorded best validation loss.
        rng = np.random.default_rng([config.seed])
        n_val = math.ceil(config.validation_fraction * len(tiny_benign_snapshots))
        val_idx = set(rng.choice(len(tiny_benign_snapshots), size=n_val, replace=False).tolist())
        val_set = [s for i, s in enumerate(tiny_benign_snapshots) if i in val_idx]
        val_rng = np.random.default_rng([config.seed, 7919])
        total = 0.0
        for s in val_set:
            mask = sample_mask(s.n_edges, config.mask_ratio, val_rng)
            total += snapshot_loss(params, s, mask)[2]
        assert total / len(val_set) == pytest.approx(history.best_val_loss, abs=1e-12)

    def test_needs_two_snapshots(self, tiny_benign_snapshots):
        with pytest.raises(DataError):
            train(tiny_benign_snapshots[:1], TrainConfig(max_epochs=1))


class TestGradientCheck:
    def test_max_relative_error_small(self, toy_snapshot):
        params = jitter_params(init_params(ModelDims(), seed=1), seed=2)
        mask = sample_mask(toy_snapshot.n_edges, 0.2, np.random.default_rng(0))
        err = gradient_check(params, toy_snapshot, mask, seed=3)
        assert err <= 1e-4

    def test_corrupted_gradient_detected(self, toy_snapshot):
        params = jitter_params(init_params(ModelDims(), seed=1), seed=2)
        mask = sample_mask(toy_snapshot.n_edges, 0.2, np.random.default_rng(0))

        def corrupt(grads):
            grads["reg_w2"] = grads["reg_w2"] * 1.5
            return grads

        err = gradient_check(params, toy_snapshot, mask, seed=3, corrupt=corrupt)
        assert err >= 1e-2

    def test_training_mode_forward_changes_under_dropout(self, toy_snapshot):
        params = init_params(DIMS, seed=0, dropout=0.5)
        rng = np.random.default_rng(0)
        out1 = forward(params, toy_snapshot, training=True, rng=rng).y_reg
        out2 = forward(params, toy_snapshot, training=True, rng=rng).y_reg
        assert not np.array_equal(out1, out2)
