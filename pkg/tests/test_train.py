"""Loss, optimizer, augmentation, and training-loop tests.

The optimizer is validated against a plain textbook reference update coded
inline, plus closed-form special cases (pure decay, zero gradients).
"""

import numpy as np
import pytest

from uhnet import checkpoint
from uhnet.errors import ConfigError, GradientError
from uhnet.model import ModelConfig, build
from uhnet.optim import AdamW
from uhnet.tensor import Tensor
from uhnet.train import TrainConfig, augment, balanced_bce, fit


class TestBalancedBCE:
    """Class-balanced cross-entropy analytics."""

    def test_uniform_half_on_balanced_targets_is_ln2(self):
        pred = np.full((1, 1, 2, 2), 0.5, dtype=np.float32)
        target = np.array([[[[1, 1], [0, 0]]]], dtype=np.float32)
        loss, _ = balanced_bce(pred, target)
        assert loss == pytest.approx(np.log(2), abs=1e-7)

    def test_perfect_prediction_is_tiny(self):
        target = np.array([[[[1, 0], [0, 1]]]], dtype=np.float32)
        loss, _ = balanced_bce(target.copy(), target)
        assert loss < 1e-5

    def test_reduces_to_plain_bce_when_balanced(self):
        rng = np.random.default_rng(0)
        pred = rng.uniform(0.1, 0.9, (1, 1, 4, 4))
        target = np.zeros((1, 1, 4, 4))
        target[..., :2] = 1.0
        loss, _ = balanced_bce(pred, target)
        plain = -np.mean(target * np.log(pred) + (1 - target) * np.log(1 - pred))
        assert loss == pytest.approx(plain, abs=1e-12)

    def test_all_ignored_gives_zero(self):
        pred = np.random.default_rng(1).random((1, 1, 3, 3))
        target = np.full_like(pred, 0.25)
        loss, grad = balanced_bce(pred, target)
        assert loss == 0.0
        assert np.all(grad == 0.0)

    def test_ignored_pixels_get_zero_gradient(self):
        pred = np.full((1, 1, 2, 2), 0.5)
        target = np.array([[[[1.0, 0.25], [0.0, 0.25]]]])
        _, grad = balanced_bce(pred, target)
        assert grad[0, 0, 0, 1] == 0.0 and grad[0, 0, 1, 1] == 0.0
        assert grad[0, 0, 0, 0] != 0.0 and grad[0, 0, 1, 0] != 0.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        pred = rng.uniform(0.2, 0.8, (1, 1, 3, 3))
        target = (rng.random((1, 1, 3, 3)) < 0.4).astype(np.float64)
        target[0, 0, 0, 0] = 0.25
        _, grad = balanced_bce(pred, target)
        eps = 1e-6
        for idx in np.ndindex(pred.shape):
            up = pred.copy()
            up[idx] += eps
            down = pred.copy()
            down[idx] -= eps
            numeric = (balanced_bce(up, target)[0] - balanced_bce(down, target)[0]) / (2 * eps)
            assert grad[idx] == pytest.approx(numeric, abs=1e-7)

    def test_heavier_weight_on_rare_positives(self):
        """With mostly-negative targets, a wrong positive costs more than a
        wrong negative of the same confidence."""
        target = np.zeros((1, 1, 4, 4))
        target[0, 0, 0, 0] = 1.0
        miss_pos = np.full_like(target, 0.001)  # positive predicted 0.001
        miss_pos[target == 0] = 0.001
        miss_neg = np.full_like(target, 0.001)
        miss_neg[0, 0, 0, 0] = 0.999
        miss_neg[0, 0, 1, 1] = 0.999  # one negative predicted 0.999
        assert balanced_bce(miss_pos, target)[0] > balanced_bce(miss_neg, target)[0]


def reference_adamw(p, grads, lr, b1, b2, eps, wd, decay=True):
    """Textbook decoupled-weight-decay Adam, one parameter, explicit loop."""
    p = p.astype(np.float64).copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = p - lr * (mhat / (np.sqrt(vhat) + eps) + (wd * p if decay else 0.0))
    return p


class TestAdamW:
    """Optimizer semantics against the reference update."""

    def _param(self, data):
        t = Tensor(np.asarray(data, dtype=np.float32), requires_grad=True)
        return t

    def test_trajectory_matches_reference(self):
        rng = np.random.default_rng(3)
        p = self._param(rng.standard_normal((4, 3)))
        start = p.data.copy()
        grads = [rng.standard_normal((4, 3)).astype(np.float32) for _ in range(5)]
        opt = AdamW({"w": p}, lr=0.01, weight_decay=0.004)
        for g in grads:
            p.grad = g.copy()
            opt.step()
        want = reference_adamw(start, grads, 0.01, 0.9, 0.999, 1e-8, 0.004)
        assert np.allclose(p.data, want, atol=1e-6)

    def test_norm_parameters_skip_decay(self):
        rng = np.random.default_rng(4)
        scale = self._param(rng.standard_normal(3))
        start = scale.data.copy()
        grads = [rng.standard_normal(3).astype(np.float32) for _ in range(3)]
        opt = AdamW({"block.norm1.scale": scale}, lr=0.01, weight_decay=0.5)
        for g in grads:
            scale.grad = g.copy()
            opt.step()
        want = reference_adamw(start, grads, 0.01, 0.9, 0.999, 1e-8, 0.5, decay=False)
        assert np.allclose(scale.data, want, atol=1e-6)

    def test_zero_grads_no_decay_is_identity(self):
        p = self._param([1.0, -2.0, 3.0])
        opt = AdamW({"w": p}, lr=0.1, weight_decay=0.0)
        for _ in range(4):
            p.grad = np.zeros_like(p.data)
            opt.step()
        assert np.array_equal(p.data, np.array([1.0, -2.0, 3.0], dtype=np.float32))

    def test_zero_grads_pure_decay_is_exponential_shrink(self):
        p = self._param([2.0])
        opt = AdamW({"w": p}, lr=0.01, weight_decay=0.1)
        for _ in range(10):
            p.grad = np.zeros_like(p.data)
            opt.step()
        assert p.data[0] == pytest.approx(2.0 * (1 - 0.001) ** 10, rel=1e-5)

    def test_unset_grad_means_no_update(self):
        p = self._param([1.0])
        opt = AdamW({"w": p}, lr=0.1, weight_decay=0.1)
        opt.step()  # p.grad is None
        assert p.data[0] == 1.0

    def test_nan_gradient_rejects_step_and_names_parameter(self):
        a = self._param([1.0])
        b = self._param([2.0])
        opt = AdamW({"good": a, "bad": b}, lr=0.1)
        a.grad = np.array([0.5], dtype=np.float32)
        b.grad = np.array([np.nan], dtype=np.float32)
        with pytest.raises(GradientError, match="bad"):
            opt.step()
        # the rejected step must not have touched anything
        assert a.data[0] == 1.0 and b.data[0] == 2.0


class TestAugment:
    """Flip / scale / rotate with the label riding along."""

    def _pair(self, h=8, w=6):
        rng = np.random.default_rng(5)
        image = rng.random((1, 3, h, w)).astype(np.float32)
        label = (rng.random((1, 1, h, w)) < 0.3).astype(np.float32)
        return image, label

    def test_identity_config_is_noop(self):
        image, label = self._pair()
        config = TrainConfig(hflip=False, scales=(1.0,), rotate=False)
        out_i, out_l = augment(image, label, config, np.random.default_rng(0))
        assert np.array_equal(out_i, image) and np.array_equal(out_l, label)

    def test_hflip_is_exact_mirror_when_it_fires(self):
        image, label = self._pair()
        config = TrainConfig(hflip=True)
        flipped = identity = 0
        for seed in range(20):
            out_i, out_l = augment(image, label, config, np.random.default_rng(seed))
            if np.array_equal(out_i, image[..., ::-1]):
                flipped += 1
                assert np.array_equal(out_l, label[..., ::-1])
            else:
                identity += 1
                assert np.array_equal(out_i, image)
        assert flipped > 0 and identity > 0

    def test_scaling_resizes_and_rebinarizes(self):
        image, label = self._pair(8, 8)
        config = TrainConfig(scales=(0.5,))
        out_i, out_l = augment(image, label, config, np.random.default_rng(0))
        assert out_i.shape == (1, 3, 4, 4)
        assert out_l.shape == (1, 1, 4, 4)
        assert set(np.unique(out_l)) <= {0.0, 1.0}

    def test_rotation_is_a_quarter_turn(self):
        image, label = self._pair(6, 6)
        config = TrainConfig(rotate=True)
        seen = set()
        for seed in range(20):
            out_i, _ = augment(image, label, config, np.random.default_rng(seed))
            for k in range(4):
                if np.array_equal(out_i, np.rot90(image, k, axes=(2, 3))):
                    seen.add(k)
                    break
            else:
                pytest.fail("output is not any quarter-turn of the input")
        assert len(seen) >= 3

    def test_bad_scales_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(scales=())
        with pytest.raises(ConfigError):
            TrainConfig(scales=(0.0, 1.0))


class TestFit:
    """The training loop end to end on tiny synthetic pairs."""

    def _dataset(self, n=3, size=12, seed=6):
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(n):
            image = rng.random((1, 3, size, size)).astype(np.float32)
            label = (rng.random((1, 1, size, size)) < 0.25).astype(np.float32)
            out.append((image, label))
        return out

    def _model(self, seed=0):
        return build(ModelConfig((4, 4, 4), blocks_per_stage=1), seed=seed)

    def test_deterministic_given_seed(self):
        ds = self._dataset()
        h1 = fit(self._model(), ds, TrainConfig(epochs=2, seed=1))
        h2 = fit(self._model(), ds, TrainConfig(epochs=2, seed=1))
        assert h1 == h2

    def test_zero_lr_zero_decay_leaves_parameters(self):
        model = self._model()
        before = {k: t.data.copy() for k, t in model.named_parameters().items()}
        fit(model, self._dataset(), TrainConfig(epochs=1, lr=0.0, weight_decay=0.0))
        after = model.named_parameters()
        assert all(np.array_equal(before[k], after[k].data) for k in before)

    def test_writes_checkpoints_and_loss_csv(self, tmp_path):
        model = self._model()
        fit(model, self._dataset(n=2), TrainConfig(epochs=2), out_dir=tmp_path)
        assert (tmp_path / "epoch_1.uhck").exists()
        assert (tmp_path / "epoch_2.uhck").exists()
        lines = (tmp_path / "losses.csv").read_text().strip().splitlines()
        assert lines[0] == "epoch,step,loss"
        assert len(lines) == 1 + 2 * 2  # header + epochs * samples

    def test_final_checkpoint_matches_model_state(self, tmp_path):
        model = self._model()
        fit(model, self._dataset(n=2), TrainConfig(epochs=1), out_dir=tmp_path)
        loaded = checkpoint.load(tmp_path / "epoch_1.uhck")
        image = self._dataset(n=1)[0][0]
        assert np.array_equal(model.predict(image), loaded.predict(image))

    def test_size_mismatch_skipped_with_warning(self):
        ds = self._dataset(n=2)
        bad_image = np.zeros((1, 3, 10, 10), dtype=np.float32)
        bad_label = np.zeros((1, 1, 8, 8), dtype=np.float32)
        ds.append((bad_image, bad_label))
        with pytest.warns(UserWarning, match="does not match"):
            history = fit(self._model(), ds, TrainConfig(epochs=1))
        assert np.isfinite(history[0])

    def test_all_ignored_label_skipped_with_warning(self):
        ds = self._dataset(n=2)
        image = np.zeros((1, 3, 8, 8), dtype=np.float32)
        label = np.full((1, 1, 8, 8), 0.25, dtype=np.float32)
        ds.append((image, label))
        with pytest.warns(UserWarning, match="ignored"):
            fit(self._model(), ds, TrainConfig(epochs=1))

    def test_batched_accumulation_steps_once_per_batch(self):
        """batch_size=2 over 4 samples takes 2 optimizer steps per epoch and
        still trains deterministically."""
        ds = self._dataset(n=4)
        h = fit(self._model(), ds, TrainConfig(epochs=1, batch_size=2, seed=3))
        h2 = fit(self._model(), ds, TrainConfig(epochs=1, batch_size=2, seed=3))
        assert h == h2 and len(h) == 1

    def test_loss_drops_on_repeated_data(self):
        """A short run on two images should already reduce the loss."""
        ds = self._dataset(n=2, size=16, seed=8)
        history = fit(self._model(seed=2), ds, TrainConfig(epochs=8, seed=2))
        assert history[-1] < history[0]
