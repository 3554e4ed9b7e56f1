import math

import numpy as np
import pytest

from evgaze.core import SamplePair
from evgaze.encoder import EncodedFrame
from evgaze.model import (
    AdamState,
    ModelError,
    NetworkSpec,
    TrainConfig,
    adam_init,
    adam_step,
    downsample_input,
    forward,
    init_params,
    load_checkpoint,
    loss_and_grad,
    loss_centroid,
    loss_theta,
    save_checkpoint,
    tensorize,
    train,
)

TINY = NetworkSpec(input_hw=(8, 8), channels=(4, 6), head_hidden=8)


def make_pair(rng, hw=8, target=None):
    fa = EncodedFrame(0, rng.uniform(0, 1, (6, hw, hw)).astype(np.float32))
    fb = EncodedFrame(1, rng.uniform(0, 1, (6, hw, hw)).astype(np.float32))
    if target is None:
        target = rng.uniform(0.2, 0.8, (2, 2))
    return SamplePair(fa, fb, target, 0, 1)


def numeric_gradients(spec, params, xa, xb, y, cfg, step=1e-5):
    """Central finite differences of the total loss, parameter by parameter."""

    def total_loss():
        loss, _, _ = loss_and_grad(spec, params, xa, xb, y, cfg)
        return loss

    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = total_loss()
            flat[i] = orig - step
            down = total_loss()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        out[name] = g
    return out


def assert_gradients_match(analytic, numeric, rtol=1e-4, atol=1e-9):
    for name in analytic:
        a = analytic[name].reshape(-1)
        n = numeric[name].reshape(-1)
        denom = np.maximum(np.abs(a) + np.abs(n), 1e-8)
        rel = np.abs(a - n) / denom
        ok = (rel < rtol) | (np.abs(a - n) < atol)
        assert np.all(ok), f"{name}: worst rel err {rel[~ok].max():.2e}"


class TestDownsample:
    def test_constant_frame(self):
        frame = EncodedFrame(0, np.full((6, 8, 8), 0.7, dtype=np.float32))
        out = downsample_input(frame, (4, 4))
        np.testing.assert_allclose(out, 0.7, rtol=1e-6)

    def test_2x2_mean(self):
        ch = np.zeros((6, 2, 2), dtype=np.float32)
        ch[:, 1, :] = 1.0
        out = downsample_input(EncodedFrame(0, ch), (1, 1))
        np.testing.assert_allclose(out, 0.5)

    def test_energy_preserved(self):
        rng = np.random.default_rng(0)
        frame = EncodedFrame(0, rng.uniform(0, 1, (6, 16, 16)).astype(np.float32))
        out = downsample_input(frame, (4, 4))
        assert abs(out.mean() - frame.channels.mean()) < 1e-6

    def test_upsample_rejected(self):
        frame = EncodedFrame(0, np.zeros((6, 4, 4), dtype=np.float32))
        with pytest.raises(ModelError):
            downsample_input(frame, (8, 8))


class TestForward:
    def test_zero_params_give_half(self):
        params = init_params(TINY, seed=0)
        for k in params:
            params[k] = np.zeros_like(params[k])
        x = np.random.default_rng(0).uniform(0, 1, (3, 6, 8, 8)).astype(np.float32)
        pred = forward(TINY, params, x, x)
        np.testing.assert_allclose(pred, 0.5)

    def test_reproducible(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(0, 1, (2, 6, 8, 8)).astype(np.float32)
        a = forward(TINY, init_params(TINY, seed=7), x, x)
        b = forward(TINY, init_params(TINY, seed=7), x, x)
        np.testing.assert_array_equal(a, b)

    def test_identical_rows_for_identical_inputs(self):
        rng = np.random.default_rng(2)
        one = rng.uniform(0, 1, (1, 6, 8, 8)).astype(np.float32)
        batch = np.repeat(one, 4, axis=0)
        pred = forward(TINY, init_params(TINY, seed=3), batch, batch)
        for row in pred[1:]:
            np.testing.assert_array_equal(row, pred[0])

    def test_shape_mismatch(self):
        x = np.zeros((1, 6, 4, 4), dtype=np.float32)
        with pytest.raises(ModelError):
            forward(TINY, init_params(TINY, seed=0), x, x)


class TestLosses:
    def test_centroid_zero_at_optimum(self):
        c = np.array([[[0.1, 0.2], [0.3, 0.4]]])
        loss, grad = loss_centroid(c, c.copy())
        assert loss == 0.0

    def test_centroid_hand_value(self):
        c = np.array([[[0.0, 0.0], [3.0, 4.0]]])
        p = np.array([[[1.0, 1.0], [4.0, 5.0]]])
        loss, _ = loss_centroid(c, p, metric="l1")
        assert loss == pytest.approx(4.0)

    def test_centroid_l1_homogeneous(self):
        rng = np.random.default_rng(0)
        c = rng.uniform(0, 1, (5, 2, 2))
        p = rng.uniform(0, 1, (5, 2, 2))
        l1, _ = loss_centroid(c, p)
        l2, _ = loss_centroid(2 * c, 2 * p)
        assert l2 == pytest.approx(2 * l1)

    def test_centroid_euclidean_metric(self):
        c = np.array([[[0.0, 0.0], [0.0, 0.0]]])
        p = np.array([[[3.0, 4.0], [0.0, 0.0]]])
        loss, _ = loss_centroid(c, p, metric="l2")
        assert loss == pytest.approx(5.0)

    def test_theta_identical_directions(self):
        c = np.array([[[0.0, 0.0], [1.0, 0.0]]])
        loss, _ = loss_theta(c, c.copy())
        assert loss < 1e-3  # clamp-induced offset only

    def test_theta_orthogonal(self):
        c = np.array([[[0.0, 0.0], [1.0, 0.0]]])
        p = np.array([[[0.0, 0.0], [0.0, 1.0]]])
        loss, _ = loss_theta(c, p)
        assert loss == pytest.approx(math.pi / 2, abs=1e-6)

    def test_theta_opposite(self):
        c = np.array([[[0.0, 0.0], [1.0, 0.0]]])
        p = np.array([[[1.0, 0.0], [0.0, 0.0]]])
        loss, _ = loss_theta(c, p)
        assert loss == pytest.approx(math.pi, abs=1e-3)

    def test_theta_fixation_contributes_zero(self):
        c = np.array([[[0.5, 0.5], [0.5, 0.5]]])
        p = np.array([[[0.1, 0.1], [0.9, 0.9]]])
        loss, grad = loss_theta(c, p)
        assert loss == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_theta_translation_and_scale_invariant(self):
        rng = np.random.default_rng(1)
        c = rng.uniform(0, 1, (4, 2, 2))
        p = rng.uniform(0, 1, (4, 2, 2))
        base, _ = loss_theta(c, p)
        shifted, _ = loss_theta(c + 0.3, p - 0.2)
        assert shifted == pytest.approx(base, abs=1e-9)
        scaled, _ = loss_theta(c, p[:, 0:1, :] + 3.0 * (p - p[:, 0:1, :]))
        assert scaled == pytest.approx(base, abs=1e-9)


class TestGradients:
    @pytest.mark.parametrize("mode", ["centroid", "centroid+theta"])
    def test_matches_finite_differences(self, mode):
        # seed 4 keeps every ReLU preactivation well away from its kink,
        # where central differences would be meaningless
        rng = np.random.default_rng(4)
        params = init_params(TINY, seed=4, dtype=np.float64)
        xa = rng.uniform(0, 1, (2, 6, 8, 8))
        xb = rng.uniform(0, 1, (2, 6, 8, 8))
        # well-separated targets keep theta away from the acos clamp
        y = np.array([[[0.2, 0.3], [0.8, 0.6]],
                      [[0.7, 0.2], [0.3, 0.9]]])
        cfg = TrainConfig(loss_mode=mode, batch_size=2, epochs=1)
        _, grads, _ = loss_and_grad(TINY, params, xa, xb, y, cfg)
        numeric = numeric_gradients(TINY, params, xa, xb, y, cfg)
        assert_gradients_match(grads, numeric)

    def test_duplicated_sample_doubles_contribution(self):
        rng = np.random.default_rng(5)
        params = init_params(TINY, seed=5, dtype=np.float64)
        xa = rng.uniform(0, 1, (1, 6, 8, 8))
        xb = rng.uniform(0, 1, (1, 6, 8, 8))
        y = np.array([[[0.2, 0.3], [0.8, 0.6]]])
        cfg = TrainConfig(loss_mode="centroid", batch_size=2)
        _, g1, _ = loss_and_grad(TINY, params, xa, xb, y, cfg)
        xa2, xb2, y2 = (np.repeat(a, 2, axis=0) for a in (xa, xb, y))
        _, g2, _ = loss_and_grad(TINY, params, xa2, xb2, y2, cfg)
        # batch-mean: the duplicated sample's doubled sum cancels the 1/N
        for k in g1:
            np.testing.assert_allclose(g2[k], g1[k], rtol=1e-10, atol=1e-12)


class TestAdam:
    def test_zero_gradient_no_change(self):
        params = {"w": np.array([1.0, 2.0], dtype=np.float32)}
        grads = {"w": np.zeros(2, dtype=np.float32)}
        state = adam_init(params)
        adam_step(params, grads, state, TrainConfig())
        np.testing.assert_array_equal(params["w"], [1.0, 2.0])

    def test_first_step_magnitude(self):
        cfg = TrainConfig(learning_rate=1e-3)
        params = {"w": np.zeros(4, dtype=np.float64)}
        state = adam_init(params)
        adam_step(params, {"w": np.ones(4)}, state, cfg)
        # bias-corrected m_hat / sqrt(v_hat) = 1 on the first step
        np.testing.assert_allclose(params["w"], -cfg.learning_rate, rtol=1e-6)

    def test_nan_gradient_aborts(self):
        params = {"w": np.zeros(2)}
        grads = {"w": np.array([np.nan, 0.0])}
        with pytest.raises(ModelError, match="w"):
            adam_step(params, grads, adam_init(params), TrainConfig())

    def test_deterministic_updates(self):
        cfg = TrainConfig()
        runs = []
        for _ in range(2):
            params = {"w": np.full(3, 0.5, dtype=np.float32)}
            state = adam_init(params)
            for step in range(10):
                adam_step(params, {"w": np.full(3, 0.1 * (step + 1), dtype=np.float32)},
                          state, cfg)
            runs.append(params["w"].copy())
        np.testing.assert_array_equal(runs[0], runs[1])


def overfit_pairs(n=8):
    """Memorizable set: each pair carries a distinctive blocky pattern."""
    rng = np.random.default_rng(99)
    pairs = []
    for i in range(n):
        base = np.zeros((6, 8, 8), dtype=np.float32)
        base[:, (i // 2) * 2:(i // 2) * 2 + 2, (i % 2) * 4:(i % 2) * 4 + 4] = 1.0
        base += 0.1 * i / n
        fa = EncodedFrame(0, base)
        fb = EncodedFrame(1, np.roll(base, 1, axis=1))
        pairs.append(SamplePair(fa, fb, rng.uniform(0.2, 0.8, (2, 2)), 0, 1))
    return pairs


OVERFIT_CFG = TrainConfig(epochs=200, batch_size=2, learning_rate=1e-2,
                          loss_mode="centroid", lr_schedule="cosine", seed=1)


class TestTraining:
    def test_overfit_sanity(self):
        result = train(overfit_pairs(), None, TINY, OVERFIT_CFG)
        first = result.history[0][1]
        last = result.history[-1][1]
        assert last <= 0.05 * first
        assert not result.diverged

    def test_loss_log_row_count(self, tmp_path):
        pairs = overfit_pairs(4)
        cfg = TrainConfig(epochs=5, batch_size=4, seed=0)
        path = tmp_path / "losses.csv"
        train(pairs, None, TINY, cfg, losses_csv=path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,train_loss,test_loss"
        assert len(lines) == 6

    def test_combined_loss_is_sum(self):
        rng = np.random.default_rng(4)
        params = init_params(TINY, seed=4)
        xa = rng.uniform(0, 1, (3, 6, 8, 8)).astype(np.float32)
        xb = rng.uniform(0, 1, (3, 6, 8, 8)).astype(np.float32)
        y = rng.uniform(0.2, 0.8, (3, 2, 2)).astype(np.float32)
        lam = 0.7
        both, _, pred = loss_and_grad(
            TINY, params, xa, xb, y, TrainConfig(loss_mode="centroid+theta", theta_weight=lam))
        c_only, _ = loss_centroid(y, pred)
        t_only, _ = loss_theta(y, pred)
        assert both == pytest.approx(c_only + lam * t_only, rel=1e-6)

    def test_bit_reproducible(self):
        pairs = overfit_pairs(6)
        cfg = TrainConfig(epochs=10, batch_size=4, seed=7)
        a = train(pairs, None, TINY, cfg)
        b = train(pairs, None, TINY, cfg)
        assert a.history == b.history
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = init_params(TINY, seed=2)
        state = adam_init(params)
        state.t = 17
        path = tmp_path / "model.evgm"
        save_checkpoint(path, TINY, params, state, epoch=9)
        spec2, params2, state2, epoch = load_checkpoint(path)
        assert spec2 == TINY
        assert epoch == 9 and state2.t == 17
        for k in params:
            np.testing.assert_array_equal(params2[k], params[k])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.evgm"
        path.write_bytes(b"XXXX" + b"\0" * 20)
        with pytest.raises(ModelError, match="magic"):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        params = init_params(TINY, seed=2)
        path = tmp_path / "model.evgm"
        save_checkpoint(path, TINY, params, adam_init(params), epoch=0)
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(ModelError, match="truncated"):
            load_checkpoint(path)
