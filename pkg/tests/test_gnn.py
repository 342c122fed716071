"""Forecast model: forward oracle, gradient checks, persistence, training."""

import numpy as np
import pytest

from fvsim.errors import (
    ConfigError,
    InsufficientHistory,
    NonFiniteValue,
    ShapeError,
)
from fvsim.gnn import StGnn, TrainConfig, init_params
from fvsim.graph import path_graph


def tiny_model(n=3, tau=4, seed=0, **kw):
    cfg = TrainConfig(tau=tau, seed=seed, **kw)
    return StGnn(path_graph(n), cfg)


def reference_forward(model, x):
    """Straight-line numpy re-implementation of the whole forward pass."""

    def softmax_rows(m):
        e = np.exp(m - m.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    def conv3_same(m, w, b):
        n, t = m.shape
        mp = np.zeros((n, t + 2))
        mp[:, 1 : t + 1] = m
        return w[0] * mp[:, :t] + w[1] * mp[:, 1 : t + 1] + w[2] * mp[:, 2:] + b

    # Chebyshev terms rebuilt from the recurrence, T_0 excluded
    lt = model.graph.scaled_laplacian()
    terms = [lt]
    t_prev, t_cur = np.eye(model.graph.n_views), lt
    for _ in range(2, model.cfg.cheb_order + 1):
        t_next = 2.0 * lt @ t_cur - t_prev
        terms.append(t_next)
        t_prev, t_cur = t_cur, t_next

    p = model.params
    h = np.asarray(x, dtype=float)
    attention = []
    for b in range(model.cfg.blocks):
        k = f"b{b}_"
        sig = lambda m: 1.0 / (1.0 + np.exp(-m))
        lhs = np.outer(h @ p[k + "sa_w1"], p[k + "sa_w2"])
        rhs = (p[k + "sa_w3"] * h).T
        yp = softmax_rows(sig(lhs @ rhs + p[k + "sa_bias"]) @ p[k + "sa_v"])
        lhs_t = np.outer(h.T @ p[k + "ta_w1"], p[k + "ta_w2"])
        rhs_t = p[k + "ta_w3"] * h
        zp = softmax_rows(sig(lhs_t @ rhs_t + p[k + "ta_bias"]) @ p[k + "ta_v"])
        attention.append((yp, zp))
        ht = h @ zp
        conv = sum(
            p[k + "cheb"][m] * ((terms[m] * yp) @ ht) for m in range(len(terms))
        )
        h = np.maximum(conv3_same(conv, p[k + "conv_w"], p[k + "conv_b"]), 0.0)
    out = p["out_w"] * np.maximum(h @ p["fc_w"] + p["fc_b"], 0.0)
    return out, attention


class TestForward:
    def test_matches_straight_line_reference(self):
        model = tiny_model()
        rng = np.random.default_rng(5)
        for _ in range(4):
            x = rng.uniform(0.0, 1.0, (3, 4))
            want, _ = reference_forward(model, x)
            np.testing.assert_allclose(model.forward(x), want, rtol=1e-12)

    def test_attention_rows_are_distributions(self):
        model = tiny_model(n=4, tau=6)
        x = np.random.default_rng(1).uniform(0.0, 1.0, (4, 6))
        _, attention = reference_forward(model, x)
        for yp, zp in attention:
            assert yp.shape == (4, 4) and zp.shape == (6, 6)
            np.testing.assert_allclose(yp.sum(axis=1), 1.0)
            np.testing.assert_allclose(zp.sum(axis=1), 1.0)
            assert np.all(yp >= 0.0) and np.all(zp >= 0.0)

    def test_shape_and_finite_guards(self):
        model = tiny_model()
        with pytest.raises(ShapeError):
            model.forward(np.ones((2, 4)))
        bad = np.ones((3, 4))
        bad[0, 0] = np.nan
        with pytest.raises(NonFiniteValue):
            model.forward(bad)


class TestGradients:
    def test_every_parameter_against_central_differences(self):
        model = tiny_model()
        rng = np.random.default_rng(11)
        batch = [
            (rng.uniform(0.0, 1.0, (3, 4)), rng.uniform(0.0, 1.0, (3, 1)))
            for _ in range(2)
        ]

        def eval_loss():
            return float(
                np.mean([np.mean(np.abs(model.forward(x) - t)) for x, t in batch])
            )

        _, grads = model.loss_and_grad(batch)
        step = 1e-5
        worst = 0.0
        for name, p in model.params.items():
            flat = p.reshape(-1)
            gflat = grads[name].reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + step
                hi = eval_loss()
                flat[i] = keep - step
                lo = eval_loss()
                flat[i] = keep
                fd = (hi - lo) / (2.0 * step)
                # relative error guarded against the finite-difference noise
                # floor: tiny true gradients drown in cancellation error
                rel = abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-6)
                worst = max(worst, rel)
                assert rel <= 1e-4, (name, i, fd, gflat[i])
        assert worst <= 1e-4

    def test_grads_cover_every_parameter(self):
        model = tiny_model()
        rng = np.random.default_rng(2)
        batch = [(rng.uniform(0.0, 1.0, (3, 4)), rng.uniform(0.0, 1.0, (3, 1)))]
        _, grads = model.loss_and_grad(batch)
        assert set(grads) == set(model.params)
        for name, g in grads.items():
            assert g.shape == model.params[name].shape, name


class TestSamples:
    def test_window_alignment_and_padding(self):
        model = tiny_model(n=2, tau=3)
        hist = np.arange(10).reshape(5, 2).astype(float)
        samples = model.build_samples(hist)
        assert len(samples) == 4  # u = 1..4
        x0, t0 = samples[0]
        np.testing.assert_array_equal(x0, [[0.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        np.testing.assert_array_equal(t0, [[2.0], [3.0]])
        x3, t3 = samples[3]
        np.testing.assert_array_equal(x3, [[2.0, 4.0, 6.0], [3.0, 5.0, 7.0]])
        np.testing.assert_array_equal(t3, [[8.0], [9.0]])

    def test_history_too_short(self):
        model = tiny_model(n=2, tau=3)
        with pytest.raises(InsufficientHistory):
            model.build_samples(np.ones((1, 2)))

    def test_wrong_width(self):
        model = tiny_model(n=2, tau=3)
        with pytest.raises(ShapeError):
            model.build_samples(np.ones((5, 3)))

    def test_input_window_recent_columns(self):
        model = tiny_model(n=2, tau=3)
        hist = np.arange(10).reshape(5, 2).astype(float)
        np.testing.assert_array_equal(
            model.input_window(hist), [[4.0, 6.0, 8.0], [5.0, 7.0, 9.0]]
        )
        np.testing.assert_array_equal(
            model.input_window(hist[:1]), [[0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]
        )
        np.testing.assert_array_equal(model.input_window(hist[:0]), np.zeros((2, 3)))


class TestTraining:
    def test_loss_drops_on_learnable_traffic(self):
        model = tiny_model(n=3, tau=4, epochs=12, batch_size=8, seed=3)
        rng = np.random.default_rng(7)
        base = np.array([0.6, 0.3, 0.1])
        hist = np.clip(base + rng.normal(0.0, 0.02, (40, 3)), 0.01, None)
        hist /= hist.sum(axis=1, keepdims=True)
        curve = model.train_initial(hist)
        assert len(curve) == 12
        assert curve[-1] < curve[0]
        assert model.trained

    def test_zero_epochs_keeps_initialization(self):
        cfg = TrainConfig(tau=4, epochs=0, seed=9)
        model = StGnn(path_graph(3), cfg)
        want = init_params(3, cfg, np.random.default_rng(9))
        model.train_initial(np.random.default_rng(0).uniform(0, 1, (20, 3)))
        for k, v in model.params.items():
            np.testing.assert_array_equal(v, want[k])

    def test_observe_takes_one_step(self):
        model = tiny_model(n=3, tau=4)
        hist = np.random.default_rng(4).uniform(0.0, 1.0, (15, 3))
        before = {k: v.copy() for k, v in model.params.items()}
        loss = model.observe(hist)
        assert np.isfinite(loss)
        assert model._adam_t == 1
        moved = any(not np.array_equal(before[k], model.params[k]) for k in before)
        assert moved

    def test_predict_next_shape(self):
        model = tiny_model(n=3, tau=4)
        out = model.predict_next(np.random.default_rng(6).uniform(0, 1, (12, 3)))
        assert out.shape == (3,)

    def test_seed_determinism(self):
        hist = np.random.default_rng(8).uniform(0.0, 1.0, (25, 3))
        a = tiny_model(epochs=3, seed=5)
        b = tiny_model(epochs=3, seed=5)
        ca = a.train_initial(hist)
        cb = b.train_initial(hist)
        assert ca == cb
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])


class TestPersistence:
    def test_round_trip_is_exact(self, tmp_path):
        model = tiny_model(n=3, tau=4, epochs=2)
        hist = np.random.default_rng(12).uniform(0.0, 1.0, (20, 3))
        model.train_initial(hist)
        path = tmp_path / "model.npz"
        model.save(path)
        back = StGnn.load(path)
        assert back.cfg == model.cfg
        assert back.trained and back._adam_t == model._adam_t
        for k in model.params:
            np.testing.assert_array_equal(back.params[k], model.params[k])
            np.testing.assert_array_equal(back._adam_m[k], model._adam_m[k])
            np.testing.assert_array_equal(back._adam_v[k], model._adam_v[k])
        x = np.random.default_rng(13).uniform(0.0, 1.0, (3, 4))
        np.testing.assert_array_equal(back.forward(x), model.forward(x))

    def test_resume_training_from_checkpoint(self, tmp_path):
        hist = np.random.default_rng(14).uniform(0.0, 1.0, (25, 3))
        whole = tiny_model(epochs=4, seed=2)
        whole.train_initial(hist)
        path = tmp_path / "model.npz"
        part = tiny_model(epochs=4, seed=2)
        part.train_initial(hist)
        part.save(path)
        resumed = StGnn.load(path)
        resumed.observe(hist)
        whole.observe(hist)
        for k in whole.params:
            np.testing.assert_allclose(resumed.params[k], whole.params[k])

    def test_version_gate(self, tmp_path):
        import json

        model = tiny_model()
        path = tmp_path / "model.npz"
        model.save(path)
        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files}
        meta = json.loads(bytes(arrays["__meta__"]).decode())
        meta["version"] = 99
        arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        bad = tmp_path / "bad.npz"
        with open(bad, "wb") as fh:
            np.savez(fh, **arrays)
        with pytest.raises(ConfigError):
            StGnn.load(bad)


class TestConfigGuards:
    def test_bad_dimensions(self):
        with pytest.raises(ConfigError):
            TrainConfig(tau=0)
        with pytest.raises(ConfigError):
            TrainConfig(cheb_order=0)
        with pytest.raises(ConfigError):
            TrainConfig(lr=0.0)
        with pytest.raises(ConfigError):
            TrainConfig(epochs=-1)
