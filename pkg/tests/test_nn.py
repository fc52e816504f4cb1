import math

import numpy as np
import numpy.testing as npt
import pytest

from prcurves.dist import temper_probs
from prcurves.errors import CheckpointError, DivergenceError, DomainError, TrainingError
from prcurves.losses import LossSpec
from prcurves.nn import (PLAIN, AdamState, Decoding, ModelConfig, TrainConfig, adam_step, forward,
                         generate, init_params, load, loss_and_grads, n_params, next_logits,
                         next_token_probs, save, token_logprobs, train)
from prcurves.verify import grad_check

TINY = ModelConfig(5, 3, n_layers=2, d_model=8, n_heads=2, d_ff=12, seed=0)
FULL = ModelConfig(12, 8)


def perturbed(cfg, scale=0.5, seed=1):
    rng = np.random.default_rng(seed)
    params = init_params(cfg)
    return {k: (v + rng.standard_normal(v.shape) * scale).astype(v.dtype) for k, v in params.items()}


class TestConfig:
    def test_heads_divide(self):
        with pytest.raises(DomainError):
            ModelConfig(5, 3, d_model=10, n_heads=4)

    def test_full_size(self):
        # 4 layers of width 32 with a 128-wide gated feed-forward
        p = init_params(FULL)
        assert p["h3.w_in"].shape == (32, 256) and p["w_out"].shape == (32, 12)
        assert n_params(p) == 13 * 32 + 4 * (2 * 32 + 32 * 96 + 32 * 32 + 32 * 256 + 128 * 32) + 32 + 32 * 12


class TestForward:
    @pytest.mark.parametrize("arch", ["llama", "simple"])
    def test_causal(self, arch):
        cfg = ModelConfig(6, 6, n_layers=2, d_model=8, n_heads=2, d_ff=12, arch=arch)
        params = perturbed(cfg)
        rng = np.random.default_rng(0)
        x = rng.integers(0, 6, (5, 6))
        base = forward(params, cfg, x)
        for l in range(6):
            y = x.copy()
            y[:, l:] = rng.permuted(y[:, l:], axis=1)
            y[:, l:] = (y[:, l:] + 1) % 6
            # logits at position l see tokens before l only
            npt.assert_array_equal(forward(params, cfg, y)[:, : l + 1], base[:, : l + 1])

    def test_batch_of_one(self):
        params = perturbed(FULL, 0.1)
        x = np.random.default_rng(1).integers(0, 12, (64, 8))
        full = forward(params, FULL, x)
        for i in (0, 17, 63):
            npt.assert_array_equal(forward(params, FULL, x[i : i + 1])[0], full[i])

    def test_init_entropy(self):
        params = init_params(FULL)
        x = np.random.default_rng(2).integers(0, 12, (256, 8))
        z = forward(params, FULL, x).astype(np.float64)
        p = np.exp(z - z.max(-1, keepdims=True))
        p /= p.sum(-1, keepdims=True)
        h = -(p * np.log(p)).sum(-1)
        assert np.all(np.abs(h - math.log(12)) <= 0.1 * math.log(12))

    def test_token_range(self):
        with pytest.raises(DomainError):
            forward(init_params(TINY), TINY, [[0, 5, 1]])

    def test_next_logits_matches_forward(self):
        params = perturbed(TINY)
        x = np.array([[1, 4, 2], [0, 0, 3]])
        npt.assert_allclose(next_logits(params, TINY, x[:, :2]), forward(params, TINY, x)[:, 2], rtol=1e-5)

    def test_softmax_temperature_commutes(self):
        z = np.random.default_rng(3).standard_normal((4, 7)) * 4
        e = np.exp(z / 0.3 - (z / 0.3).max(-1, keepdims=True))
        npt.assert_allclose(next_token_probs(z, 0.3), e / e.sum(-1, keepdims=True), atol=1e-12)


class TestGradients:
    @pytest.mark.parametrize("arch", ["llama", "simple"])
    def test_finite_differences(self, arch):
        worst = grad_check(arch)
        assert {"tok_emb", "h0.wqkv", "h1.w_in", "h0.ln1", "ln_f", "w_out"} <= set(worst)
        assert max(worst.values()) < 1e-4, worst

    def test_zero_weights(self):
        params = perturbed(TINY)
        x = np.random.default_rng(0).integers(0, 5, (4, 3))
        loss, g = loss_and_grads(params, TINY, x, np.zeros((4, 3), np.float32))
        assert loss == 0
        assert all(not v.any() for v in g.values())

    def test_linear_in_weights(self):
        cfg = ModelConfig(5, 3, n_layers=2, d_model=8, n_heads=2, d_ff=12, dtype="float64")
        params = perturbed(cfg)
        rng = np.random.default_rng(0)
        x = rng.integers(0, 5, (4, 3))
        w1, w2 = rng.random((4, 3)), rng.random((4, 3))
        g1 = loss_and_grads(params, cfg, x, w1)[1]
        g2 = loss_and_grads(params, cfg, x, w2)[1]
        g12 = loss_and_grads(params, cfg, x, w1 + w2)[1]
        for k in g12:
            npt.assert_allclose(g12[k], g1[k] + g2[k], atol=1e-9)


class TestAdam:
    def test_zero_grad_no_decay(self):
        params = perturbed(TINY)
        before = {k: v.copy() for k, v in params.items()}
        adam_step(params, {k: np.zeros_like(v) for k, v in params.items()}, AdamState.zeros_like(params), 1e-3)
        for k in params:
            npt.assert_array_equal(params[k], before[k])

    def test_first_step_sign(self):
        params = perturbed(TINY)
        before = {k: v.copy() for k, v in params.items()}
        rng = np.random.default_rng(0)
        grads = {k: rng.standard_normal(v.shape).astype(v.dtype) for k, v in params.items()}
        adam_step(params, grads, AdamState.zeros_like(params), 1e-3)
        for k in params:
            npt.assert_array_equal(np.sign(params[k] - before[k]), -np.sign(grads[k]))
            # the first step has magnitude lr per coordinate
            npt.assert_allclose(np.abs(params[k] - before[k]), 1e-3, rtol=1e-3)

    def test_decay_only_matrices(self):
        params = perturbed(TINY)
        before = {k: v.copy() for k, v in params.items()}
        adam_step(params, {k: np.zeros_like(v) for k, v in params.items()}, AdamState.zeros_like(params), 0.1, 1.0)
        npt.assert_allclose(params["w_out"], before["w_out"] * 0.9, rtol=1e-6)
        npt.assert_array_equal(params["ln_f"], before["ln_f"])

    def test_deterministic(self):
        def run():
            params = init_params(TINY)
            state = AdamState.zeros_like(params)
            rng = np.random.default_rng(5)
            for _ in range(10):
                x = rng.integers(0, 5, (8, 3))
                _, g = loss_and_grads(params, TINY, x, np.ones((8, 3), np.float32))
                adam_step(params, g, state, 1e-2, 1.0)
            return params
        a, b = run(), run()
        for k in a:
            npt.assert_array_equal(a[k], b[k])

    def test_key_mismatch(self):
        params = init_params(TINY)
        with pytest.raises(DomainError):
            adam_step(params, {"w_out": params["w_out"]}, AdamState.zeros_like(params), 1e-3)


def toy_data(n=256, seed=0):
    # learnable: third token is the sum of the first two mod 5
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 5, (n, 2))
    return np.column_stack([x, x.sum(1) % 5])


class TestTrain:
    cfg = ModelConfig(5, 3, n_layers=1, d_model=16, n_heads=2, d_ff=32)

    def tc(self, **kw):
        base = dict(learning_rate=1e-2, weight_decay=0.0, epochs=10, batch_size=64, dataset_size=256)
        base.update(kw)
        return TrainConfig(**base)

    def test_loss_decreases(self):
        res = train(self.cfg, self.tc(), toy_data())
        losses = [e.loss for e in res.log]
        assert losses[-1] < losses[0] - 0.3
        assert len(res.log) == 10 and res.state.step == 40

    def test_cdiv_one_matches_nll(self):
        a = train(self.cfg, self.tc(epochs=3), toy_data())
        b = train(self.cfg, self.tc(epochs=3, loss=LossSpec("CDiv", alpha=1.0)), toy_data())
        for k in a.params:
            npt.assert_array_equal(a.params[k], b.params[k])

    def test_warmup_is_nll(self):
        a = train(self.cfg, self.tc(epochs=2), toy_data())
        b = train(self.cfg, self.tc(epochs=2, warmup_epochs=2, loss=LossSpec("CDiv", alpha=2.0)), toy_data())
        c = train(self.cfg, self.tc(epochs=2, warmup_epochs=1, loss=LossSpec("CDiv", alpha=2.0)), toy_data())
        for k in a.params:
            npt.assert_array_equal(a.params[k], b.params[k])
        assert a.log[0].loss == c.log[0].loss and c.log[1].mean_weight > 1

    def test_deterministic(self):
        a = train(self.cfg, self.tc(epochs=2, loss=LossSpec("TruncR", buffer_size=128)), toy_data())
        b = train(self.cfg, self.tc(epochs=2, loss=LossSpec("TruncR", buffer_size=128)), toy_data())
        for k in a.params:
            npt.assert_array_equal(a.params[k], b.params[k])
        assert a.log[-1].kept_fraction < 1

    def test_zero_epochs(self):
        res = train(self.cfg, self.tc(epochs=0), toy_data())
        init = init_params(self.cfg)
        assert res.log == []
        for k in init:
            npt.assert_array_equal(res.params[k], init[k])

    def test_caller_params_untouched(self):
        init = init_params(self.cfg)
        copy = {k: v.copy() for k, v in init.items()}
        state = AdamState.zeros_like(init)
        train(self.cfg, self.tc(epochs=1), toy_data(), params=init, state=state)
        assert state.step == 0 and not state.m["w_out"].any()
        for k in init:
            npt.assert_array_equal(init[k], copy[k])

    def test_non_finite_loss(self):
        params = init_params(self.cfg)
        params["w_out"][:] = np.nan
        with pytest.raises(TrainingError) as info:
            train(self.cfg, self.tc(epochs=1), toy_data(), params=params)
        assert info.value.batch_index == 0

    def test_divergence(self, monkeypatch):
        import sys
        tr = sys.modules["prcurves.nn.train"]
        calls = {"n": 0}
        real = tr.weighted_nll

        def exploding(lp, w):
            calls["n"] += 1
            return real(lp, w) * (1 if calls["n"] == 1 else 100)

        monkeypatch.setattr(tr, "weighted_nll", exploding)
        with pytest.raises(DivergenceError) as info:
            train(self.cfg, self.tc(epochs=10), toy_data())
        assert info.value.epoch == 2

    def test_bad_dataset(self):
        with pytest.raises(DomainError):
            train(self.cfg, self.tc(), np.zeros((10, 4), int))


class TestGenerate:
    def test_greedy(self):
        params = perturbed(TINY)
        a = generate(params, TINY, None, 0, n=20)
        b = generate(params, TINY, None, 0, n=20, rng=np.random.default_rng(9))
        npt.assert_array_equal(a, b)
        npt.assert_array_equal(a[:, 0], np.argmax(next_logits(params, TINY, np.zeros((1, 0), int))[0]))

    def test_first_token_frequencies(self):
        params = perturbed(TINY, 1.0)
        logits = next_logits(params, TINY, np.zeros((1, 0), int))[0].astype(np.float64)
        target = np.exp(logits - logits.max())
        target /= target.sum()
        x = generate(params, TINY, None, 1.0, rng=np.random.default_rng(0), n=10**4)
        freq = np.bincount(x[:, 0], minlength=5) / 10**4
        assert 0.5 * np.abs(freq - target).sum() < 0.05

    def test_tempered_frequencies(self):
        params = perturbed(TINY, 1.0)
        prompt = np.array([[2, 1]] * 10**4)
        logits = next_logits(params, TINY, prompt[:1])[0]
        target = next_token_probs(logits, 2.5)
        x = generate(params, TINY, prompt, 2.5, rng=np.random.default_rng(1))
        npt.assert_array_equal(x[:, :2], prompt)
        freq = np.bincount(x[:, 2], minlength=5) / 10**4
        assert 0.5 * np.abs(freq - target).sum() < 0.05

    def test_top_p_one_is_plain(self):
        params = perturbed(TINY)
        a = generate(params, TINY, None, 0.8, rng=np.random.default_rng(4), n=300)
        b = generate(params, TINY, None, 0.8, Decoding("top_p", 1.0), rng=np.random.default_rng(4), n=300)
        npt.assert_array_equal(a, b)

    def test_top_p_restricts(self):
        z = np.array([3.0, 2.0, -5.0, -5.0, -5.0])
        probs = next_token_probs(z, 3.0, Decoding("top_p", 0.9))
        assert probs[2:].sum() == 0

    def test_chunking_invariant(self):
        params = perturbed(TINY)
        a = generate(params, TINY, None, 1.3, rng=np.random.default_rng(2), n=50)
        b = generate(params, TINY, None, 1.3, rng=np.random.default_rng(2), n=50, chunk=7)
        npt.assert_array_equal(a, b)

    def test_prompt_too_long(self):
        with pytest.raises(DomainError):
            generate(init_params(TINY), TINY, [[0, 1, 2]], 1.0)

    def test_bad_decoding(self):
        with pytest.raises(DomainError):
            Decoding("beam")
        assert PLAIN.label() == "plain" and Decoding("top_p", 0.9).label() == "top_p=0.9"


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = perturbed(TINY)
        state = AdamState.zeros_like(params)
        _, g = loss_and_grads(params, TINY, [[1, 2, 3]], np.ones((1, 3), np.float32))
        adam_step(params, g, state, 1e-3, 1.0)
        path = tmp_path / "ck.npz"
        save(path, TINY, params, state, extra={"run_id": "x"})
        ck = load(path)
        assert ck.model_cfg == TINY and ck.extra == {"run_id": "x"} and ck.state.step == 1
        for k in params:
            npt.assert_array_equal(ck.params[k], params[k])
            assert ck.params[k].dtype == params[k].dtype
            npt.assert_array_equal(ck.state.m[k], state.m[k])
            npt.assert_array_equal(ck.state.v[k], state.v[k])

    def test_truncated(self, tmp_path):
        path = tmp_path / "ck.npz"
        save(path, TINY, init_params(TINY))
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(CheckpointError):
            load(path)

    def test_tampered(self, tmp_path):
        path = tmp_path / "ck.npz"
        params = init_params(TINY)
        save(path, TINY, params)
        with np.load(path) as z:
            arrays = dict(z)
        arrays["param/w_out"] = arrays["param/w_out"] + 1
        np.savez(path, **arrays)
        with pytest.raises(CheckpointError, match="checksum"):
            load(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "x.npz"
        np.savez(path, a=np.zeros(3))
        with pytest.raises(CheckpointError):
            load(path)
        with pytest.raises(CheckpointError):
            load(tmp_path / "missing.npz")
