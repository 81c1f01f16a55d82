"""Embedding network tests: normalization, backward pass, init, checkpoints."""

import numpy as np
import pytest

from darkrank import network as net
from darkrank import oracle
from darkrank.exceptions import InputError, NumericalError
from darkrank.network import NetworkSpec


def small_spec(**overrides):
    base = dict(input_dim=4, hidden_layers=(6, 5), embed_dim=3, num_classes=4,
                activation="tanh", seed=7)
    base.update(overrides)
    return NetworkSpec(**base)


def test_embeddings_unit_norm():
    state = net.init(small_spec())
    rng = np.random.default_rng(1)
    fwd = net.forward(state, rng.normal(size=(10, 4)))
    assert np.allclose(np.linalg.norm(fwd.embeddings, axis=1), 1.0, atol=1e-6)


def test_zero_hidden_layers_is_normalized_affine_map():
    state = net.init(small_spec(hidden_layers=()))
    x = np.random.default_rng(2).normal(size=(5, 4))
    fwd = net.forward(state, x)
    z = x @ state.weights[0] + state.biases[0]
    assert np.allclose(fwd.embeddings, z / np.linalg.norm(z, axis=1, keepdims=True))
    assert np.allclose(fwd.logits, z @ state.cls_weight + state.cls_bias)


def test_duplicated_rows_give_identical_embeddings():
    state = net.init(small_spec())
    row = np.random.default_rng(3).normal(size=4)
    fwd = net.forward(state, np.stack([row, row, row]))
    assert np.array_equal(fwd.embeddings[0], fwd.embeddings[1])
    assert np.array_equal(fwd.embeddings[0], fwd.embeddings[2])


def test_input_dimension_mismatch():
    state = net.init(small_spec())
    with pytest.raises(InputError):
        net.forward(state, np.zeros((2, 5)))


def test_collapsed_row_raises():
    state = net.init(small_spec(hidden_layers=()))
    state.weights[0][:] = 0.0  # affine map now sends everything to the bias = 0
    with pytest.raises(NumericalError, match="collapsed"):
        net.forward(state, np.ones((1, 4)))


class TestInit:
    def test_same_seed_bitwise_identical(self):
        a = net.init(small_spec(seed=42))
        b = net.init(small_spec(seed=42))
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa, pb)

    def test_different_seeds_differ(self):
        a = net.init(small_spec(seed=1))
        b = net.init(small_spec(seed=2))
        assert any(not np.array_equal(pa, pb)
                   for pa, pb in zip(a.parameters(), b.parameters()))

    def test_fresh_net_finite_on_unit_inputs(self):
        state = net.init(small_spec(activation="relu"))
        rng = np.random.default_rng(5)
        x = rng.normal(size=(8, 4))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        fwd = net.forward(state, x)
        assert np.all(np.isfinite(fwd.embeddings))
        assert np.all(np.isfinite(fwd.logits))

    def test_biases_zero_and_weight_scale(self):
        state = net.init(small_spec(seed=11))
        for b in state.biases:
            assert np.all(b == 0.0)
        w0 = state.weights[0]  # fan_in = 4 -> std 0.5
        assert 0.2 < w0.std() < 0.8


class TestBackward:
    def test_zero_upstream_gives_zero_parameter_grads(self):
        state = net.init(small_spec())
        fwd = net.forward(state, np.random.default_rng(6).normal(size=(3, 4)))
        grads = net.backward(state, fwd.tape,
                             np.zeros_like(fwd.embeddings), np.zeros_like(fwd.logits))
        for g in grads:
            assert np.all(g == 0.0)

    def test_normalization_annihilates_radial_direction(self):
        state = net.init(small_spec())
        fwd = net.forward(state, np.random.default_rng(7).normal(size=(4, 4)))
        # upstream gradient parallel to the embedding itself must vanish
        grads = net.backward(state, fwd.tape, fwd.embeddings.copy(), None)
        for g in grads[:-2]:  # classifier params are untouched anyway
            assert np.allclose(g, 0.0, atol=1e-12)

    @pytest.mark.parametrize("activation", ["tanh", "relu"])
    def test_full_gradient_matches_finite_differences(self, activation):
        rng = np.random.default_rng(8)
        spec = small_spec(activation=activation, seed=13)
        state = net.init(spec)
        x = rng.normal(size=(5, 4))
        d_emb = rng.normal(size=(5, 3))
        d_log = rng.normal(size=(5, 4))
        params = state.parameters()
        sizes = [p.size for p in params]

        def unpack(vec):
            trial = state.copy()
            offset = 0
            for p in trial.parameters():
                p[...] = vec[offset:offset + p.size].reshape(p.shape)
                offset += p.size
            return trial

        def loss(vec):
            fwd = net.forward(unpack(vec), x)
            return float((fwd.embeddings * d_emb).sum() + (fwd.logits * d_log).sum())

        point = np.concatenate([p.ravel() for p in params])
        if activation == "relu":
            # keep pre-activations away from the kink for the FD window
            pre = net.forward(state, x).tape.pre_acts
            assert all(np.abs(h).min() > 1e-3 for h in pre)
        fwd = net.forward(state, x)
        grads = net.backward(state, fwd.tape, d_emb, d_log)
        analytic = np.concatenate([g.ravel() for g in grads])
        numeric = oracle.finite_diff_grad(loss, point.copy())
        assert oracle.relative_errors(analytic, numeric).max() < 1e-4
        assert sum(sizes) == point.size

    def test_projection_head_backward(self):
        rng = np.random.default_rng(9)
        spec = small_spec(proj_dim=5, seed=17)
        state = net.init(spec)
        x = rng.normal(size=(3, 4))
        fwd = net.forward(state, x)
        assert fwd.projected.shape == (3, 5)
        d_proj = rng.normal(size=(3, 5))

        def loss(vec):
            trial = state.copy()
            offset = 0
            for p in trial.parameters():
                p[...] = vec[offset:offset + p.size].reshape(p.shape)
                offset += p.size
            return float((net.forward(trial, x).projected * d_proj).sum())

        grads = net.backward(state, fwd.tape, None, None, proj_grads=d_proj)
        analytic = np.concatenate([g.ravel() for g in grads])
        point = np.concatenate([p.ravel() for p in state.parameters()])
        numeric = oracle.finite_diff_grad(loss, point.copy())
        assert oracle.relative_errors(analytic, numeric).max() < 1e-4


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        state = net.init(small_spec(seed=23, proj_dim=6))
        path = tmp_path / "net.drknet"
        net.save_checkpoint(state, path)
        loaded = net.load_checkpoint(path)
        assert loaded.spec == state.spec
        for a, b in zip(state.parameters(), loaded.parameters()):
            assert np.array_equal(a, b)

    def test_magic_string_present(self, tmp_path):
        state = net.init(small_spec())
        path = tmp_path / "net.drknet"
        net.save_checkpoint(state, path)
        assert "DRKNET1" in path.read_text()[:200]

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bogus.drknet"
        path.write_text('{"format": "NOPE", "spec": {}, "params": {}}')
        with pytest.raises(InputError, match="magic"):
            net.load_checkpoint(path)

    def test_garbage_rejected(self, tmp_path):
        path = tmp_path / "garbage.drknet"
        path.write_text("not json at all")
        with pytest.raises(InputError):
            net.load_checkpoint(path)
