import numpy as np
import pytest

from jointser import encoders, layers
from jointser.encoders import (EncoderConfig, bilstm_encode, init_encoder, max_pool_time,
                               pool_to_vector, self_attention)
from oracles import numeric_grad, rel_error, sampled_grad_check


def _params(seed, input_dim, dtype=np.float64, scale=None):
    p = init_encoder(np.random.default_rng(seed), input_dim, "", dtype=dtype)
    if scale is not None:
        r = np.random.default_rng(seed + 100)
        for k in p:
            p[k] = r.normal(0, scale, p[k].shape)
    return p


class TestMaxPool:
    def test_elementwise_max(self):
        np.testing.assert_array_equal(max_pool_time([[1, 4], [3, 2]]), [[3, 4]])

    def test_partial_window_dropped(self):
        np.testing.assert_array_equal(max_pool_time([[1, 4], [3, 2], [5, 0]]), [[3, 4]])

    def test_shape_law(self, rng):
        for T in range(2, 12):
            assert max_pool_time(rng.standard_normal((T, 3))).shape == (T // 2, 3)

    def test_too_short(self):
        with pytest.raises(ValueError):
            max_pool_time([[1.0, 2.0]])


class TestPoolToVector:
    def test_mean(self):
        np.testing.assert_array_equal(pool_to_vector([[2, 4], [4, 8]]), [3, 6])

    def test_single_row(self):
        np.testing.assert_array_equal(pool_to_vector([[1.5, -2.0]]), [1.5, -2.0])

    def test_permutation_invariant(self, rng):
        x = rng.integers(-8, 8, (6, 4)).astype(float)
        np.testing.assert_array_equal(pool_to_vector(x), pool_to_vector(x[::-1]))


class TestBiLSTM:
    def test_zero_params_give_zero(self, rng):
        p = {k: np.zeros_like(v) for k, v in _params(0, 5).items()}
        out, _ = bilstm_encode(p, rng.standard_normal((7, 5)))
        assert out.shape == (7, 64)
        assert np.all(out == 0)

    def test_single_frame(self, rng):
        out, _ = bilstm_encode(_params(0, 5), rng.standard_normal((1, 5)))
        assert out.shape == (1, 64) and np.all(np.isfinite(out))

    def test_backward_direction_reads_reversed_input(self, rng):
        # the backward half at t=0 has seen the whole sequence, the forward half only frame 0
        p = _params(3, 4)
        x = rng.standard_normal((5, 4))
        y = x.copy()
        y[-1] += 1.0
        a, _ = bilstm_encode(p, x)
        b, _ = bilstm_encode(p, y)
        first_layer_only = EncoderConfig(lstm_layers=1)
        a1, _ = bilstm_encode(p, x, cfg=first_layer_only)
        b1, _ = bilstm_encode(p, y, cfg=first_layer_only)
        np.testing.assert_array_equal(a1[0, :32], b1[0, :32])
        assert not np.allclose(a1[0, 32:], b1[0, 32:])
        assert not np.allclose(a[0], b[0])

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            bilstm_encode(_params(0, 5), rng.standard_normal((3, 6)))

    def test_non_finite_input(self):
        with pytest.raises(ValueError):
            bilstm_encode(_params(0, 2), np.array([[np.nan, 0.0]]))

    def test_padded_batch_matches_single_sequences(self, rng):
        p = _params(1, 3)
        seqs = [rng.standard_normal((T, 3)) for T in (2, 5, 1, 4)]
        lengths = np.array([len(s) for s in seqs])
        batch = np.zeros((4, 5, 3))
        for i, s in enumerate(seqs):
            batch[i, :len(s)] = s
        out, _ = bilstm_encode(p, batch, lengths)
        for i, s in enumerate(seqs):
            single, _ = bilstm_encode(p, s)
            np.testing.assert_allclose(out[i, :len(s)], single, atol=1e-12)
            assert np.all(out[i, len(s):] == 0)

    def test_dropout_reproducible(self, rng):
        p = _params(2, 3)
        x = rng.standard_normal((6, 3))
        a, _ = bilstm_encode(p, x, training=True, rng=np.random.default_rng(5))
        b, _ = bilstm_encode(p, x, training=True, rng=np.random.default_rng(5))
        c, _ = bilstm_encode(p, x, training=True, rng=np.random.default_rng(6))
        d, _ = bilstm_encode(p, x)
        e, _ = bilstm_encode(p, x)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(d, e)
        assert not np.array_equal(a, c)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_match_finite_differences(self, seed):
        r = np.random.default_rng(seed)
        p = _params(seed, 8, scale=0.4)
        x = r.standard_normal((3, 8))
        weight = r.standard_normal((3, 64))

        def loss():
            out, _ = bilstm_encode(p, x)
            return float(np.sum(out * weight))

        out, cache = bilstm_encode(p, x)
        grads = {}
        dx = encoders.bilstm_backward(weight, cache, grads)
        assert rel_error(dx, numeric_grad(loss, x)) < 1e-4
        for k in ("lstm0.W", "lstm0.U", "lstm0.b", "lstm1.W", "lstm1.U", "lstm1.b"):
            assert sampled_grad_check(loss, p[k], grads[k], seed=seed) < 1e-4, k

    def test_gradients_with_padding_and_dropout(self):
        r = np.random.default_rng(9)
        p = _params(9, 3, scale=0.4)
        x = r.standard_normal((2, 4, 3))
        lengths = np.array([4, 2])
        weight = r.standard_normal((2, 4, 64))

        def loss():
            out, _ = bilstm_encode(p, x, lengths, training=True, rng=np.random.default_rng(0))
            return float(np.sum(out * weight))

        _, cache = bilstm_encode(p, x, lengths, training=True, rng=np.random.default_rng(0))
        grads = {}
        dx = encoders.bilstm_backward(weight, cache, grads)
        assert rel_error(dx, numeric_grad(loss, x)) < 1e-4
        assert np.all(dx[1, 2:] == 0)
        for k in ("lstm0.W", "lstm1.U"):
            assert sampled_grad_check(loss, p[k], grads[k]) < 1e-4


class TestSelfAttention:
    def test_single_frame_closed_form(self, rng):
        p = _params(0, 4)
        x = rng.standard_normal((1, 64))
        out, cache = self_attention(p, x)
        assert np.all(cache[0]["attn"] == 1.0)
        np.testing.assert_allclose(out, x @ p["attn.Wv"] @ p["attn.Wo"], atol=1e-12)

    def test_permutation_equivariance(self, rng):
        p = _params(1, 4)
        x = rng.standard_normal((6, 64))
        perm = rng.permutation(6)
        out, _ = self_attention(p, x)
        out_p, _ = self_attention(p, x[perm])
        assert np.max(np.abs(out_p - out[perm])) < 1e-6

    def test_rows_normalised_per_head(self, rng):
        _, cache = self_attention(_params(2, 4), rng.standard_normal((5, 64)))
        attn = cache[0]["attn"]
        assert attn.shape == (1, 16, 5, 5)
        np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-6)

    def test_padding_ignored(self, rng):
        p = _params(3, 4)
        x = rng.standard_normal((1, 5, 64))
        mask = np.array([[True, True, True, False, False]])
        out, _ = self_attention(p, x, mask)
        ref, _ = self_attention(p, x[0, :3])
        np.testing.assert_allclose(out[0, :3], ref, atol=1e-12)
        x[0, 3:] = 100.0
        out2, _ = self_attention(p, x, mask)
        np.testing.assert_allclose(out2[0, :3], ref, atol=1e-12)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            self_attention(_params(0, 4), rng.standard_normal((3, 32)))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_match_finite_differences(self, seed):
        r = np.random.default_rng(seed)
        p = _params(seed, 4, scale=0.3)
        x = r.standard_normal((4, 64))
        weight = r.standard_normal((4, 64))

        def loss():
            return float(np.sum(self_attention(p, x)[0] * weight))

        _, cache = self_attention(p, x)
        grads = {}
        dx = encoders.self_attention_backward(weight, cache, grads)
        assert rel_error(dx, numeric_grad(loss, x)) < 1e-4
        for k in ("attn.Wq", "attn.Wk", "attn.Wv", "attn.Wo"):
            assert sampled_grad_check(loss, p[k], grads[k], seed=seed) < 1e-4, k


def test_encoder_stack_shape(rng):
    p = init_encoder(rng, 40, "enc.mfcc.")
    pooled = np.stack([max_pool_time(rng.standard_normal((11, 40)).astype(np.float32))])
    out, _ = encoders.encode(p, pooled, np.array([5]), "enc.mfcc.")
    assert out.shape == (1, 5, 64)
    assert pool_to_vector(out[0]).shape == (64,)


def test_config_invariants():
    assert EncoderConfig().attn_dim // EncoderConfig().attn_heads == 4
    with pytest.raises(ValueError):
        EncoderConfig(attn_heads=5)
    with pytest.raises(ValueError):
        EncoderConfig(lstm_hidden=16)


def test_reverse_padded_is_involution(rng):
    x = rng.standard_normal((3, 6, 2))
    lengths = [6, 3, 1]
    y = layers.reverse_padded(x, lengths)
    np.testing.assert_array_equal(y[1, :3], x[1, 2::-1])
    np.testing.assert_array_equal(y[1, 3:], x[1, 3:])
    np.testing.assert_array_equal(layers.reverse_padded(y, lengths), x)
