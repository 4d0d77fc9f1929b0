"""Per-stream encoders: time max-pool, 2-layer Bi-LSTM, self-attention, mean pool.

Parameters live in a flat ``{name: array}`` dict shared with the rest of the
model; each encoder owns the keys under its ``prefix``.
"""

from dataclasses import dataclass

import numpy as np

from . import layers


@dataclass(frozen=True)
class EncoderConfig:
    lstm_layers: int = 2
    lstm_hidden: int = 32
    dropout_p: float = 0.5
    attn_heads: int = 16
    attn_dim: int = 64

    def __post_init__(self):
        if self.attn_dim % self.attn_heads:
            raise ValueError("attn_dim must be divisible by attn_heads")
        if 2 * self.lstm_hidden != self.attn_dim:
            raise ValueError("bidirectional LSTM output (2*hidden) must equal attn_dim")


def max_pool_time(seq, kernel=2):
    """Non-overlapping max pool along time; a trailing partial window is dropped."""
    seq = np.asarray(seq)
    T = seq.shape[0]
    if T < kernel:
        raise ValueError(f"sequence of {T} frames is shorter than the pool kernel {kernel}")
    Tp = T // kernel
    return seq[:Tp * kernel].reshape(Tp, kernel, *seq.shape[1:]).max(axis=1)


def pool_to_vector(seq):
    """Temporal mean of a (T, D) sequence."""
    seq = np.asarray(seq)
    if seq.shape[0] < 1:
        raise ValueError("empty sequence")
    return seq.mean(axis=0)


def init_encoder(rng, input_dim, prefix, cfg=EncoderConfig(), dtype=np.float32):
    H, D = cfg.lstm_hidden, cfg.attn_dim
    params = {}
    d_in = input_dim
    for layer in range(cfg.lstm_layers):
        p = f"{prefix}lstm{layer}."
        params[p + "W"] = layers.glorot(rng, d_in, 4 * H, (2, d_in, 4 * H), dtype)
        params[p + "U"] = layers.glorot(rng, H, 4 * H, (2, H, 4 * H), dtype)
        params[p + "b"] = np.zeros((2, 4 * H), dtype=dtype)
        d_in = 2 * H
    for name in ("Wq", "Wk", "Wv", "Wo"):
        params[f"{prefix}attn.{name}"] = layers.glorot(rng, D, D, dtype=dtype)
    return params


def _batched(x, lengths):
    x = np.asarray(x)
    single = x.ndim == 2
    if single:
        x = x[None]
    if lengths is None:
        lengths = np.full(x.shape[0], x.shape[1])
    return x, np.asarray(lengths), single


def bilstm_encode(params, x, lengths=None, training=False, rng=None, prefix="",
                  cfg=EncoderConfig()):
    """Run the stacked Bi-LSTM. Accepts (T, D) or padded (B, T, D).

    Dropout with inverted scaling is applied between layers when
    ``training`` is set, drawing masks from ``rng``.
    """
    x, lengths, single = _batched(x, lengths)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite encoder input")
    expected = params[f"{prefix}lstm0.W"].shape[1]
    if x.shape[-1] != expected:
        raise ValueError(f"input dim {x.shape[-1]} does not match encoder dim {expected}")
    caches = []
    h = x
    for layer in range(cfg.lstm_layers):
        if layer > 0:
            h, keep = layers.dropout_forward(h, cfg.dropout_p if training else 0.0, rng)
        else:
            keep = None
        p = f"{prefix}lstm{layer}."
        h, c = layers.bilstm_forward(h, lengths, params[p + "W"], params[p + "U"], params[p + "b"])
        caches.append((keep, c))
    return (h[0] if single else h), (caches, single)


def bilstm_backward(d_out, cache, grads, prefix="", cfg=EncoderConfig()):
    caches, single = cache
    d = d_out[None] if single else d_out
    for layer in range(cfg.lstm_layers - 1, -1, -1):
        keep, c = caches[layer]
        d, dW, dU, db = layers.bilstm_backward(d, c)
        p = f"{prefix}lstm{layer}."
        _accum(grads, p + "W", dW)
        _accum(grads, p + "U", dU)
        _accum(grads, p + "b", db)
        d = layers.dropout_backward(d, keep)
    return d[0] if single else d


def self_attention(params, x, mask=None, prefix="", cfg=EncoderConfig()):
    """Multi-head self-attention with Q = K = V = x and an output projection."""
    x, lengths, single = _batched(x, None)
    if x.shape[-1] != cfg.attn_dim:
        raise ValueError(f"self-attention expects dim {cfg.attn_dim}, got {x.shape[-1]}")
    if mask is None:
        mask = np.ones(x.shape[:2], dtype=bool)
    a = f"{prefix}attn."
    out, c = layers.mha_forward(x, x, mask, params[a + "Wq"], params[a + "Wk"],
                                params[a + "Wv"], params[a + "Wo"], cfg.attn_heads)
    out = out * mask[..., None]
    return (out[0] if single else out), (c, mask, single)


def self_attention_backward(d_out, cache, grads, prefix=""):
    c, mask, single = cache
    d = (d_out[None] if single else d_out) * mask[..., None]
    dxq, dxkv, dWq, dWk, dWv, dWo = layers.mha_backward(d, c)
    a = f"{prefix}attn."
    for name, g in (("Wq", dWq), ("Wk", dWk), ("Wv", dWv), ("Wo", dWo)):
        _accum(grads, a + name, g)
    dx = dxq + dxkv
    return dx[0] if single else dx


def encode(params, x, lengths, prefix, training=False, rng=None, cfg=EncoderConfig()):
    """Bi-LSTM then self-attention on a padded batch; returns (B, T, 64) and a cache."""
    mask = layers.lengths_to_mask(lengths, x.shape[1])
    h, c1 = bilstm_encode(params, x, lengths, training, rng, prefix, cfg)
    out, c2 = self_attention(params, h, mask, prefix, cfg)
    return out, (c1, c2)


def encode_backward(d_out, cache, grads, prefix, cfg=EncoderConfig()):
    c1, c2 = cache
    d = self_attention_backward(d_out, c2, grads, prefix)
    return bilstm_backward(d, c1, grads, prefix, cfg)


def _accum(grads, key, g):
    if key in grads:
        grads[key] = grads[key] + g
    else:
        grads[key] = g
