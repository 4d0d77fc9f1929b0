"""Batched numpy primitives with hand-written backward passes.

Every forward function returns ``(output, cache)`` and the matching
backward function takes ``(d_output, cache)``. Sequences are padded
batches of shape ``(B, T, D)`` with a boolean mask ``(B, T)``; padding is
always at the end of a sequence.
"""

import numpy as np


def glorot(rng, fan_in, fan_out, shape=None, dtype=np.float32):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(x, axis=-1):
    e = x - np.max(x, axis=axis, keepdims=True)
    np.exp(e, out=e)
    e /= np.sum(e, axis=axis, keepdims=True)
    return e


def log_softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def log_softmax_backward(d_out, log_probs, axis=-1):
    return d_out - np.exp(log_probs) * np.sum(d_out, axis=axis, keepdims=True)


def lengths_to_mask(lengths, max_len=None):
    lengths = np.asarray(lengths)
    if max_len is None:
        max_len = int(lengths.max())
    return np.arange(max_len)[None, :] < lengths[:, None]


def reverse_padded(x, lengths):
    """Reverse each sequence within its own length; padding stays at the end.

    The permutation is an involution, so it is also its own adjoint.
    """
    B, T = x.shape[:2]
    t = np.arange(T)[None, :]
    lengths = np.asarray(lengths)[:, None]
    idx = np.where(t < lengths, lengths - 1 - t, t)
    return x[np.arange(B)[:, None], idx]


# ---------------------------------------------------------------------------
# dense


def linear_forward(x, W, b=None):
    y = x @ W
    if b is not None:
        y = y + b
    return y, x


def linear_backward(dy, x, W, with_bias=True):
    dW = x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    dx = dy @ W.T
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0) if with_bias else None
    return dx, dW, db


# ---------------------------------------------------------------------------
# bidirectional LSTM layer
#
# W: (2, D, 4H), U: (2, H, 4H), b: (2, 4H); index 0 is the forward
# direction, 1 the backward. Gate order along the last axis: i, f, g, o.


def bilstm_forward(x, lengths, W, U, b):
    B, T, _ = x.shape
    H = U.shape[1]
    mask = lengths_to_mask(lengths, T)
    x2 = np.stack([x, reverse_padded(x, lengths)])  # (2, B, T, D)
    D = x.shape[-1]
    xw = (np.matmul(x2.reshape(2, B * T, D), W) + b[:, None, :]).reshape(2, B, T, -1)

    h = np.zeros((2, B, H), dtype=x.dtype)
    c = np.zeros((2, B, H), dtype=x.dtype)
    hs = np.zeros((2, B, T, H), dtype=x.dtype)
    steps = []
    for t in range(T):
        z = xw[:, :, t] + np.matmul(h, U)
        i = sigmoid(z[..., :H])
        f = sigmoid(z[..., H:2 * H])
        g = np.tanh(z[..., 2 * H:3 * H])
        o = sigmoid(z[..., 3 * H:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, :, t] = h
        steps.append((i, f, g, o, c_prev, h_prev, tc))

    out = np.concatenate([hs[0], reverse_padded(hs[1], lengths)], axis=-1)
    out = out * mask[..., None]
    return out, (x2, lengths, mask, W, U, steps)


def bilstm_backward(d_out, cache):
    x2, lengths, mask, W, U, steps = cache
    H = U.shape[1]
    T = x2.shape[2]
    d_out = d_out * mask[..., None]
    dhs = np.stack([d_out[..., :H], reverse_padded(d_out[..., H:], lengths)])

    dU = np.zeros_like(U)
    dz_all = np.zeros(x2.shape[:3] + (4 * H,), dtype=x2.dtype)
    dh_next = np.zeros_like(dhs[:, :, 0])
    dc_next = np.zeros_like(dh_next)
    for t in range(T - 1, -1, -1):
        i, f, g, o, c_prev, h_prev, tc = steps[t]
        dh = dhs[:, :, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            do * o * (1.0 - o),
        ], axis=-1)
        dz_all[:, :, t] = dz
        dU += np.matmul(h_prev.transpose(0, 2, 1), dz)
        dh_next = np.matmul(dz, U.transpose(0, 2, 1))
        dc_next = dc * f

    k, B, _, D = x2.shape
    x_flat = x2.reshape(k, B * T, D)
    dz_flat = dz_all.reshape(k, B * T, -1)
    dW = np.matmul(x_flat.transpose(0, 2, 1), dz_flat)
    db = dz_flat.sum(axis=1)
    dx2 = np.matmul(dz_flat, W.transpose(0, 2, 1)).reshape(k, B, T, D)
    dx = dx2[0] + reverse_padded(dx2[1], lengths)
    return dx, dW, dU, db


# ---------------------------------------------------------------------------
# multi-head scaled dot-product attention (no biases, no positions)


def _split_heads(x, n_heads):
    B, T, D = x.shape
    return x.reshape(B, T, n_heads, D // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, h, T, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, h * d)


def mha_forward(xq, xkv, key_mask, Wq, Wk, Wv, Wo, n_heads):
    """Queries from ``xq`` attend over keys/values from ``xkv``.

    ``key_mask`` (B, Tk) marks valid key positions. Returns the projected
    output (B, Tq, D) and a cache; the attention weights are
    ``cache["attn"]`` with shape (B, heads, Tq, Tk).
    """
    d_head = Wq.shape[1] // n_heads
    q = _split_heads(xq @ Wq, n_heads)
    k = _split_heads(xkv @ Wk, n_heads)
    v = _split_heads(xkv @ Wv, n_heads)
    scale = 1.0 / np.sqrt(d_head)
    scores = np.matmul(q, k.transpose(0, 1, 3, 2))
    scores *= scale
    if not key_mask.all():
        scores += np.where(key_mask, 0.0, -np.inf).astype(scores.dtype)[:, None, None, :]
    attn = softmax(scores, axis=-1)
    ctx = _merge_heads(np.matmul(attn, v))
    out = ctx @ Wo
    cache = dict(xq=xq, xkv=xkv, q=q, k=k, v=v, attn=attn, ctx=ctx,
                 Wq=Wq, Wk=Wk, Wv=Wv, Wo=Wo, n_heads=n_heads, scale=scale)
    return out, cache


def mha_backward(d_out, cache):
    """Returns (dxq, dxkv, dWq, dWk, dWv, dWo)."""
    c = cache
    n_heads = c["n_heads"]
    flat = lambda a: a.reshape(-1, a.shape[-1])  # noqa: E731
    dWo = flat(c["ctx"]).T @ flat(d_out)
    dctx = _split_heads(d_out @ c["Wo"].T, n_heads)
    attn = c["attn"]
    dattn = np.matmul(dctx, c["v"].transpose(0, 1, 3, 2))
    dv = np.matmul(attn.transpose(0, 1, 3, 2), dctx)
    dscores = attn * (dattn - np.sum(dattn * attn, axis=-1, keepdims=True))
    dscores *= c["scale"]
    dq = _merge_heads(np.matmul(dscores, c["k"]))
    dk = _merge_heads(np.matmul(dscores.transpose(0, 1, 3, 2), c["q"]))
    dv = _merge_heads(dv)
    dWq = flat(c["xq"]).T @ flat(dq)
    dWk = flat(c["xkv"]).T @ flat(dk)
    dWv = flat(c["xkv"]).T @ flat(dv)
    dxq = dq @ c["Wq"].T
    dxkv = dk @ c["Wk"].T + dv @ c["Wv"].T
    return dxq, dxkv, dWq, dWk, dWv, dWo


# ---------------------------------------------------------------------------
# masked temporal mean


def masked_mean_forward(x, mask):
    counts = mask.sum(axis=1, keepdims=True).astype(x.dtype)
    return (x * mask[..., None]).sum(axis=1) / counts, (mask, counts)


def masked_mean_backward(d_out, cache):
    mask, counts = cache
    return (d_out / counts)[:, None, :] * mask[..., None]


def dropout_forward(x, p, rng):
    if p <= 0.0:
        return x, None
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * keep, keep


def dropout_backward(d_out, keep):
    return d_out if keep is None else d_out * keep
