"""Fusion strategies over encoded streams and the softmax emotion classifier.

Co-attention lets two streams exchange keys and values: stream A queries
stream B and vice versa, each direction with its own output projection,
and the two results are stacked along time. Hierarchical fusion applies it
twice, acoustic with ASR hidden first and then that result with text.
"""

import numpy as np

from . import layers
from .data import EMOTIONS

STRATEGIES = ("single", "concat", "coattention", "hierarchical")
N_HEADS = 16
MODEL_DIM = 64


def init_coattention(rng, prefix, dim=MODEL_DIM, dtype=np.float32):
    return {f"{prefix}{name}": layers.glorot(rng, dim, dim, dtype=dtype)
            for name in ("Wq", "Wk", "Wv", "Wo_a", "Wo_b")}


def co_attention(params, seq_a, seq_b, mask_a=None, mask_b=None, prefix=""):
    """Co-attend two sequences; returns (H_C, mask, cache).

    Accepts single (T, 64) sequences or padded (B, T, 64) batches. The
    result has T_A + T_B rows: A's queries over B first, then B's queries
    over A.
    """
    single = np.ndim(seq_a) == 2
    if single:
        seq_a, seq_b = seq_a[None], seq_b[None]
    if seq_a.shape[-1] != seq_b.shape[-1]:
        raise ValueError(f"co-attention dims differ: {seq_a.shape[-1]} vs {seq_b.shape[-1]}")
    if mask_a is None:
        mask_a = np.ones(seq_a.shape[:2], dtype=bool)
    if mask_b is None:
        mask_b = np.ones(seq_b.shape[:2], dtype=bool)
    p = prefix
    shared = (params[p + "Wq"], params[p + "Wk"], params[p + "Wv"])
    h1, c1 = layers.mha_forward(seq_a, seq_b, mask_b, *shared, params[p + "Wo_a"], N_HEADS)
    h2, c2 = layers.mha_forward(seq_b, seq_a, mask_a, *shared, params[p + "Wo_b"], N_HEADS)
    h = np.concatenate([h1 * mask_a[..., None], h2 * mask_b[..., None]], axis=1)
    mask = np.concatenate([mask_a, mask_b], axis=1)
    cache = (c1, c2, mask_a, mask_b, single)
    if single:
        return h[0], mask[0], cache
    return h, mask, cache


def co_attention_backward(d_h, cache, grads, prefix=""):
    """Returns (d_seq_a, d_seq_b) and accumulates parameter gradients."""
    c1, c2, mask_a, mask_b, single = cache
    if single:
        d_h = d_h[None]
    Ta = mask_a.shape[1]
    d1 = d_h[:, :Ta] * mask_a[..., None]
    d2 = d_h[:, Ta:] * mask_b[..., None]
    da_q, db_kv, dWq1, dWk1, dWv1, dWo_a = layers.mha_backward(d1, c1)
    db_q, da_kv, dWq2, dWk2, dWv2, dWo_b = layers.mha_backward(d2, c2)
    for name, g in (("Wq", dWq1 + dWq2), ("Wk", dWk1 + dWk2), ("Wv", dWv1 + dWv2),
                    ("Wo_a", dWo_a), ("Wo_b", dWo_b)):
        _accum(grads, prefix + name, g)
    da, db = da_q + da_kv, db_kv + db_q
    if single:
        return da[0], db[0]
    return da, db


def fuse_concat(vectors):
    """Concatenate pooled stream vectors along the feature axis."""
    if len(vectors) == 0:
        raise ValueError("nothing to concatenate")
    return np.concatenate([np.asarray(v) for v in vectors], axis=-1)


def fused_dim(strategy, n_streams):
    if strategy == "single":
        return MODEL_DIM
    if strategy == "concat":
        return MODEL_DIM * n_streams
    if strategy == "coattention":
        return MODEL_DIM * (n_streams - 1)
    if strategy == "hierarchical":
        return MODEL_DIM
    raise ValueError(f"unknown fusion strategy {strategy!r}")


def check_strategy(strategy, n_streams):
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown fusion strategy {strategy!r}")
    need = {"single": (1, 1), "concat": (2, 3), "coattention": (2, 3), "hierarchical": (3, 3)}
    lo, hi = need[strategy]
    if not lo <= n_streams <= hi:
        raise ValueError(f"{strategy} fusion needs {lo}-{hi} streams, got {n_streams}")


def init_fusion(rng, strategy, n_streams, dtype=np.float32):
    check_strategy(strategy, n_streams)
    params = {}
    if strategy == "coattention":
        for j in range(1, n_streams):
            params.update(init_coattention(rng, f"fuse.pair{j}.", dtype=dtype))
    elif strategy == "hierarchical":
        params.update(init_coattention(rng, "fuse.stage1.", dtype=dtype))
        params.update(init_coattention(rng, "fuse.stage2.", dtype=dtype))
    return params


def fuse(params, strategy, seqs, masks):
    """Fuse encoded streams into one vector per utterance.

    ``seqs`` are padded (B, T_i, 64) batches in stream order, acoustic
    first. ``masks`` are the matching (B, T_i) validity masks. Returns
    ``(fused, cache)``.
    """
    check_strategy(strategy, len(seqs))
    if strategy in ("single", "concat"):
        pooled = [layers.masked_mean_forward(s, m) for s, m in zip(seqs, masks)]
        return fuse_concat([v for v, _ in pooled]), (strategy, [c for _, c in pooled])
    if strategy == "coattention":
        parts, caches = [], []
        for j in range(1, len(seqs)):
            p = f"fuse.pair{j}."
            h, m, c = co_attention(params, seqs[0], seqs[j], masks[0], masks[j], p)
            v, pc = layers.masked_mean_forward(h, m)
            parts.append(v)
            caches.append((c, pc))
        return fuse_concat(parts), (strategy, caches)
    h1, m1, c1 = co_attention(params, seqs[0], seqs[1], masks[0], masks[1], "fuse.stage1.")
    h2, m2, c2 = co_attention(params, h1, seqs[2], m1, masks[2], "fuse.stage2.")
    v, pc = layers.masked_mean_forward(h2, m2)
    return v, (strategy, (c1, c2, pc, seqs[0].shape[1]))


def fuse_backward(d_fused, cache, grads):
    """Returns the list of gradients w.r.t. each input sequence."""
    strategy, c = cache
    if strategy in ("single", "concat"):
        out = []
        for j, pc in enumerate(c):
            d = d_fused[:, j * MODEL_DIM:(j + 1) * MODEL_DIM]
            out.append(layers.masked_mean_backward(d, pc))
        return out
    if strategy == "coattention":
        d_first = 0.0
        rest = []
        for j, (cc, pc) in enumerate(c, start=1):
            d = d_fused[:, (j - 1) * MODEL_DIM:j * MODEL_DIM]
            dh = layers.masked_mean_backward(d, pc)
            da, db = co_attention_backward(dh, cc, grads, f"fuse.pair{j}.")
            d_first = d_first + da
            rest.append(db)
        return [d_first] + rest
    c1, c2, pc, Ta = c
    dh2 = layers.masked_mean_backward(d_fused, pc)
    dh1, d_text = co_attention_backward(dh2, c2, grads, "fuse.stage2.")
    d_ac, d_hid = co_attention_backward(dh1, c1, grads, "fuse.stage1.")
    return [d_ac, d_hid, d_text]


def fuse_coattention(params, enc_mfcc, enc_hidden, enc_text):
    """Single-utterance co-attention fusion: acoustic paired with each other stream."""
    seqs = [np.asarray(s)[None] for s in (enc_mfcc, enc_hidden, enc_text)]
    masks = [np.ones(s.shape[:2], dtype=bool) for s in seqs]
    v, _ = fuse(params, "coattention", seqs, masks)
    return v[0]


def fuse_hierarchical(params, enc_mfcc, enc_hidden, enc_text):
    """Single-utterance hierarchical fusion: (acoustic x hidden) x text."""
    seqs = [np.asarray(s)[None] for s in (enc_mfcc, enc_hidden, enc_text)]
    masks = [np.ones(s.shape[:2], dtype=bool) for s in seqs]
    v, _ = fuse(params, "hierarchical", seqs, masks)
    return v[0]


# ---------------------------------------------------------------------------
# classifier


def init_classifier(rng, in_dim, n_classes=len(EMOTIONS), dtype=np.float32):
    return {"cls.W": layers.glorot(rng, in_dim, n_classes, dtype=dtype),
            "cls.b": np.zeros(n_classes, dtype=dtype)}


def classifier_logits(fused, W, b):
    fused = np.asarray(fused)
    if not np.all(np.isfinite(fused)):
        raise ValueError("non-finite classifier input")
    return fused @ W + b


def classify(fused, W, b):
    """Affine map to emotion logits followed by a max-shifted softmax."""
    return layers.softmax(classifier_logits(fused, W, b), axis=-1)


def _accum(grads, key, g):
    grads[key] = grads[key] + g if key in grads else g
