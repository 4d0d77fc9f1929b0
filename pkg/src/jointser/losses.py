"""SER cross-entropy, the ASR CTC head, and the weighted multi-task objective."""

from dataclasses import dataclass

import numpy as np

from . import layers

BLANK = 0


class CTCInfeasibleError(ValueError):
    """The target cannot be aligned to the available number of frames."""


@dataclass(frozen=True)
class MultiTaskLoss:
    lam: float
    l_asr: float
    l_ser: float
    total: float


def multitask_loss(l_asr, l_ser, lam=0.2):
    """``lam * l_asr + (1 - lam) * l_ser``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if not (np.isfinite(l_asr) and np.isfinite(l_ser)):
        raise ValueError("non-finite loss component")
    return MultiTaskLoss(lam, l_asr, l_ser, lam * l_asr + (1.0 - lam) * l_ser)


def cross_entropy(dist, label):
    """Negative log-probability of ``label`` under a distribution."""
    return -np.log(dist[label])


def cross_entropy_from_logits(logits, labels):
    """Mean cross-entropy over a batch, and its gradient w.r.t. the logits."""
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(labels)
    logp = layers.log_softmax(logits, axis=-1)
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    d = np.exp(logp)
    d[np.arange(n), labels] -= 1.0
    return loss, d / n


def asr_head(seq, W, b):
    """Per-frame log-probabilities over blank + vocabulary, shape (T, V+1)."""
    seq = np.asarray(seq)
    if seq.shape[-1] != W.shape[0]:
        raise ValueError(f"ASR head expects dim {W.shape[0]}, got {seq.shape[-1]}")
    return layers.log_softmax(seq @ W + b, axis=-1)


def ctc_min_frames(target):
    """Frames needed to emit ``target``: one per token plus a blank between repeats."""
    target = list(target)
    return len(target) + sum(a == b for a, b in zip(target, target[1:]))


def ctc_loss(log_probs, target, blank=BLANK, return_grad=False):
    """Negative log-likelihood of ``target`` summed over all CTC alignments.

    ``log_probs`` is (T, K) with the blank at index ``blank``; ``target``
    holds label indices (never the blank). With ``return_grad`` the
    gradient w.r.t. ``log_probs`` is returned as well.
    """
    log_probs = np.asarray(log_probs)
    target = np.asarray(target, dtype=int)
    if target.size < 1:
        raise ValueError("empty CTC target")
    if np.any(target == blank):
        raise ValueError("CTC target contains the blank label")
    T = log_probs.shape[0]
    if T < ctc_min_frames(target):
        raise CTCInfeasibleError(
            f"{T} frames cannot emit {target.size} labels "
            f"(needs {ctc_min_frames(target)})")
    loss, grad = ctc_loss_batch(log_probs[None], np.array([T]), [target], blank)
    if return_grad:
        return loss[0], grad[0]
    return loss[0]


def ctc_loss_batch(log_probs, lengths, targets, blank=BLANK):
    """Batched CTC over padded (B, T, K) log-probabilities.

    Every instance must be feasible. Returns per-utterance losses (B,) and
    gradients (B, T, K); gradient rows past an utterance's length are zero.
    """
    B, Tmax, K = log_probs.shape
    lengths = np.asarray(lengths)
    Lmax = max(len(t) for t in targets)
    S = 2 * Lmax + 1
    ext = np.full((B, S), blank, dtype=int)
    s_len = np.zeros(B, dtype=int)
    for b, tgt in enumerate(targets):
        ext[b, 1:2 * len(tgt):2] = tgt
        s_len[b] = 2 * len(tgt) + 1
    s_idx = np.arange(S)[None, :]
    valid = s_idx < s_len[:, None]
    prev2 = np.concatenate([np.full((B, 2), -1), ext[:, :-2]], axis=1)
    skip = (s_idx >= 2) & (ext != blank) & (ext != prev2) & valid

    lp = np.take_along_axis(log_probs, np.broadcast_to(ext[:, None, :], (B, Tmax, S)), axis=2)
    neg = np.full((B, S), -np.inf, dtype=log_probs.dtype)

    alpha = np.full((B, Tmax, S), -np.inf, dtype=log_probs.dtype)
    alpha[:, 0, :2] = lp[:, 0, :2]
    alpha[:, 0] = np.where(valid, alpha[:, 0], -np.inf)
    with np.errstate(invalid="ignore"):
        for t in range(1, Tmax):
            a = alpha[:, t - 1]
            a1 = np.concatenate([neg[:, :1], a[:, :-1]], axis=1)
            a2 = np.where(skip, np.concatenate([neg[:, :2], a[:, :-2]], axis=1), -np.inf)
            alpha[:, t] = np.where(valid, np.logaddexp(np.logaddexp(a, a1), a2) + lp[:, t], -np.inf)

        rows = np.arange(B)
        last = alpha[rows, lengths - 1]
        log_p = np.logaddexp(last[rows, s_len - 1], last[rows, s_len - 2])

        beta = np.full((B, Tmax, S), -np.inf, dtype=log_probs.dtype)
        ends = (s_idx == (s_len - 1)[:, None]) | (s_idx == (s_len - 2)[:, None])
        nxt = np.full((B, S), -np.inf, dtype=log_probs.dtype)
        skip_next = np.concatenate([skip[:, 2:], np.zeros((B, 2), dtype=bool)], axis=1)
        for t in range(Tmax - 1, -1, -1):
            b1 = np.concatenate([nxt[:, 1:], neg[:, :1]], axis=1)
            b2 = np.where(skip_next, np.concatenate([nxt[:, 2:], neg[:, :2]], axis=1), -np.inf)
            rec = np.logaddexp(np.logaddexp(nxt, b1), b2) + lp[:, t]
            init = np.where(ends, lp[:, t], -np.inf)
            at_end = (t == lengths - 1)[:, None]
            inside = (t < lengths - 1)[:, None]
            cur = np.where(at_end, init, np.where(inside & valid, rec, -np.inf))
            beta[:, t] = cur
            nxt = cur

        occ = np.exp(alpha + beta - lp - log_p[:, None, None])
    occ = np.nan_to_num(occ, nan=0.0)
    onehot = np.zeros((B, S, K), dtype=log_probs.dtype)
    onehot[np.arange(B)[:, None], s_idx, ext] = valid
    grad = -np.matmul(occ, onehot)
    return -log_p, grad
