"""Global-norm gradient clipping and Adam with decoupled weight decay."""

import numpy as np


class DivergenceError(FloatingPointError):
    """A non-finite gradient or loss showed up during training."""


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64)))
                             for g in grads.values())))


def clip_gradients(grads, threshold=5.0):
    """Scale all gradients by ``threshold / norm`` when the global L2 norm exceeds it.

    ``grads`` is a ``{name: array}`` dict; a new dict is returned.
    """
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise DivergenceError("non-finite gradient")
    if norm <= threshold:
        return dict(grads)
    scale = threshold / norm
    return {k: (g * scale).astype(g.dtype, copy=False) for k, g in grads.items()}


def adam_init():
    return {"step": 0, "m": {}, "v": {}}


def adam_step(params, grads, state, lr=1e-4, decay=1e-5,
              beta1=0.9, beta2=0.999, eps=1e-8):
    """One in-place Adam update of ``params``.

    Only parameters present in ``grads`` are touched, so a parameter that
    takes no part in the current objective keeps its value exactly.
    Weight decay is decoupled from the moment estimates.
    """
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[k].shape} for {k}")
    state["step"] += 1
    t = state["step"]
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for k in sorted(grads):
        p, g = params[k], grads[k]
        m = state["m"].get(k)
        v = state["v"].get(k)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state["m"][k], state["v"][k] = m.astype(p.dtype), v.astype(p.dtype)
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        if decay:
            p *= 1.0 - lr * decay
        p -= (lr * update).astype(p.dtype)
    return params, state
