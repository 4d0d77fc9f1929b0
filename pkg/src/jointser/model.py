"""Joint ASR-SER model: per-stream encoders, fusion, emotion classifier, CTC head."""

from dataclasses import dataclass

import numpy as np

from . import encoders, fusion, layers, losses
from .data import EMOTIONS

LABEL_INDEX = {e: i for i, e in enumerate(EMOTIONS)}


@dataclass
class Batch:
    ids: list
    x: dict          # stream -> (B, T, D) padded
    lengths: dict    # stream -> (B,)
    labels: np.ndarray
    targets: list    # CTC label indices per utterance (blank excluded)


def make_batch(records, features, streams, vocab_index=None, dtype=np.float32):
    """Pad the requested streams of ``records`` into one batch.

    The mfcc stream is max-pooled along time (kernel 2) first. Reference
    tokens missing from ``vocab_index`` are dropped from the CTC targets.
    """
    x, lengths = {}, {}
    for s in streams:
        seqs = []
        for r in records:
            m = features[r.utterance_id][s]
            if s == "mfcc":
                m = encoders.max_pool_time(m, 2)
            seqs.append(m)
        lens = np.array([len(m) for m in seqs])
        out = np.zeros((len(seqs), lens.max(), seqs[0].shape[1]), dtype=dtype)
        for i, m in enumerate(seqs):
            out[i, :len(m)] = m
        x[s], lengths[s] = out, lens
    labels = np.array([LABEL_INDEX[r.emotion] for r in records])
    targets = []
    if vocab_index is not None:
        for r in records:
            targets.append(np.array([vocab_index[w] for w in r.ref_transcript
                                     if w in vocab_index], dtype=int))
    return Batch([r.utterance_id for r in records], x, lengths, labels, targets)


def build_vocab(records):
    """Sorted reference-token inventory; index 0 is reserved for the CTC blank."""
    words = sorted({w for r in records for w in r.ref_transcript})
    return words, {w: i + 1 for i, w in enumerate(words)}


class JointModel:
    """SER classifier over fused streams, with an auxiliary CTC head.

    ``streams`` lists feature streams in fusion order, acoustic first. When
    one of them is an ASR hidden stream, its encoding also feeds a CTC head
    and the objective is ``lam * L_ASR + (1 - lam) * L_SER``; otherwise the
    model is SER-only and the objective is ``L_SER``.
    """

    def __init__(self, streams, input_dims, strategy, vocab, seed=0, dtype=np.float32,
                 enc_cfg=encoders.EncoderConfig(), params=None):
        self.streams = tuple(streams)
        self.input_dims = dict(input_dims)
        self.strategy = strategy
        self.vocab = list(vocab)
        self.vocab_index = {w: i + 1 for i, w in enumerate(self.vocab)}
        self.enc_cfg = enc_cfg
        self.dtype = dtype
        fusion.check_strategy(strategy, len(self.streams))
        hidden = [s for s in self.streams if s.startswith("hidden")]
        self.asr_stream = hidden[0] if hidden else None
        if params is None:
            params = self._init_params(np.random.default_rng(seed), dtype)
        self.params = params

    def _init_params(self, rng, dtype):
        params = {}
        for s in self.streams:
            params.update(encoders.init_encoder(rng, self.input_dims[s], f"enc.{s}.",
                                                self.enc_cfg, dtype))
        params.update(fusion.init_fusion(rng, self.strategy, len(self.streams), dtype))
        params.update(fusion.init_classifier(
            rng, fusion.fused_dim(self.strategy, len(self.streams)), dtype=dtype))
        if self.asr_stream is not None:
            k = len(self.vocab) + 1
            params["asr.W"] = layers.glorot(rng, self.enc_cfg.attn_dim, k, dtype=dtype)
            params["asr.b"] = np.zeros(k, dtype=dtype)
        return params

    @property
    def uses_asr(self):
        return self.asr_stream is not None

    def astype(self, dtype):
        params = {k: v.astype(dtype) for k, v in self.params.items()}
        return JointModel(self.streams, self.input_dims, self.strategy, self.vocab,
                          dtype=dtype, enc_cfg=self.enc_cfg, params=params)

    def batch(self, records, features):
        return make_batch(records, features, self.streams, self.vocab_index, self.dtype)

    # -- forward / backward -------------------------------------------------

    def _encode(self, batch, training, rng):
        seqs, masks, caches = [], [], []
        for s in self.streams:
            x, lens = batch.x[s], batch.lengths[s]
            out, c = encoders.encode(self.params, x, lens, f"enc.{s}.", training, rng, self.enc_cfg)
            seqs.append(out)
            masks.append(layers.lengths_to_mask(lens, x.shape[1]))
            caches.append(c)
        return seqs, masks, caches

    def logits(self, batch):
        seqs, masks, _ = self._encode(batch, False, None)
        fused, _ = fusion.fuse(self.params, self.strategy, seqs, masks)
        return fusion.classifier_logits(fused, self.params["cls.W"], self.params["cls.b"])

    def predict_proba(self, batch):
        return layers.softmax(self.logits(batch), axis=-1)

    def loss_and_grads(self, batch, lam=0.2, training=True, rng=None, need_grads=True):
        """Forward the batch and backpropagate the multi-task objective.

        Returns ``(MultiTaskLoss, grads, info)``. A loss term whose weight is
        zero is not backpropagated, so parameters reachable only through it
        get no gradient entry. ``info["ctc_skipped"]`` counts utterances
        whose transcript cannot be aligned to their hidden frames.
        """
        p = self.params
        seqs, masks, enc_caches = self._encode(batch, training, rng)
        fused, f_cache = fusion.fuse(p, self.strategy, seqs, masks)
        logits = fusion.classifier_logits(fused, p["cls.W"], p["cls.b"])
        l_ser, d_logits = losses.cross_entropy_from_logits(logits, batch.labels)

        info = {"ctc_skipped": 0}
        l_asr, asr = 0.0, None
        if self.uses_asr:
            l_asr, asr, info["ctc_skipped"] = self._ctc(seqs[self.streams.index(self.asr_stream)],
                                                        batch)
            total = losses.multitask_loss(float(l_asr), float(l_ser), lam)
        else:
            total = losses.MultiTaskLoss(lam, 0.0, float(l_ser), float(l_ser))
        if not np.isfinite(total.total):
            raise FloatingPointError("non-finite training loss")
        if not need_grads:
            return total, None, info

        w_ser = (1.0 - lam) if self.uses_asr else 1.0
        w_asr = lam if self.uses_asr else 0.0
        grads = {}
        d_seqs = [np.zeros_like(s) for s in seqs]
        if w_ser > 0:
            d_logits = (d_logits * w_ser).astype(self.dtype)
            grads["cls.W"] = fused.T @ d_logits
            grads["cls.b"] = d_logits.sum(axis=0)
            d_fused = d_logits @ p["cls.W"].T
            d_seqs = [a + b for a, b in zip(d_seqs, fusion.fuse_backward(d_fused, f_cache, grads))]
        if w_asr > 0 and asr is not None:
            hid, d_logp, logp = asr
            dz = layers.log_softmax_backward(d_logp * w_asr, logp).astype(self.dtype)
            grads["asr.W"] = hid.reshape(-1, hid.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])
            grads["asr.b"] = dz.reshape(-1, dz.shape[-1]).sum(axis=0)
            j = self.streams.index(self.asr_stream)
            d_seqs[j] = d_seqs[j] + dz @ p["asr.W"].T
        if w_ser > 0 or (w_asr > 0 and asr is not None):
            for s, d, c in zip(self.streams, d_seqs, enc_caches):
                if w_ser == 0 and s != self.asr_stream:
                    continue
                encoders.encode_backward(d, c, grads, f"enc.{s}.", self.enc_cfg)
        return total, grads, info

    def _ctc(self, hid, batch):
        lens = batch.lengths[self.asr_stream]
        logp = layers.log_softmax(hid @ self.params["asr.W"] + self.params["asr.b"], axis=-1)
        keep = [i for i, t in enumerate(batch.targets)
                if len(t) > 0 and lens[i] >= losses.ctc_min_frames(t)]
        skipped = len(batch.targets) - len(keep)
        d_logp = np.zeros_like(logp)
        if not keep:
            return 0.0, (hid, d_logp, logp), skipped
        loss, grad = losses.ctc_loss_batch(logp[keep], lens[keep],
                                           [batch.targets[i] for i in keep])
        n = len(keep)
        d_logp[keep] = grad / n
        return float(loss.mean()), (hid, d_logp, logp), skipped
