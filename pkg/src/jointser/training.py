"""Training loop, evaluation and the CKPT checkpoint container."""

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import optim
from .data import EMOTIONS, decode_feature_matrix, encode_feature_matrix
from .metrics import unweighted_accuracy, weighted_accuracy
from .model import JointModel, build_vocab

log = logging.getLogger(__name__)

CKPT_MAGIC = b"CKPT"
CKPT_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    clip_threshold: float = 5.0
    batch_size: int = 20
    max_epochs: int = 100
    lam: float = 0.2
    seed: int = 0
    fusion: str = "hierarchical"
    hidden_stream: str = "hidden_middle"
    # "hidden" stands for ``hidden_stream``
    streams: tuple = ("mfcc", "hidden", "text")

    def validate(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be non-negative")
        if self.clip_threshold <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("clip_threshold, batch_size and max_epochs must be positive")

    def resolved_streams(self):
        return tuple(self.hidden_stream if s == "hidden" else s for s in self.streams)

    def to_dict(self):
        d = asdict(self)
        d["streams"] = list(self.streams)
        return d

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise KeyError(f"unknown TrainConfig fields: {sorted(unknown)}")
        if "streams" in d:
            d["streams"] = tuple(d["streams"])
        return cls(**d)


@dataclass
class Checkpoint:
    model: JointModel
    config: TrainConfig
    optimizer: dict = field(default_factory=optim.adam_init)
    epoch: int = 0


@dataclass
class EpochMetrics:
    epoch: int
    l_asr: float
    l_ser: float
    total: float
    heldout_wa: Optional[float]

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list
    seen_ids: set
    ctc_skipped: int


def new_model(cfg, records, features):
    streams = cfg.resolved_streams()
    first = features[records[0].utterance_id]
    dims = {s: first[s].shape[1] for s in streams}
    vocab, _ = build_vocab(records)
    return JointModel(streams, dims, cfg.fusion, vocab, seed=cfg.seed)


def _check_streams(records, features, streams):
    for r in records:
        have = features.get(r.utterance_id, {})
        missing = [s for s in streams if s not in have]
        if missing:
            raise KeyError(f"{r.utterance_id}: missing streams {missing}")


def train(records, features, cfg: TrainConfig, eval_records=None, eval_features=None,
          checkpoint: Optional[Checkpoint] = None):
    """Minibatch training with the multi-task objective.

    Each epoch shuffles with a seeded generator, steps Adam on batches of
    ``cfg.batch_size`` after global-norm clipping, and, when an evaluation
    set is given, records its weighted accuracy.
    """
    cfg.validate()
    streams = cfg.resolved_streams()
    _check_streams(records, features, streams)
    if checkpoint is None:
        checkpoint = Checkpoint(new_model(cfg, records, features), cfg)
    model = checkpoint.model
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    dropout_rng = np.random.default_rng(seeds[1])

    history, seen, skipped = [], set(), 0
    n = len(records)
    for epoch in range(checkpoint.epoch + 1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, cfg.batch_size):
            chunk = [records[i] for i in order[start:start + cfg.batch_size]]
            batch = model.batch(chunk, features)
            seen.update(batch.ids)
            loss, grads, info = model.loss_and_grads(batch, cfg.lam, training=True,
                                                     rng=dropout_rng)
            skipped += info["ctc_skipped"]
            if not np.isfinite(loss.total):
                raise optim.DivergenceError(f"non-finite loss at epoch {epoch}")
            grads = optim.clip_gradients(grads, cfg.clip_threshold)
            optim.adam_step(model.params, grads, checkpoint.optimizer,
                            cfg.learning_rate, cfg.weight_decay)
            sums += np.array([loss.l_asr, loss.l_ser, loss.total]) * len(chunk)
        checkpoint.epoch = epoch
        wa = None
        if eval_records:
            wa = evaluate(checkpoint, eval_records, eval_features)["wa"]
        m = EpochMetrics(epoch, *(float(v) for v in sums / n), wa)
        history.append(m)
        log.debug("epoch %d: total %.4f heldout WA %s", epoch, m.total, wa)
    if skipped:
        log.warning("skipped %d infeasible CTC instances", skipped)
    return TrainResult(checkpoint, history, seen, skipped)


def predict(model, records, features, batch_size=64):
    probs = []
    for start in range(0, len(records), batch_size):
        batch = model.batch(records[start:start + batch_size], features)
        probs.append(model.predict_proba(batch))
    return np.concatenate(probs, axis=0)


def evaluate(checkpoint, records, features):
    """Dropout-free predictions with weighted and unweighted accuracy."""
    model = checkpoint.model
    _check_streams(records, features, model.streams)
    first = features[records[0].utterance_id]
    for s in model.streams:
        if first[s].shape[1] != model.input_dims[s]:
            raise ValueError(f"stream {s!r} has dim {first[s].shape[1]}, "
                             f"model expects {model.input_dims[s]}")
    probs = predict(model, records, features)
    preds = probs.argmax(axis=1)
    labels = np.array([EMOTIONS.index(r.emotion) for r in records])
    return {
        "ids": [r.utterance_id for r in records],
        "probs": probs,
        "preds": preds,
        "labels": labels,
        "wa": weighted_accuracy(preds, labels),
        "ua": unweighted_accuracy(preds, labels),
    }


def write_metrics(history, path):
    with open(path, "w", encoding="utf-8") as fh:
        for m in history:
            fh.write(m.to_json() + "\n")


# ---------------------------------------------------------------------------
# checkpoint container
#
# "CKPT" | u32 version | 64 ascii bytes config sha256 | u32 meta length |
# meta JSON | u32 entry count | entries. Each entry is u16 name length,
# utf-8 name, u8 ndim, ndim x u32 shape, then one FMX1 blob holding the
# array flattened to (prod(shape[:-1]), shape[-1]).


def _pack_entry(name, arr):
    arr = np.asarray(arr)
    shape = arr.shape if arr.ndim else (1,)
    raw = name.encode()
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", len(shape))
    head += struct.pack(f"<{len(shape)}I", *shape)
    return head + encode_feature_matrix(arr.reshape(-1, shape[-1]))


def save_checkpoint(ckpt: Checkpoint, path):
    m = ckpt.model
    meta = {
        "config": ckpt.config.to_dict(),
        "streams": list(m.streams),
        "input_dims": m.input_dims,
        "strategy": m.strategy,
        "vocab": m.vocab,
        "epoch": ckpt.epoch,
        "adam_step": ckpt.optimizer["step"],
    }
    meta_raw = json.dumps(meta, sort_keys=True).encode()
    entries = [(f"param/{k}", v) for k, v in sorted(m.params.items())]
    for kind in ("m", "v"):
        entries += [(f"adam.{kind}/{k}", v) for k, v in sorted(ckpt.optimizer[kind].items())]
    out = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION), ckpt.config.hash().encode(),
           struct.pack("<I", len(meta_raw)), meta_raw, struct.pack("<I", len(entries))]
    out += [_pack_entry(k, v) for k, v in entries]
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path):
    buf = Path(path).read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise ValueError(f"not a checkpoint: magic {buf[:4]!r}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    cfg_hash = buf[8:72].decode()
    (meta_len,) = struct.unpack_from("<I", buf, 72)
    off = 76
    meta = json.loads(buf[off:off + meta_len])
    off += meta_len
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        mat, off = decode_feature_matrix(buf, off)
        arrays[name] = mat.reshape(shape)
    cfg = TrainConfig.from_dict(meta["config"])
    if cfg.hash() != cfg_hash:
        raise ValueError("checkpoint config hash mismatch")
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    model = JointModel(meta["streams"], meta["input_dims"], meta["strategy"], meta["vocab"],
                       params=params)
    opt = {"step": meta["adam_step"],
           "m": {k[len("adam.m/"):]: v for k, v in arrays.items() if k.startswith("adam.m/")},
           "v": {k[len("adam.v/"):]: v for k, v in arrays.items() if k.startswith("adam.v/")}}
    return Checkpoint(model, cfg, opt, meta["epoch"])
