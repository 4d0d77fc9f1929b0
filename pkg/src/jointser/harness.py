"""Cross-validation harness and the fusion / layer comparison experiments."""

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .metrics import unweighted_accuracy, weighted_accuracy
from .training import TrainConfig, evaluate, train
from .wer import WERReport

log = logging.getLogger(__name__)

__all__ = ["FoldPlan", "ExperimentResult", "TableRow", "make_folds", "run_cv",
           "compare_fusions", "layer_sweep", "emit_report", "weighted_accuracy",
           "unweighted_accuracy", "dataset_hash", "write_provenance"]

LAYER_NAMES = {"hidden_first": "first layer", "hidden_middle": "middle layer",
               "hidden_final": "final layer"}
FUSION_NAMES = {"concat": "Concatenation", "coattention": "Co-attention",
                "hierarchical": "Hierarchical co-attention", "single": "-"}
REPORT_FORMATS = ("json", "text")


class LeakError(AssertionError):
    """A held-out utterance reached a training batch."""


@dataclass
class FoldPlan:
    folds: List[List[str]]
    sessions: List[List[str]]

    def __len__(self):
        return len(self.folds)


@dataclass
class ExperimentResult:
    descriptor: dict
    seed: int
    fold_wa: List[float]
    fold_ua: List[float]
    pooled_wa: float
    train_ids: List[set] = field(default_factory=list, repr=False)
    histories: List[list] = field(default_factory=list, repr=False)

    @property
    def mean_wa(self):
        return float(np.mean(self.fold_wa))

    @property
    def mean_ua(self):
        return float(np.mean(self.fold_ua))

    def to_dict(self):
        return {"descriptor": self.descriptor, "seed": self.seed,
                "fold_wa": self.fold_wa, "fold_ua": self.fold_ua,
                "mean_wa": self.mean_wa, "mean_ua": self.mean_ua,
                "pooled_wa": self.pooled_wa}


@dataclass
class TableRow:
    model: str
    feature: str
    fusion: str
    result: Optional[ExperimentResult] = None
    skipped: Optional[str] = None
    selected: bool = False

    def to_dict(self):
        d = {"model": self.model, "feature": self.feature, "fusion": self.fusion}
        if self.result is not None:
            d.update(self.result.to_dict())
        if self.skipped:
            d["skipped"] = self.skipped
        if self.selected:
            d["selected"] = True
        return d


def make_folds(records, n_folds=5):
    """Session-disjoint folds; with exactly ``n_folds`` sessions, leave-one-session-out."""
    sessions = sorted({r.session_id for r in records})
    if len(sessions) < n_folds:
        raise ValueError(
            f"{len(sessions)} sessions cannot form {n_folds} session-disjoint folds; "
            f"pass n_folds={len(sessions)} (or fewer) to override")
    fold_sessions = [sessions[i::n_folds] for i in range(n_folds)]
    where = {s: i for i, group in enumerate(fold_sessions) for s in group}
    folds = [[] for _ in range(n_folds)]
    for r in records:
        folds[where[r.session_id]].append(r.utterance_id)
    return FoldPlan(folds, fold_sessions)


def describe(cfg):
    return {"fusion": cfg.fusion, "streams": list(cfg.resolved_streams()),
            "lam": cfg.lam, "epochs": cfg.max_epochs}


def run_cv(records, features, cfg: TrainConfig, n_folds=5, repeats=1):
    """Train on all-but-one fold and evaluate on the held-out fold, for every fold.

    With ``repeats`` > 1 the whole CV is repeated with seeds
    ``cfg.seed, cfg.seed + 1, ...`` and fold scores are pooled.
    """
    plan = make_folds(records, n_folds)
    by_id = {r.utterance_id: r for r in records}
    fold_wa, fold_ua, seen_all, histories = [], [], [], []
    all_preds, all_labels = [], []
    for rep in range(repeats):
        run_cfg = replace(cfg, seed=cfg.seed + rep)
        for k, held in enumerate(plan.folds):
            held_set = set(held)
            test = [by_id[u] for u in held]
            tr = [r for r in records if r.utterance_id not in held_set]
            res = train(tr, features, run_cfg, test, features)
            leaked = res.seen_ids & held_set
            if leaked:
                raise LeakError(f"fold {k}: held-out ids in training batches: {sorted(leaked)[:5]}")
            ev = evaluate(res.checkpoint, test, features)
            fold_wa.append(ev["wa"])
            fold_ua.append(ev["ua"])
            all_preds.append(ev["preds"])
            all_labels.append(ev["labels"])
            seen_all.append(res.seen_ids)
            histories.append(res.history)
            log.info("fold %d/%d (%s): WA %.4f UA %.4f", k + 1, n_folds,
                     ",".join(plan.sessions[k]), ev["wa"], ev["ua"])
    pooled = weighted_accuracy(np.concatenate(all_preds), np.concatenate(all_labels))
    return ExperimentResult(describe(cfg), cfg.seed, fold_wa, fold_ua, pooled, seen_all, histories)


def _available(features, records, streams):
    first = features[records[0].utterance_id]
    missing = [s for s in streams if s not in first]
    return missing


def _run_rows(records, features, base, rows, n_folds, repeats):
    out = []
    for model, feature, fusion_name, streams in rows:
        cfg = replace(base, fusion=fusion_name, streams=tuple(streams))
        resolved = cfg.resolved_streams()
        missing = _available(features, records, resolved)
        row = TableRow(model, feature, FUSION_NAMES[fusion_name])
        if missing:
            row.skipped = f"missing streams: {', '.join(missing)}"
            log.warning("skipping %s / %s: %s", feature, fusion_name, row.skipped)
        else:
            row.result = run_cv(records, features, cfg, n_folds, repeats)
        out.append(row)
    return out


def compare_fusions(records, features, base_config: TrainConfig, n_folds=5, repeats=1):
    """Every feature combination and fusion method, plus single-stream baselines.

    All rows share ``base_config.seed`` so differences come from the
    configuration rather than initialisation.
    """
    layer = LAYER_NAMES.get(base_config.hidden_stream, base_config.hidden_stream)
    hid = f"Hidden output ({layer})"
    rows = [
        ("SER (baseline)", "Acoustic + Ground-truth transcripts", "concat", ("mfcc", "text_ref")),
        ("SER (baseline)", "Acoustic + Ground-truth transcripts", "coattention", ("mfcc", "text_ref")),
        ("ASR-SER", f"Acoustic + {hid}", "concat", ("mfcc", "hidden")),
        ("ASR-SER", f"Acoustic + {hid}", "coattention", ("mfcc", "hidden")),
        ("ASR-SER", "Acoustic + Text output", "concat", ("mfcc", "text")),
        ("ASR-SER", "Acoustic + Text output", "coattention", ("mfcc", "text")),
        ("ASR-SER", f"Acoustic + {hid} + Text output", "concat", ("mfcc", "hidden", "text")),
        ("ASR-SER", f"Acoustic + {hid} + Text output", "coattention", ("mfcc", "hidden", "text")),
        ("ASR-SER", f"Acoustic + {hid} + Text output", "hierarchical", ("mfcc", "hidden", "text")),
        ("SER (baseline)", "Acoustic", "single", ("mfcc",)),
        ("ASR-SER", "Text output", "single", ("text",)),
    ]
    return _run_rows(records, features, base_config, rows, n_folds, repeats)


def layer_sweep(records, features, base_config: TrainConfig, n_folds=5, repeats=1):
    """Single-stream runs over each ASR hidden layer variant, with baselines.

    The hidden variant with the highest mean WA is flagged ``selected``.
    """
    rows = [
        ("SER (baseline)", "Acoustic", "single", ("mfcc",)),
        ("SER (baseline)", "Ground-truth transcripts", "single", ("text_ref",)),
    ]
    rows += [("ASR-SER", f"Hidden output ({name})", "single", (stream,))
             for stream, name in LAYER_NAMES.items()]
    rows.append(("ASR-SER", "Text output", "single", ("text",)))
    table = _run_rows(records, features, base_config, rows, n_folds, repeats)
    hidden = [r for r in table if r.feature.startswith("Hidden") and r.result is not None]
    if hidden:
        # first listed wins ties
        best = max(hidden, key=lambda r: r.result.mean_wa)
        best.selected = True
    return table


def selected_layer(table):
    for row in table:
        if row.selected:
            return row
    return None


# ---------------------------------------------------------------------------
# reports


def _table_text(rows):
    head = ["Model", "Feature", "Fusion approach", "WA", "UA"]
    lines = [head]
    notes = []
    for r in rows:
        if r.result is None:
            wa = ua = "-"
            notes.append(f"{r.feature} / {r.fusion}: skipped ({r.skipped})")
        else:
            wa = f"{100 * r.result.mean_wa:.1f}%" + ("*" if r.selected else "")
            ua = f"{100 * r.result.mean_ua:.1f}%"
        lines.append([r.model, r.feature, r.fusion, wa, ua])
    widths = [max(len(l[i]) for l in lines) for i in range(len(head))]
    text = "\n".join("  ".join(c.ljust(w) for c, w in zip(l, widths)).rstrip()
                     for l in lines) + "\n"
    if any(r.selected for r in rows):
        text += "* highest-WA hidden layer\n"
    for n in notes:
        text += n + "\n"
    return text


def _result_text(res: ExperimentResult):
    lines = [f"fusion: {res.descriptor['fusion']}",
             f"streams: {', '.join(res.descriptor['streams'])}",
             f"seed: {res.seed}",
             "fold  WA      UA"]
    for k, (wa, ua) in enumerate(zip(res.fold_wa, res.fold_ua), 1):
        lines.append(f"{k:<4}  {100 * wa:5.1f}%  {100 * ua:5.1f}%")
    lines.append(f"mean  {100 * res.mean_wa:5.1f}%  {100 * res.mean_ua:5.1f}%")
    lines.append(f"pooled WA: {100 * res.pooled_wa:.1f}%")
    return "\n".join(lines) + "\n"


def render_report(result, fmt):
    if fmt not in REPORT_FORMATS:
        raise ValueError(f"unknown report format {fmt!r}; expected one of {REPORT_FORMATS}")
    if isinstance(result, WERReport):
        if fmt == "json":
            return result.to_json()
        text = result.emotion_table()
        if result.buckets:
            text += "\n" + result.length_table()
        return text
    if isinstance(result, ExperimentResult):
        if fmt == "json":
            return json.dumps(result.to_dict(), sort_keys=True, indent=2) + "\n"
        return _result_text(result)
    rows = list(result)
    if fmt == "json":
        return json.dumps([r.to_dict() for r in rows], sort_keys=True, indent=2) + "\n"
    return _table_text(rows)


def emit_report(result, fmt, path):
    """Write ``result`` as ``json`` (machine-readable) or ``text`` (aligned table)."""
    text = render_report(result, fmt)
    Path(path).write_text(text, encoding="utf-8")
    return Path(path)


def dataset_hash(records, features):
    h = hashlib.sha256()
    for r in sorted(records, key=lambda r: r.utterance_id):
        h.update(json.dumps([r.utterance_id, r.session_id, r.emotion, r.ref_transcript,
                             r.hyp_transcript]).encode())
        for s in sorted(features.get(r.utterance_id, {})):
            h.update(s.encode())
            h.update(np.ascontiguousarray(features[r.utterance_id][s], dtype="<f4").tobytes())
    return h.hexdigest()


def write_provenance(run_dir, cfg, records, features, extra=None):
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    info = {"config": cfg.to_dict(), "config_hash": cfg.hash(), "seed": cfg.seed,
            "dataset_hash": dataset_hash(records, features), "n_utterances": len(records)}
    if extra:
        info.update(extra)
    path = run_dir / "inputs.json"
    path.write_text(json.dumps(info, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path
