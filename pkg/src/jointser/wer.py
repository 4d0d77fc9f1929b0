"""Word error rate and per-emotion / per-length WER breakdowns."""

import json
import string
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .data import EMOTIONS

SHORT_THRESHOLD = 10  # an utterance is short when it has fewer words than this
BUCKETS = (("<=10", 0, 10), ("11-20", 11, 20), ("21-30", 21, 30), (">30", 31, None))
ABSENT = "-"


class UndefinedWERError(ValueError):
    """WER is undefined for an empty reference."""


@dataclass(frozen=True)
class AlignmentResult:
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def edits(self):
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self):
        return self.edits / self.ref_len


def tokenize(text):
    """Whitespace split, case-folded, punctuation stripped from token edges."""
    if not isinstance(text, str):
        text = " ".join(text)
    out = []
    for tok in text.split():
        tok = tok.casefold().strip(string.punctuation)
        if tok:
            out.append(tok)
    return out


def word_error_rate(ref, hyp):
    """Minimum-edit alignment of two token sequences with unit costs.

    Among alignments of equal total cost, substitutions are preferred over
    an insertion plus a deletion.
    """
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    if n == 0:
        raise UndefinedWERError("empty reference")
    # cost[i][j] = (edits, -subs) so that ties favour substitutions
    INF = (n + m + 1, 0)
    cost = [[INF] * (m + 1) for _ in range(n + 1)]
    back = [[None] * (m + 1) for _ in range(n + 1)]
    cost[0][0] = (0, 0)
    for i in range(n + 1):
        for j in range(m + 1):
            if i == 0 and j == 0:
                continue
            best, move = INF, None
            if i > 0 and j > 0:
                e, s = cost[i - 1][j - 1]
                cand = (e, s) if ref[i - 1] == hyp[j - 1] else (e + 1, s - 1)
                if cand < best:
                    best, move = cand, "match" if ref[i - 1] == hyp[j - 1] else "sub"
            if i > 0:
                e, s = cost[i - 1][j]
                if (e + 1, s) < best:
                    best, move = (e + 1, s), "del"
            if j > 0:
                e, s = cost[i][j - 1]
                if (e + 1, s) < best:
                    best, move = (e + 1, s), "ins"
            cost[i][j], back[i][j] = best, move
    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        move = back[i][j]
        if move in ("match", "sub"):
            subs += move == "sub"
            i, j = i - 1, j - 1
        elif move == "del":
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return AlignmentResult(subs, dels, ins, n)


def corpus_wer(pairs):
    """Micro-averaged WER: total edits over total reference words."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty corpus")
    edits = words = 0
    for ref, hyp in pairs:
        a = word_error_rate(ref, hyp)
        edits += a.edits
        words += a.ref_len
    return edits / words


def _pairs(record):
    if record.hyp_transcript is None:
        raise ValueError(f"{record.utterance_id}: no hypothesis transcript")
    return tokenize(record.ref_transcript), tokenize(record.hyp_transcript)


def bucket_of(n_words):
    for label, lo, hi in BUCKETS:
        if n_words >= lo and (hi is None or n_words <= hi):
            return label
    raise ValueError(f"no bucket for {n_words} words")


class _Acc:
    __slots__ = ("edits", "words", "utts", "short")

    def __init__(self):
        self.edits = self.words = self.utts = self.short = 0

    def add(self, a: AlignmentResult):
        self.edits += a.edits
        self.words += a.ref_len
        self.utts += 1
        self.short += a.ref_len < SHORT_THRESHOLD

    def stats(self):
        if self.utts == 0:
            return None
        return {"wer": self.edits / self.words, "utterances": self.utts,
                "short_ratio": self.short / self.utts, "edits": self.edits, "words": self.words}


@dataclass
class WERReport:
    per_emotion: Dict[str, Optional[dict]]
    overall: dict
    buckets: Dict[str, Dict[str, Optional[dict]]] = field(default_factory=dict)
    bucket_edges: List[tuple] = field(default_factory=lambda: list(BUCKETS))

    def to_records(self):
        """Flat machine-readable rows, one per reported cell."""
        rows = []
        for emo in EMOTIONS + ("overall",):
            s = self.overall if emo == "overall" else self.per_emotion[emo]
            rows.append({"table": "emotion", "emotion": emo, **(s or {"absent": True})})
        for label, _, _ in BUCKETS:
            if label not in self.buckets:
                continue
            for emo in EMOTIONS + ("overall",):
                s = self.buckets[label][emo]
                rows.append({"table": "length", "bucket": label, "emotion": emo,
                             **(s or {"absent": True})})
        return rows

    def to_json(self):
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.to_records())

    def emotion_table(self):
        """Aligned text: WER / Utter / Short% rows by emotion."""
        header = [""] + [e.capitalize() for e in EMOTIONS] + ["Overall"]
        cells = [self.per_emotion[e] for e in EMOTIONS] + [self.overall]
        rows = [
            ["WER"] + [_pct(c, "wer") for c in cells],
            ["Utter"] + [str(c["utterances"]) if c else ABSENT for c in cells],
            ["Short%"] + [_pct(c, "short_ratio") for c in cells],
        ]
        return _format([header] + rows)

    def length_table(self):
        """Aligned text: WER by reference word-count bucket and emotion."""
        header = ["N"] + [e.capitalize() for e in EMOTIONS] + ["Overall"]
        rows = []
        for label, _, _ in BUCKETS:
            cell = self.buckets.get(label)
            if cell is None:
                rows.append([label] + [ABSENT] * (len(EMOTIONS) + 1))
            else:
                rows.append([label] + [_pct(cell[e], "wer") for e in EMOTIONS + ("overall",)])
        return _format([header] + rows)


def _pct(cell, key):
    return ABSENT if cell is None else f"{100 * cell[key]:.1f}%"


def _format(rows):
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for r in rows:
        first = r[0].ljust(widths[0])
        rest = [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join([first] + rest).rstrip())
    return "\n".join(lines) + "\n"


def emotion_wer_report(records):
    """Per-emotion WER, utterance count and short-utterance ratio, plus overall."""
    records = list(records)
    if not records:
        raise ValueError("empty corpus")
    accs = {e: _Acc() for e in EMOTIONS}
    total = _Acc()
    for r in records:
        a = word_error_rate(*_pairs(r))
        accs[r.emotion].add(a)
        total.add(a)
    return WERReport({e: accs[e].stats() for e in EMOTIONS}, total.stats())


def length_bucket_report(records):
    """WER per (word-count bucket, emotion) cell; empty cells are ``None``.

    Returns ``{bucket: {emotion or "overall": stats}}`` with only the
    buckets that received at least one utterance.
    """
    cells = {}
    for r in records:
        ref, hyp = _pairs(r)
        a = word_error_rate(ref, hyp)
        label = bucket_of(a.ref_len)
        row = cells.setdefault(label, {e: _Acc() for e in EMOTIONS + ("overall",)})
        row[r.emotion].add(a)
        row["overall"].add(a)
    return {label: {k: acc.stats() for k, acc in cells[label].items()}
            for label, _, _ in BUCKETS if label in cells}


def full_report(records):
    """Emotion table and length-bucket table in one report."""
    rep = emotion_wer_report(records)
    rep.buckets = length_bucket_report(records)
    return rep
