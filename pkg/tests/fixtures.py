"""Hand-constructed corpora with known WER statistics."""

import numpy as np

from jointser.data import UtteranceRecord

# per-class utterance counts, short-utterance counts and WER of reference IEMOCAP ASR statistics
REFERENCE_STATS = {
    "ang": (1103, 494, 0.228),
    "hap": (1615, 900, 0.389),
    "neu": (1704, 1031, 0.363),
    "sad": (1078, 568, 0.295),
}
# word count of the long utterances per class; short ones have 5 words
REFERENCE_LONG_LEN = {"ang": 10, "hap": 10, "neu": 10, "sad": 12}


def _words(n, start=0):
    return [f"w{(start + i) % 50}" for i in range(n)]


def _corrupt(ref, k):
    return ["x"] * k + ref[k:]


def reference_wer_corpus():
    """Corpus whose per-class WER, counts and short ratios match the reference statistics.

    Edits per class are ``round(rate * words)``, spread over utterances by
    cumulative rounding so that no utterance takes more than its share.
    """
    records = []
    for emo, (n, n_short, rate) in REFERENCE_STATS.items():
        lengths = [5] * n_short + [REFERENCE_LONG_LEN[emo]] * (n - n_short)
        W = sum(lengths)
        E = round(rate * W)
        cum = np.cumsum(lengths)
        marks = np.rint(E * cum / W).astype(int)
        edits = np.diff(np.concatenate([[0], marks]))
        for i, (L, k) in enumerate(zip(lengths, edits)):
            ref = _words(L, i)
            records.append(UtteranceRecord(f"{emo}_{i:04d}", f"Ses0{i % 5 + 1}", f"Ses0{i % 5 + 1}F",
                                           emo, ref, _corrupt(ref, int(k))))
    return records


def length_monotone_corpus(seed=0, per_bucket=60):
    """Substitution probability 3/L, so shorter references carry higher WER."""
    r = np.random.default_rng(seed)
    emotions = ("ang", "hap", "neu", "sad")
    records = []
    for lo, hi in ((3, 10), (11, 20), (21, 30), (31, 40)):
        for j in range(per_bucket):
            L = int(r.integers(lo, hi + 1))
            ref = _words(L, j)
            hit = r.random(L) < 3.0 / L
            hyp = ["x" if h else w for w, h in zip(ref, hit)]
            emo = emotions[j % 4]
            records.append(UtteranceRecord(f"m{lo}_{j:03d}", "Ses01", "Ses01F", emo, ref, hyp))
    return records
