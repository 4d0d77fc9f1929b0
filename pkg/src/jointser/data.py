"""Dataset manifest, FMX1 feature files and the synthetic corpus generator."""

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

EMOTIONS = ("ang", "hap", "neu", "sad")
STREAMS = ("mfcc", "hidden_first", "hidden_middle", "hidden_final", "text", "text_ref")
HIDDEN_STREAMS = ("hidden_first", "hidden_middle", "hidden_final")

FMX_MAGIC = b"FMX1"
_HEADER = struct.Struct("<4sII")

# arousal: {ang, hap} vs {neu, sad}; valence: {ang, sad} vs {hap, neu}
AROUSAL = {"ang": 0, "hap": 0, "neu": 1, "sad": 1}
VALENCE = {"ang": 0, "sad": 0, "hap": 1, "neu": 1}


class DataError(ValueError):
    """Base class for manifest and feature validation failures."""


class DuplicateIdError(DataError):
    pass


class UnknownLabelError(DataError):
    pass


class MissingFeatureError(DataError):
    pass


class FeatureFormatError(DataError):
    pass


class StreamError(DataError):
    pass


@dataclass
class UtteranceRecord:
    utterance_id: str
    session_id: str
    speaker_id: str
    emotion: str
    ref_transcript: List[str]
    hyp_transcript: Optional[List[str]] = None
    features: Dict[str, str] = field(default_factory=dict)

    def to_json(self):
        d = asdict(self)
        d["ref_transcript"] = " ".join(self.ref_transcript)
        if self.hyp_transcript is not None:
            d["hyp_transcript"] = " ".join(self.hyp_transcript)
        return json.dumps(d, sort_keys=True)


# ---------------------------------------------------------------------------
# FMX1


def write_feature_matrix(m, path):
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise FeatureFormatError(f"feature matrix must be 2-D and non-empty, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise FeatureFormatError("feature matrix contains non-finite values")
    Path(path).write_bytes(encode_feature_matrix(m))


def encode_feature_matrix(m):
    m = np.ascontiguousarray(m, dtype="<f4")
    return _HEADER.pack(FMX_MAGIC, m.shape[0], m.shape[1]) + m.tobytes()


def decode_feature_matrix(buf, offset=0):
    """Parse one FMX1 blob starting at ``offset``; returns (matrix, end offset)."""
    if len(buf) - offset < _HEADER.size:
        raise FeatureFormatError("truncated header")
    magic, rows, cols = _HEADER.unpack_from(buf, offset)
    if magic != FMX_MAGIC:
        raise FeatureFormatError(f"bad magic {magic!r}")
    if rows == 0 or cols == 0:
        raise FeatureFormatError(f"empty matrix {rows}x{cols}")
    start = offset + _HEADER.size
    end = start + 4 * rows * cols
    if len(buf) < end:
        raise FeatureFormatError(
            f"truncated payload: header says {rows}x{cols}, "
            f"found {(len(buf) - start) // 4} values")
    m = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=start).reshape(rows, cols)
    if not np.all(np.isfinite(m)):
        raise FeatureFormatError("non-finite value in payload")
    return m.astype(np.float32), end


def read_feature_matrix(path):
    buf = Path(path).read_bytes()
    m, end = decode_feature_matrix(buf)
    if end != len(buf):
        raise FeatureFormatError(f"{len(buf) - end} trailing bytes after payload")
    return m


# ---------------------------------------------------------------------------
# manifest


def load_manifest(path, check_features=True):
    """Read a line-delimited JSON manifest and validate every record.

    Feature references are resolved relative to the manifest's directory.
    """
    path = Path(path)
    root = path.parent
    records, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            d = json.loads(line)
            uid = d["utterance_id"]
            if uid in seen:
                raise DuplicateIdError(f"line {lineno}: duplicate utterance_id {uid!r}")
            seen.add(uid)
            if d["emotion"] not in EMOTIONS:
                raise UnknownLabelError(f"line {lineno}: unknown emotion {d['emotion']!r}")
            feats = d.get("features", {})
            for stream, ref in feats.items():
                if stream not in STREAMS:
                    raise StreamError(f"line {lineno}: unknown stream {stream!r}")
                if check_features:
                    fpath = root / ref
                    if not fpath.is_file():
                        raise MissingFeatureError(f"{uid}: {stream} -> {ref} does not exist")
                    read_feature_matrix(fpath)
            hyp = d.get("hyp_transcript")
            records.append(UtteranceRecord(
                utterance_id=uid,
                session_id=d["session_id"],
                speaker_id=d["speaker_id"],
                emotion=d["emotion"],
                ref_transcript=d["ref_transcript"].split(),
                hyp_transcript=None if hyp is None else hyp.split(),
                features={k: str(root / v) for k, v in feats.items()},
            ))
    return records


def write_manifest(records, path, root=None):
    """Write records one JSON object per line; feature paths relative to ``root``."""
    path = Path(path)
    root = Path(root) if root is not None else path.parent
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            rel = {k: Path(v).relative_to(root).as_posix() if Path(v).is_absolute() else v
                   for k, v in r.features.items()}
            out = UtteranceRecord(r.utterance_id, r.session_id, r.speaker_id, r.emotion,
                                  r.ref_transcript, r.hyp_transcript, rel)
            fh.write(out.to_json() + "\n")


def validate_streams(records, required_streams=()):
    """Check that each stream has one consistent feature dimension.

    Returns ``{stream: {"dim": D, "count": n}}``. Raises StreamError on a
    missing required stream or mixed dimensions.
    """
    report = {}
    for r in records:
        for s in required_streams:
            if s not in r.features:
                raise StreamError(f"{r.utterance_id}: missing required stream {s!r}")
        for s, ref in r.features.items():
            m = read_feature_matrix(ref)
            entry = report.setdefault(s, {"dim": m.shape[1], "count": 0})
            if m.shape[1] != entry["dim"]:
                raise StreamError(
                    f"{r.utterance_id}: stream {s!r} has dim {m.shape[1]}, expected {entry['dim']}")
            entry["count"] += 1
    return report


def load_features(records, streams):
    """Load the requested streams into memory: ``{uid: {stream: array}}``."""
    return {r.utterance_id: {s: read_feature_matrix(r.features[s]) for s in streams}
            for r in records}


# ---------------------------------------------------------------------------
# synthetic corpus

# hyp_transcript substitution rates per class, taken from measured per-emotion WER
DEFAULT_CORRUPTION = {"ang": 0.228, "hap": 0.389, "neu": 0.363, "sad": 0.295}
DEFAULT_SIGNAL = {"mfcc": 1.0, "hidden_first": 0.8, "hidden_middle": 1.0,
                  "hidden_final": 0.4, "text": 1.0, "text_ref": 1.0}
DEFAULT_NOISE = {s: 1.0 for s in STREAMS}


@dataclass
class SynthConfig:
    n_per_class: int = 200
    vocab_size: int = 8
    frames_per_token: int = 2
    d_mfcc: int = 40
    d_hidden: int = 32
    d_text: int = 32
    noise_stddev: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_NOISE))
    signal_strength: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_SIGNAL))
    corruption: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_CORRUPTION))
    length_range: Dict[str, tuple] = field(
        default_factory=lambda: {e: (3, 8) for e in EMOTIONS})
    n_sessions: int = 5
    seed: int = 0

    def validate(self):
        if self.n_per_class < 1 or self.vocab_size < 1 or self.frames_per_token < 1:
            raise ValueError("n_per_class, vocab_size and frames_per_token must be >= 1")
        if min(self.d_mfcc, self.d_hidden, self.d_text) < 1:
            raise ValueError("feature dims must be >= 1")
        if min(self.d_mfcc, self.d_hidden, self.d_text) < 2:
            raise ValueError("each stream needs room for two orthogonal signal directions")
        for e in EMOTIONS:
            rate = self.corruption[e]
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"corruption rate for {e} outside [0, 1]: {rate}")
            lo, hi = self.length_range[e]
            if not 1 <= lo <= hi:
                raise ValueError(f"bad length range for {e}: {(lo, hi)}")
        for s in STREAMS:
            if self.noise_stddev.get(s, 0.0) < 0:
                raise ValueError(f"negative noise for {s}")
        if self.n_sessions < 1:
            raise ValueError("n_sessions must be >= 1")


def _draw_directions(cfg, rng):
    directions = {}
    for s in STREAMS:
        q, _ = np.linalg.qr(rng.standard_normal((_stream_dim(cfg, s), 2)))
        directions[s] = q.T  # (2, D), orthonormal rows
    return directions


def planted_directions(cfg: SynthConfig):
    """The two orthonormal class-signal directions per stream, shape (2, D).

    Row 0 is added for the first side of the stream's binary split
    (arousal for mfcc, valence otherwise), row 1 for the second side.
    """
    return _draw_directions(cfg, np.random.default_rng(cfg.seed))


def _stream_dim(cfg, stream):
    if stream == "mfcc":
        return cfg.d_mfcc
    if stream in HIDDEN_STREAMS:
        return cfg.d_hidden
    return cfg.d_text


def synth_generate(cfg: SynthConfig):
    """Generate an in-memory synthetic corpus.

    Returns ``(records, features)`` where ``features[uid][stream]`` is a
    float32 array. The mfcc stream separates {ang, hap} from {neu, sad};
    the hidden and text streams separate {ang, sad} from {hap, neu}, so
    4-way classification needs the acoustic stream plus one other.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    V, r = cfg.vocab_size, cfg.frames_per_token

    # fixed draws, in a fixed order
    directions = _draw_directions(cfg, rng)
    token_emb = {s: _orthogonal_to(rng.standard_normal((V, cfg.d_hidden)), directions[s])
                 for s in HIDDEN_STREAMS}
    text_emb = _orthogonal_to(rng.standard_normal((V, cfg.d_text)), directions["text"])

    vocab = [f"w{i}" for i in range(V)]
    records, features = [], {}
    for emo in EMOTIONS:
        lo, hi = cfg.length_range[emo]
        for n in range(cfg.n_per_class):
            session = n % cfg.n_sessions
            uid = f"{emo}_{n:04d}"
            L = int(rng.integers(lo, hi + 1))
            ref = rng.integers(0, V, size=L)
            flip = rng.random(L) < cfg.corruption[emo]
            # substitution draws a different token uniformly
            shift = rng.integers(1, V, size=L) if V > 1 else np.zeros(L, dtype=int)
            hyp = np.where(flip, (ref + shift) % V, ref)

            feats = {}
            T_mfcc = 2 * L * r
            feats["mfcc"] = _signal("mfcc", AROUSAL[emo], T_mfcc, cfg, directions, rng)
            for s in HIDDEN_STREAMS:
                base = np.repeat(token_emb[s][ref], r, axis=0)
                feats[s] = base + _signal(s, VALENCE[emo], L * r, cfg, directions, rng)
            feats["text"] = text_emb[hyp] + _signal("text", VALENCE[emo], L, cfg, directions, rng)
            feats["text_ref"] = text_emb[ref] + _signal("text_ref", VALENCE[emo], L, cfg,
                                                        directions, rng)
            features[uid] = {s: m.astype(np.float32) for s, m in feats.items()}
            records.append(UtteranceRecord(
                utterance_id=uid,
                session_id=f"Ses{session + 1:02d}",
                speaker_id=f"Ses{session + 1:02d}{'FM'[n // cfg.n_sessions % 2]}",
                emotion=emo,
                ref_transcript=[vocab[i] for i in ref],
                hyp_transcript=[vocab[i] for i in hyp],
            ))
    return records, features


def _orthogonal_to(emb, dirs):
    # token content never leaks onto the class-signal directions
    return emb - (emb @ dirs.T) @ dirs


def _signal(stream, side, T, cfg, directions, rng):
    s = cfg.signal_strength.get(stream, 0.0)
    sigma = cfg.noise_stddev.get(stream, 0.0)
    D = directions[stream].shape[1]
    noise = rng.standard_normal((T, D)) * sigma
    return s * directions[stream][side][None, :] + noise


def write_dataset(records, features, root):
    """Write ``<root>/manifest`` and ``<root>/features/<uid>.<stream>.fmx``."""
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    out = []
    for r in records:
        refs = {}
        for s in sorted(features[r.utterance_id]):
            rel = f"features/{r.utterance_id}.{s}.fmx"
            write_feature_matrix(features[r.utterance_id][s], root / rel)
            refs[s] = rel
        out.append(UtteranceRecord(r.utterance_id, r.session_id, r.speaker_id, r.emotion,
                                   r.ref_transcript, r.hyp_transcript, refs))
    write_manifest(out, root / "manifest", root)
    return root / "manifest"


def load_dataset(root, streams=None):
    """Load ``<root>/manifest`` plus feature arrays for ``streams`` (default: all)."""
    records = load_manifest(Path(root) / "manifest")
    if streams is None:
        streams = sorted({s for r in records for s in r.features})
    return records, load_features(records, streams)


def synth_config_from_dict(d):
    cfg = SynthConfig()
    for k, v in d.items():
        if not hasattr(cfg, k):
            raise KeyError(f"unknown SynthConfig field {k!r}")
        if isinstance(getattr(cfg, k), dict) and isinstance(v, dict):
            merged = dict(getattr(cfg, k))
            merged.update({kk: tuple(vv) if isinstance(vv, list) else vv for kk, vv in v.items()})
            v = merged
        setattr(cfg, k, v)
    return cfg
