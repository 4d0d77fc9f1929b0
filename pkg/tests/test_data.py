import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from jointser import data
from jointser.data import (
    EMOTIONS, DuplicateIdError, FeatureFormatError, MissingFeatureError, StreamError,
    SynthConfig, UnknownLabelError, load_manifest, read_feature_matrix, synth_generate,
    validate_streams, write_dataset, write_feature_matrix)
from jointser.wer import corpus_wer


def _record(uid="u1", emotion="ang", features=None):
    return json.dumps({"utterance_id": uid, "session_id": "Ses01", "speaker_id": "Ses01F",
                       "emotion": emotion, "ref_transcript": "a b c",
                       "hyp_transcript": "a b d", "features": features or {}})


def _manifest(tmp_path, *lines):
    p = tmp_path / "manifest"
    p.write_text("\n".join(lines) + "\n")
    return p


class TestManifest:
    def test_single_record(self, tmp_path):
        (tmp_path / "features").mkdir()
        write_feature_matrix(np.ones((3, 2)), tmp_path / "features/u1.mfcc.fmx")
        p = _manifest(tmp_path, _record(features={"mfcc": "features/u1.mfcc.fmx"}))
        recs = load_manifest(p)
        assert len(recs) == 1
        assert recs[0].ref_transcript == ["a", "b", "c"]
        assert recs[0].hyp_transcript == ["a", "b", "d"]

    def test_duplicate_id(self, tmp_path):
        p = _manifest(tmp_path, _record("u1"), _record("u1"))
        with pytest.raises(DuplicateIdError):
            load_manifest(p)

    def test_unknown_label(self, tmp_path):
        p = _manifest(tmp_path, _record(emotion="fear"))
        with pytest.raises(UnknownLabelError):
            load_manifest(p)

    def test_dangling_feature(self, tmp_path):
        p = _manifest(tmp_path, _record(features={"mfcc": "features/missing.fmx"}))
        with pytest.raises(MissingFeatureError):
            load_manifest(p)

    def test_unknown_stream(self, tmp_path):
        p = _manifest(tmp_path, _record(features={"wav": "x.fmx"}))
        with pytest.raises(StreamError):
            load_manifest(p)

    def test_error_kinds_are_distinct(self):
        kinds = {DuplicateIdError, UnknownLabelError, MissingFeatureError}
        assert len(kinds) == 3
        assert all(issubclass(k, data.DataError) for k in kinds)


class TestFMX:
    def test_round_trip_2x3(self, tmp_path):
        m = np.array([[1, 2, 3], [4, 5, 6]], dtype=np.float32)
        p = tmp_path / "m.fmx"
        write_feature_matrix(m, p)
        raw = p.read_bytes()
        assert raw[:4] == b"FMX1"
        assert struct.unpack("<II", raw[4:12]) == (2, 3)
        assert raw[12:] == m.astype("<f4").tobytes()
        back = read_feature_matrix(p)
        np.testing.assert_array_equal(back, m)
        write_feature_matrix(back, tmp_path / "again.fmx")
        assert (tmp_path / "again.fmx").read_bytes() == raw

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "m.fmx"
        p.write_bytes(b"XXXX" + struct.pack("<II", 1, 1) + b"\0" * 4)
        with pytest.raises(FeatureFormatError, match="magic"):
            read_feature_matrix(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "m.fmx"
        p.write_bytes(b"FMX1" + struct.pack("<II", 4, 4) + np.zeros(15, "<f4").tobytes())
        with pytest.raises(FeatureFormatError, match="truncated"):
            read_feature_matrix(p)

    @pytest.mark.parametrize("shape", [(0, 3), (3, 0)])
    def test_empty_dims(self, tmp_path, shape):
        p = tmp_path / "m.fmx"
        p.write_bytes(b"FMX1" + struct.pack("<II", *shape))
        with pytest.raises(FeatureFormatError):
            read_feature_matrix(p)

    def test_non_finite(self, tmp_path):
        p = tmp_path / "m.fmx"
        p.write_bytes(b"FMX1" + struct.pack("<II", 1, 2) + np.array([1, np.nan], "<f4").tobytes())
        with pytest.raises(FeatureFormatError, match="non-finite"):
            read_feature_matrix(p)
        with pytest.raises(FeatureFormatError):
            write_feature_matrix(np.array([[np.inf]]), tmp_path / "x.fmx")

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float32, st.tuples(st.integers(1, 12), st.integers(1, 12)),
                  elements=st.floats(allow_nan=False, allow_infinity=False, width=32)))
    def test_round_trip_bit_exact(self, tmp_path_factory, m):
        p = tmp_path_factory.mktemp("fmx") / "m.fmx"
        write_feature_matrix(m, p)
        back = read_feature_matrix(p)
        assert back.tobytes() == m.astype("<f4").tobytes()


class TestSynth:
    def test_deterministic_files(self, tmp_path):
        cfg = SynthConfig(n_per_class=3)
        for name in ("a", "b"):
            write_dataset(*synth_generate(cfg), tmp_path / name)
        files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                         if p.is_file())
        files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*")
                         if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_seed_changes_output(self):
        a = synth_generate(SynthConfig(n_per_class=2, seed=0))[1]
        b = synth_generate(SynthConfig(n_per_class=2, seed=1))[1]
        assert not np.array_equal(a["ang_0000"]["mfcc"], b["ang_0000"]["mfcc"])

    def test_noise_free_signal_is_shared_and_wer_zero(self):
        cfg = SynthConfig(n_per_class=6,
                          noise_stddev={s: 0.0 for s in data.STREAMS},
                          corruption={e: 0.0 for e in EMOTIONS})
        records, feats = synth_generate(cfg)
        # mfcc carries the class signal only: every frame of every same-class utterance matches
        for emo in EMOTIONS:
            rows = np.concatenate([feats[r.utterance_id]["mfcc"] for r in records
                                   if r.emotion == emo])
            assert np.all(rows == rows[0])
        assert corpus_wer((r.ref_transcript, r.hyp_transcript) for r in records) == 0.0

    @pytest.mark.parametrize("stream,split", [("mfcc", data.AROUSAL), ("text", data.VALENCE),
                                              ("hidden_middle", data.VALENCE)])
    def test_noise_free_separable_along_planted_directions(self, stream, split):
        cfg = SynthConfig(n_per_class=5, noise_stddev={s: 0.0 for s in data.STREAMS})
        records, feats = synth_generate(cfg)
        dirs = data.planted_directions(cfg)
        strength = cfg.signal_strength[stream]
        for r in records:
            side = split[r.emotion]
            proj = feats[r.utterance_id][stream] @ dirs[stream].T
            np.testing.assert_allclose(proj[:, side], strength, atol=1e-5)
            np.testing.assert_allclose(proj[:, 1 - side], 0.0, atol=1e-5)

    def test_hidden_has_one_block_per_token(self):
        cfg = SynthConfig(n_per_class=2, frames_per_token=3)
        records, feats = synth_generate(cfg)
        for r in records:
            L = len(r.ref_transcript)
            assert feats[r.utterance_id]["hidden_middle"].shape == (3 * L, cfg.d_hidden)
            assert feats[r.utterance_id]["mfcc"].shape == (6 * L, cfg.d_mfcc)
            assert feats[r.utterance_id]["text"].shape == (L, cfg.d_text)

    def test_corruption_rates_converge(self):
        cfg = SynthConfig(n_per_class=500)
        records, _ = synth_generate(cfg)
        for emo, rate in data.DEFAULT_CORRUPTION.items():
            pairs = [(r.ref_transcript, r.hyp_transcript) for r in records if r.emotion == emo]
            n_words = sum(len(p[0]) for p in pairs)
            sigma = np.sqrt(rate * (1 - rate) / n_words)
            w = corpus_wer(pairs)
            assert abs(w - rate) <= 0.03
            assert abs(w - rate) <= 3 * sigma

    def test_sessions_balanced(self):
        records, _ = synth_generate(SynthConfig(n_per_class=10))
        sessions = {}
        for r in records:
            sessions[r.session_id] = sessions.get(r.session_id, 0) + 1
        assert sessions == {f"Ses0{i}": 8 for i in range(1, 6)}

    @pytest.mark.parametrize("bad", [
        {"d_mfcc": 0},
        {"corruption": {"ang": 1.5, "hap": 0, "neu": 0, "sad": 0}},
        {"length_range": {"ang": (5, 3), "hap": (1, 2), "neu": (1, 2), "sad": (1, 2)}},
    ])
    def test_invalid_config(self, bad):
        with pytest.raises(ValueError):
            synth_generate(SynthConfig(**bad))


class TestValidateStreams:
    def _write(self, tmp_path, dims, stream="mfcc"):
        (tmp_path / "features").mkdir(exist_ok=True)
        lines = []
        for i, d in enumerate(dims):
            rel = f"features/u{i}.{stream}.fmx"
            write_feature_matrix(np.zeros((2, d)), tmp_path / rel)
            lines.append(_record(f"u{i}", features={stream: rel}))
        return load_manifest(_manifest(tmp_path, *lines))

    def test_consistent_dims(self, tmp_path):
        recs = self._write(tmp_path, [40, 40, 40])
        assert validate_streams(recs, ["mfcc"]) == {"mfcc": {"dim": 40, "count": 3}}

    def test_mixed_dims(self, tmp_path):
        recs = self._write(tmp_path, [64, 768, 64], stream="text")
        with pytest.raises(StreamError, match="dim 768"):
            validate_streams(recs)

    def test_missing_required_stream(self, tmp_path):
        recs = self._write(tmp_path, [40, 40])
        with pytest.raises(StreamError, match="hidden_middle"):
            validate_streams(recs, ["mfcc", "hidden_middle"])


def test_dataset_layout(tmp_path):
    records, feats = synth_generate(SynthConfig(n_per_class=1))
    write_dataset(records, feats, tmp_path)
    assert (tmp_path / "manifest").is_file()
    assert (tmp_path / "features" / "ang_0000.mfcc.fmx").is_file()
    loaded, lf = data.load_dataset(tmp_path, ["mfcc", "text"])
    assert [r.utterance_id for r in loaded] == [r.utterance_id for r in records]
    np.testing.assert_array_equal(lf["hap_0000"]["text"], feats["hap_0000"]["text"])
