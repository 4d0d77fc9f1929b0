"""
A synthetic corpus with modality-split emotion cues
===================================================

The generator plants an arousal cue in the acoustic stream and a valence
cue in the ASR hidden and text streams, so neither kind of stream alone
separates all four emotions. Transcripts are corrupted per class so the
WER analysis has something to find.
"""

import sys
import tempfile

import numpy as np

from jointser import data

cfg = data.SynthConfig(n_per_class=40, seed=0)
records, features = data.synth_generate(cfg)
print(f"{len(records)} utterances over sessions {sorted({r.session_id for r in records})}")

r = records[0]
print("\nfirst record:", r.utterance_id, r.emotion)
print("  ref:", " ".join(r.ref_transcript))
print("  hyp:", " ".join(r.hyp_transcript))
for s in data.STREAMS:
    print(f"  {s:14s} {features[r.utterance_id][s].shape}")

# %%
# Project each utterance onto the planted directions. Acoustic frames split
# {ang, hap} from {neu, sad}; text frames split {ang, sad} from {hap, neu}.

dirs = data.planted_directions(cfg)
for stream in ("mfcc", "text"):
    print(f"\nmean projection of {stream} on its two planted directions")
    for emo in data.EMOTIONS:
        proj = np.concatenate([features[x.utterance_id][stream] @ dirs[stream].T
                               for x in records if x.emotion == emo]).mean(axis=0)
        print(f"  {emo}: {proj.round(2)}")

# %%
# Write the corpus in the on-disk layout (line-delimited manifest plus one
# FMX1 matrix per stream) and read it back.

out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="jointser_")
manifest = data.write_dataset(records, features, out)
loaded, _ = data.load_dataset(out, ["mfcc"])
print(f"\nwrote {manifest}; reloaded {len(loaded)} records")
print(data.validate_streams(loaded, ["mfcc", "hidden_middle", "text"]))
