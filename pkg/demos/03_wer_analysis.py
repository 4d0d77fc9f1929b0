"""
WER by emotion and by utterance length
======================================

Word error rate is computed from a minimum-edit alignment and aggregated
as total edits over total reference words. The first table breaks it down
by emotion with utterance counts and the share of short (< 10 word)
utterances; the second by reference length.
"""

from jointser import data, wer

a = wer.word_error_rate("a b c d".split(), "a x c".split())
print(f"'a b c d' vs 'a x c': S={a.substitutions} D={a.deletions} I={a.insertions} WER={a.wer}")

cfg = data.SynthConfig(n_per_class=300,
                       length_range={e: (3, 40) for e in data.EMOTIONS})
records, _ = data.synth_generate(cfg)
report = wer.full_report(records)

print("\nplanted corruption:", cfg.corruption)
print()
print(report.emotion_table())
print(report.length_table())
