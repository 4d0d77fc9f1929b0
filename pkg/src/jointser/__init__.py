"""Joint ASR-SER training with hierarchical co-attention fusion, and WER analysis."""

from .data import EMOTIONS, STREAMS, SynthConfig, UtteranceRecord, synth_generate
from .harness import compare_fusions, layer_sweep, make_folds, run_cv
from .model import JointModel
from .training import TrainConfig, evaluate, train
from .wer import (corpus_wer, emotion_wer_report, full_report, length_bucket_report,
                  word_error_rate)

__version__ = "0.1.0"
