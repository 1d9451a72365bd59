"""Keyword localisation in untranscribed speech with attention CNNs.

A numpy reverse-mode autodiff engine, four keyword models (CNN-Attend,
CNN-PoolAttend, PSC, CNN-Pool with GradCAM), a synthetic aligned corpus with
bag-of-words and simulated visual targets, and detection/localisation
evaluation.
"""

from .corpus import Corpus, CorpusConfig, Span, Utterance, read_corpus, synthesize, write_corpus
from .evaluate import (
    MetricsReport,
    OracleScorer,
    categorise_errors,
    detection_metrics,
    localisation_metrics,
    score_utterances,
    tune_threshold,
)
from .models import KeywordModel, ModelConfig, Vocabulary, load_model, localise, predict, save_model
from .supervision import TrainConfig, VisualNoiseConfig, train

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "CorpusConfig",
    "KeywordModel",
    "MetricsReport",
    "ModelConfig",
    "OracleScorer",
    "Span",
    "TrainConfig",
    "Utterance",
    "VisualNoiseConfig",
    "Vocabulary",
    "categorise_errors",
    "detection_metrics",
    "load_model",
    "localisation_metrics",
    "localise",
    "predict",
    "read_corpus",
    "save_model",
    "score_utterances",
    "synthesize",
    "train",
    "tune_threshold",
    "write_corpus",
]
