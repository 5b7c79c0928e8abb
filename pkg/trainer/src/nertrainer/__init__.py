"""Token-classification training on CoNLL corpora with loss-weight sidecars."""

from .conll import Block, MalformedTags, format_conll, parse_conll, read_conll
from .scoring import AlignmentError, ClassScores, Scores, micro, score_files
from .training import (
    ScoreResult,
    TagSetMismatch,
    TrainConfig,
    TrainResult,
    TruncationOverflow,
    load_model,
    predict_and_score,
    predict_tags,
    train,
    weighted_loss,
)

__all__ = [
    "AlignmentError",
    "Block",
    "ClassScores",
    "MalformedTags",
    "ScoreResult",
    "Scores",
    "TagSetMismatch",
    "TrainConfig",
    "TrainResult",
    "TruncationOverflow",
    "format_conll",
    "load_model",
    "micro",
    "parse_conll",
    "predict_and_score",
    "predict_tags",
    "read_conll",
    "score_files",
    "train",
    "weighted_loss",
]
