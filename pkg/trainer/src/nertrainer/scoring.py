"""Micro precision/recall/F1 over entity runs, exact span-and-class match.

Counts are kept as exact fractions; floats appear only in the returned
scores.  Gold tags must be valid BIO; prediction tags are decoded tolerantly
by default so raw model output (which may emit dangling I- tags) is scorable.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .conll import Block, read_conll, strict_runs, tolerant_runs


class AlignmentError(ValueError):
    """Prediction and gold files do not describe the same token sequences."""


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class Scores:
    precision: float
    recall: float
    f1: float
    per_class: dict[str, ClassScores]

    def as_obj(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_class": {
                cls: {"precision": s.precision, "recall": s.recall, "f1": s.f1}
                for cls, s in self.per_class.items()
            },
        }


def _ratio(num: int, den: int) -> Fraction:
    return Fraction(num, den) if den else Fraction(0)


def _prf(matched: int, predicted: int, gold: int) -> tuple[float, float, float]:
    p = _ratio(matched, predicted)
    r = _ratio(matched, gold)
    f1 = 2 * p * r / (p + r) if p + r else Fraction(0)
    return float(p), float(r), float(f1)


def micro(
    pred_blocks, gold_blocks, tolerant_predictions: bool = True
) -> Scores:
    """Score predicted blocks against gold blocks of identical shape."""
    pred_blocks = list(pred_blocks)
    gold_blocks = list(gold_blocks)
    if len(pred_blocks) != len(gold_blocks):
        raise AlignmentError(
            f"{len(pred_blocks)} prediction blocks vs {len(gold_blocks)} gold"
        )
    decode_pred = tolerant_runs if tolerant_predictions else strict_runs
    matched = predicted = gold_total = 0
    by_class: dict[str, list[int]] = {}
    for i, (pb, gb) in enumerate(zip(pred_blocks, gold_blocks)):
        if pb.tokens != gb.tokens:
            raise AlignmentError(f"block {i}: token sequences differ")
        pred_runs = set(decode_pred(pb.tags))
        gold_runs = set(strict_runs(gb.tags))
        hits = pred_runs & gold_runs
        matched += len(hits)
        predicted += len(pred_runs)
        gold_total += len(gold_runs)
        for cls in {c for _, _, c in pred_runs} | {c for _, _, c in gold_runs}:
            counts = by_class.setdefault(cls, [0, 0, 0])
            counts[0] += sum(1 for r in hits if r[2] == cls)
            counts[1] += sum(1 for r in pred_runs if r[2] == cls)
            counts[2] += sum(1 for r in gold_runs if r[2] == cls)
    p, r, f1 = _prf(matched, predicted, gold_total)
    per_class = {
        cls: ClassScores(*_prf(*counts)) for cls, counts in sorted(by_class.items())
    }
    return Scores(p, r, f1, per_class)


def score_files(gold_path, pred_path, tolerant_predictions: bool = True) -> Scores:
    """Score a predictions CoNLL file against a gold CoNLL file."""
    for p in (gold_path, pred_path):
        if not Path(p).exists():
            raise FileNotFoundError(f"no such file: {p}")
    return micro(
        read_conll(pred_path),
        read_conll(gold_path),
        tolerant_predictions=tolerant_predictions,
    )
