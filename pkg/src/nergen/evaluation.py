"""Span-level scoring of predicted tag sequences against gold.

Two modes share one counting scheme.  Exact: a predicted entity is a true
positive iff some gold entity has the identical token range and class.
Partial: exact matches score 1.0 and a same-class overlap that is not exact
scores 0.5, credited against both the predicted and the gold totals, so
precision = credit / predicted and recall = credit / gold.  Pairing is
one-to-one: exact pairs are fixed first, then remaining predictions take the
earliest-starting unmatched same-class overlapping gold, left to right.

Counts are exact rationals; floats appear only in the published report.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .dataio import tolerant_entity_runs
from .schema import TokenizedSample, entity_runs

EXACT = "exact"
PARTIAL = "partial"

Run = tuple[int, int, str]


class AlignmentError(ValueError):
    """Predicted and gold corpora do not line up token for token."""


@dataclass(frozen=True)
class MatchCounts:
    """Micro-aggregable true/false positive and false negative mass."""

    tp: Fraction = Fraction(0)
    fp: Fraction = Fraction(0)
    fn: Fraction = Fraction(0)

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "fn"):
            value = getattr(self, name)
            if not isinstance(value, Fraction):
                object.__setattr__(self, name, Fraction(value))
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def predicted_total(self) -> Fraction:
        return self.tp + self.fp

    @property
    def gold_total(self) -> Fraction:
        return self.tp + self.fn

    @property
    def precision(self) -> Fraction:
        return self.tp / self.predicted_total if self.predicted_total else Fraction(0)

    @property
    def recall(self) -> Fraction:
        return self.tp / self.gold_total if self.gold_total else Fraction(0)

    @property
    def f1(self) -> Fraction:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else Fraction(0)


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvalReport:
    mode: str
    precision: float
    recall: float
    f1: float
    per_class: Mapping[str, ClassScores]
    counts: MatchCounts


def _scores(counts: MatchCounts) -> ClassScores:
    return ClassScores(
        float(counts.precision), float(counts.recall), float(counts.f1)
    )


def _pair_credit(pred: Sequence[Run], gold: Sequence[Run], partial: bool) -> Fraction:
    """Total matched credit for one sentence and one class."""
    gold_left = sorted(gold)
    preds = sorted(pred)
    credit = Fraction(0)
    unmatched: list[Run] = []
    for p in preds:
        if p in gold_left:
            gold_left.remove(p)
            credit += 1
        else:
            unmatched.append(p)
    if partial:
        for first, last, cls in unmatched:
            for g in gold_left:
                if g[2] == cls and g[0] <= last and first <= g[1]:
                    gold_left.remove(g)
                    credit += Fraction(1, 2)
                    break
    return credit


def _sentence_counts(
    pred: Sequence[Run], gold: Sequence[Run], partial: bool
) -> MatchCounts:
    credit = _pair_credit(pred, gold, partial)
    return MatchCounts(
        tp=credit, fp=len(pred) - credit, fn=len(gold) - credit
    )


def _extract(
    pred: Sequence[TokenizedSample],
    gold: Sequence[TokenizedSample],
    tolerant_predictions: bool,
) -> list[tuple[list[Run], list[Run]]]:
    if len(pred) != len(gold):
        raise AlignmentError(
            f"{len(pred)} predicted sentences vs {len(gold)} gold"
        )
    pairs = []
    for i, (p, g) in enumerate(zip(pred, gold)):
        if p.tokens != g.tokens:
            raise AlignmentError(f"token mismatch at sentence {i}")
        p_runs = tolerant_entity_runs(p) if tolerant_predictions else entity_runs(p.tags)
        pairs.append((list(p_runs), entity_runs(g.tags)))
    return pairs


def _report(
    pred: Sequence[TokenizedSample],
    gold: Sequence[TokenizedSample],
    mode: str,
    tolerant_predictions: bool,
) -> EvalReport:
    partial = mode == PARTIAL
    pairs = _extract(pred, gold, tolerant_predictions)
    total = MatchCounts()
    by_class: dict[str, MatchCounts] = {}
    for p_runs, g_runs in pairs:
        classes = {r[2] for r in p_runs} | {r[2] for r in g_runs}
        for cls in sorted(classes):
            counts = _sentence_counts(
                [r for r in p_runs if r[2] == cls],
                [r for r in g_runs if r[2] == cls],
                partial,
            )
            total += counts
            by_class[cls] = by_class.get(cls, MatchCounts()) + counts
    micro = _scores(total)
    return EvalReport(
        mode=mode,
        precision=micro.precision,
        recall=micro.recall,
        f1=micro.f1,
        per_class={cls: _scores(c) for cls, c in sorted(by_class.items())},
        counts=total,
    )


def exact_micro(
    pred: Sequence[TokenizedSample],
    gold: Sequence[TokenizedSample],
    tolerant_predictions: bool = False,
) -> EvalReport:
    """Micro P/R/F1 where only identical (range, class) pairs count."""
    return _report(pred, gold, EXACT, tolerant_predictions)


def partial_micro(
    pred: Sequence[TokenizedSample],
    gold: Sequence[TokenizedSample],
    tolerant_predictions: bool = False,
) -> EvalReport:
    """Micro P/R/F1 giving half credit to same-class non-exact overlaps."""
    return _report(pred, gold, PARTIAL, tolerant_predictions)


def per_class_breakdown(
    pred: Sequence[TokenizedSample],
    gold: Sequence[TokenizedSample],
    mode: str = EXACT,
    tolerant_predictions: bool = False,
) -> dict[str, ClassScores]:
    if mode not in (EXACT, PARTIAL):
        raise ValueError(f"unknown mode {mode!r}")
    return dict(_report(pred, gold, mode, tolerant_predictions).per_class)


def format_report(report: EvalReport) -> str:
    """Fixed-width text table: micro row first, then one row per class."""
    lines = [
        f"{'class':<16} {'precision':>10} {'recall':>10} {'f1':>10}",
        f"{'micro (' + report.mode + ')':<16} {report.precision:>10.4f}"
        f" {report.recall:>10.4f} {report.f1:>10.4f}",
    ]
    for cls, s in report.per_class.items():
        lines.append(
            f"{cls:<16} {s.precision:>10.4f} {s.recall:>10.4f} {s.f1:>10.4f}"
        )
    return "\n".join(lines) + "\n"
