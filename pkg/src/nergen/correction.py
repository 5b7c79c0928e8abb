"""Annotation uncertainty scoring, selection, and correction application.

The generator's own token log probabilities say how confident it was about
each annotation it emitted.  Low-confidence annotations are re-examined with
a second round of prompts; the model's verdicts come back as directives
(keep / revise span / revise type / drop) which are applied here under strict
validity rules: a directive that would corrupt the dataset is discarded and
counted, never half-applied.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .correction_types import (
    DROP,
    KEEP,
    REVISE_SPAN,
    REVISE_TYPE,
    CorrectionDirective,
    ParsedAction,
)
from .schema import (
    Annotation,
    NerSample,
    TaskSpec,
    resolve_occurrences,
    sorted_annotations,
    validate,
)

OTHER_TYPE = "other"


class EmptyTokenList(ValueError):
    """An uncertainty score was requested over zero tokens."""


class InvalidRange(ValueError):
    """A loss-window range does not fit the token sequence."""


def score_logprob(logprobs: Sequence[float]) -> float:
    """Arithmetic mean of the annotation's completion-token log probs."""
    if not logprobs:
        raise EmptyTokenList("cannot score an annotation with no tokens")
    return sum(logprobs) / len(logprobs)


def score_loss_window(losses: Sequence[float], span_range: tuple[int, int]) -> float:
    """Mean negated loss over the span tokens widened by one on each side.

    ``span_range`` is (first, last) inclusive token indices of the span; the
    window is clipped at the sequence edges.  Negation keeps the orientation
    of :func:`score_logprob`: higher means more confident.
    """
    first, last = span_range
    if not 0 <= first <= last < len(losses):
        raise InvalidRange(
            f"span range {span_range} does not fit {len(losses)} tokens"
        )
    lo = max(0, first - 1)
    hi = min(len(losses) - 1, last + 1)
    window = losses[lo : hi + 1]
    return -sum(window) / len(window)


@dataclass(frozen=True)
class AnnotationRecord:
    """One annotation with the evidence needed to score and address it."""

    sample_id: int
    annotation_index: int
    annotation: Annotation
    token_logprobs: tuple[float, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.token_logprobs, tuple):
            object.__setattr__(self, "token_logprobs", tuple(self.token_logprobs))
        if not self.token_logprobs:
            raise EmptyTokenList("annotation record needs at least one token")

    @property
    def score(self) -> float:
        return score_logprob(self.token_logprobs)


def records_for_sample(
    sample_id: int,
    sample: NerSample,
    annotation_ranges: Sequence[tuple[int, int]],
    token_logprobs: Sequence[tuple[str, float]],
) -> list[AnnotationRecord]:
    """Align completion tokens to annotation items by running char offsets.

    ``annotation_ranges`` are the char ranges of each "span (type)" item in
    the completion text; a token belongs to an annotation when their ranges
    intersect.  Annotations that align to no token (e.g. the backend returned
    no log probabilities) get no record.
    """
    token_spans: list[tuple[int, int, float]] = []
    pos = 0
    for token, logprob in token_logprobs:
        token_spans.append((pos, pos + len(token), logprob))
        pos += len(token)
    records = []
    for idx, (ann, (start, end)) in enumerate(zip(sample.annotations, annotation_ranges)):
        aligned = tuple(
            lp for ts, te, lp in token_spans if ts < end and start < te
        )
        if aligned:
            records.append(AnnotationRecord(sample_id, idx, ann, aligned))
    return records


@dataclass(frozen=True)
class SelectionParams:
    threshold: float = -0.02
    cap_fraction: float = 0.20
    stratify_by_type: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.cap_fraction <= 1.0:
            raise ValueError("cap fraction must be in (0, 1]")


def select_for_correction(
    records: Sequence[AnnotationRecord], params: SelectionParams = SelectionParams()
) -> list[AnnotationRecord]:
    """Pick the least confident annotations, capped per type stratum.

    Candidates score strictly below the threshold.  Within each stratum (the
    records sharing an entity class, or all records when stratification is
    off) at most ceil(cap_fraction * stratum size) survive, lowest score
    first, ties broken by (sample_id, annotation_index).  The result comes
    back in (sample_id, annotation_index) order for stable batching.
    """
    strata: dict[str, list[AnnotationRecord]] = {}
    for record in records:
        key = record.annotation.class_name if params.stratify_by_type else ""
        strata.setdefault(key, []).append(record)
    chosen: list[AnnotationRecord] = []
    for stratum in strata.values():
        cap = math.ceil(params.cap_fraction * len(stratum))
        candidates = [r for r in stratum if r.score < params.threshold]
        candidates.sort(key=lambda r: (r.score, r.sample_id, r.annotation_index))
        chosen.extend(candidates[:cap])
    chosen.sort(key=lambda r: (r.sample_id, r.annotation_index))
    return chosen


# ---------------------------------------------------------------------------
# Applying directives


@dataclass(frozen=True)
class CorrectionStats:
    """Outcome counts in the NA / Span / Type convention: NA covers drops
    (including retypes to "other"), Span and Type count applied revisions."""

    prompted: int
    kept: int
    dropped: int
    revised_span: int
    revised_type: int
    invalid: int

    @property
    def corrected(self) -> int:
        return self.dropped + self.revised_span + self.revised_type

    @property
    def corrected_fraction(self) -> float:
        return self.corrected / self.prompted if self.prompted else 0.0

    def report(self) -> str:
        header = f"{'NA':>6} {'Span':>6} {'Type':>6} {'%':>8} {'#':>6}"
        row = (
            f"{self.dropped:>6} {self.revised_span:>6} {self.revised_type:>6}"
            f" {self.corrected_fraction * 100:>7.1f}% {self.prompted:>6}"
        )
        return header + "\n" + row + "\n"


def _rebuild(sample: NerSample, annotations: list[Annotation | None]) -> NerSample:
    kept = tuple(a for a in annotations if a is not None)
    return sorted_annotations(NerSample(sample.sentence, kept))


def apply_directives(
    dataset: Sequence[NerSample],
    directives: Sequence[CorrectionDirective],
    spec: TaskSpec,
) -> tuple[list[NerSample], CorrectionStats]:
    """Apply verdicts to the dataset, never letting it become invalid.

    Directives are processed in (sample_id, annotation_index) order, one per
    target (later duplicates are invalid).  A span revision is committed only
    if some occurrence of the new span keeps the sample valid; a type
    revision must name a spec class, except "other" which drops the
    annotation.  Samples left without annotations stay in the dataset as
    negative samples.  The annotation count never increases.
    """
    working: dict[int, list[Annotation | None]] = {}
    targeted: set[tuple[int, int]] = set()
    kept = dropped = revised_span = revised_type = invalid = 0
    canonical = {name.lower(): name for name in spec.class_names()}

    def annotations_of(sid: int) -> list[Annotation | None]:
        if sid not in working:
            working[sid] = list(dataset[sid].annotations)
        return working[sid]

    for d in sorted(directives, key=lambda d: (d.sample_id, d.annotation_index)):
        target = (d.sample_id, d.annotation_index)
        if (
            d.sample_id >= len(dataset)
            or d.annotation_index >= len(dataset[d.sample_id].annotations)
            or target in targeted
        ):
            invalid += 1
            continue
        targeted.add(target)
        anns = annotations_of(d.sample_id)
        current = anns[d.annotation_index]
        if current is None:
            invalid += 1
            continue
        if d.action == KEEP:
            kept += 1
        elif d.action == DROP:
            anns[d.annotation_index] = None
            dropped += 1
        elif d.action == REVISE_TYPE:
            assert d.value is not None
            new_type = canonical.get(d.value.lower())
            if new_type == current.class_name:
                kept += 1
            elif new_type is not None:
                anns[d.annotation_index] = Annotation(
                    current.span, new_type, current.occurrence
                )
                revised_type += 1
            elif d.value.lower() == OTHER_TYPE:
                # "not one of the target types": the annotation goes away
                anns[d.annotation_index] = None
                dropped += 1
            else:
                invalid += 1
        elif d.action == REVISE_SPAN:
            assert d.value is not None
            sentence = dataset[d.sample_id].sentence
            committed = False
            for occurrence in range(len(resolve_occurrences(sentence, d.value))):
                candidate = Annotation(d.value, current.class_name, occurrence)
                trial = list(anns)
                trial[d.annotation_index] = candidate
                trial_sample = NerSample(
                    sentence, tuple(a for a in trial if a is not None)
                )
                if validate(trial_sample, spec) is None:
                    anns[d.annotation_index] = candidate
                    revised_span += 1
                    committed = True
                    break
            if not committed:
                invalid += 1
    out: list[NerSample] = []
    for sid, sample in enumerate(dataset):
        if sid in working:
            out.append(_rebuild(sample, working[sid]))
        else:
            out.append(sample)
    stats = CorrectionStats(
        prompted=len(directives),
        kept=kept,
        dropped=dropped,
        revised_span=revised_span,
        revised_type=revised_type,
        invalid=invalid,
    )
    return out, stats


def bind_actions(
    records: Sequence[AnnotationRecord], actions: Sequence[ParsedAction]
) -> list[CorrectionDirective]:
    """Zip batch records with their parsed verdicts into directives."""
    if len(records) != len(actions):
        raise ValueError("one action per record is required")
    return [
        CorrectionDirective(
            sample_id=r.sample_id,
            annotation_index=r.annotation_index,
            action=a.action,
            value=a.value,
        )
        for r, a in zip(records, actions)
    ]


def lint_correction_config(
    error_cases: Sequence[object], demos: Sequence[object]
) -> list[str]:
    """Soft guidance on correction-prompt size; returns warning strings."""
    warnings = []
    if len(error_cases) > 6:
        warnings.append(
            f"{len(error_cases)} error cases described; more than 6 tends to"
            " dilute the instruction"
        )
    if len(demos) > 6:
        warnings.append(
            f"{len(demos)} correction demos supplied; more than 6 tends to"
            " dilute the instruction"
        )
    return warnings
