"""Uncertainty scoring, capped selection, and directive application."""
from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nergen.correction import (
    AnnotationRecord,
    CorrectionStats,
    EmptyTokenList,
    InvalidRange,
    SelectionParams,
    apply_directives,
    bind_actions,
    lint_correction_config,
    records_for_sample,
    score_logprob,
    score_loss_window,
    select_for_correction,
)
from nergen.correction_types import (
    DROP,
    KEEP,
    REVISE_SPAN,
    REVISE_TYPE,
    CorrectionDirective,
    ParsedAction,
)
from nergen.parsing import parse_generation
from nergen.schema import Annotation, EntityClass, NerSample, TaskSpec, validate
from support import random_sample

SPEC = TaskSpec(
    domain_description="news articles",
    classes=(
        EntityClass("person"),
        EntityClass("location"),
        EntityClass("organization"),
    ),
    demos=(
        NerSample(
            "Alice toured Berlin.",
            (Annotation("Alice", "person", 0), Annotation("Berlin", "location", 0)),
        ),
    ),
)


def rec(sid, idx, cls="person", score=-0.5):
    return AnnotationRecord(sid, idx, Annotation("x", cls, 0), (score,))


# ---------------------------------------------------------------------------
# Scoring


def test_score_logprob_is_arithmetic_mean():
    assert score_logprob([-0.2, -0.4, -0.6]) == pytest.approx(-0.4)
    assert score_logprob([-1.0]) == -1.0


def test_score_logprob_rejects_empty():
    with pytest.raises(EmptyTokenList):
        score_logprob([])


def test_record_score_property():
    r = AnnotationRecord(0, 0, Annotation("x", "person", 0), (-0.3, -0.1))
    assert r.score == pytest.approx(-0.2)


def test_record_rejects_empty_tokens():
    with pytest.raises(EmptyTokenList):
        AnnotationRecord(0, 0, Annotation("x", "person", 0), ())


def test_loss_window_widens_one_token_each_side():
    losses = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
    # span token at index 4: window covers indices 3..5
    assert score_loss_window(losses, (4, 4)) == pytest.approx(-(0.4 + 0.5 + 0.6) / 3)


def test_loss_window_clips_at_edges():
    losses = [0.3, 0.9, 0.6]
    assert score_loss_window(losses, (0, 0)) == pytest.approx(-(0.3 + 0.9) / 2)
    assert score_loss_window(losses, (2, 2)) == pytest.approx(-(0.9 + 0.6) / 2)
    assert score_loss_window([0.7], (0, 0)) == pytest.approx(-0.7)


def test_loss_window_multi_token_span():
    losses = [0.1, 0.2, 0.3, 0.4, 0.5]
    assert score_loss_window(losses, (1, 3)) == pytest.approx(
        -(0.1 + 0.2 + 0.3 + 0.4 + 0.5) / 5
    )


def test_loss_window_rejects_bad_ranges():
    with pytest.raises(InvalidRange):
        score_loss_window([0.1, 0.2], (1, 0))
    with pytest.raises(InvalidRange):
        score_loss_window([0.1, 0.2], (0, 2))
    with pytest.raises(InvalidRange):
        score_loss_window([0.1], (-1, 0))


# ---------------------------------------------------------------------------
# Token alignment


def test_records_align_tokens_by_char_intersection():
    text = "Sentence: Bob slept.\nNamed Entities: [Bob (person)]"
    tokens = [
        "Sentence",
        ":",
        " Bob",
        " slept",
        ".",
        "\n",
        "Named",
        " Entities",
        ":",
        " [",
        "Bob",
        " (",
        "person",
        ")",
        "]",
    ]
    assert "".join(tokens) == text
    logprobs = [(tok, -0.01 * i) for i, tok in enumerate(tokens)]
    outcome = parse_generation(text, SPEC)
    (sample,) = outcome.samples
    (ranges,) = outcome.annotation_ranges
    records = records_for_sample(7, sample, ranges, logprobs)
    assert len(records) == 1
    r = records[0]
    assert (r.sample_id, r.annotation_index) == (7, 0)
    # exactly the tokens overlapping "Bob (person)": Bob, " (", person, ")"
    assert r.token_logprobs == (-0.10, -0.11, -0.12, -0.13)


def test_records_two_annotations():
    text = "Sentence: Bob visited Paris.\nNamed Entities: [Bob (person), Paris (location)]"
    tokens = [text[:46], "Bob (person)", ", ", "Paris (location)", "]"]
    assert "".join(tokens) == text
    logprobs = [(tok, -float(i + 1)) for i, tok in enumerate(tokens)]
    outcome = parse_generation(text, SPEC)
    records = records_for_sample(0, outcome.samples[0], outcome.annotation_ranges[0], logprobs)
    assert [(r.annotation_index, r.token_logprobs) for r in records] == [
        (0, (-2.0,)),
        (1, (-4.0,)),
    ]


def test_records_skip_annotations_without_tokens():
    text = "Sentence: Bob slept.\nNamed Entities: [Bob (person)]"
    outcome = parse_generation(text, SPEC)
    records = records_for_sample(0, outcome.samples[0], outcome.annotation_ranges[0], [])
    assert records == []


# ---------------------------------------------------------------------------
# Selection


def test_selection_spec_scale_example():
    # one stratum of 100 records, 40 below the threshold: the cap is
    # ceil(0.20 * 100) = 20 and exactly the 20 lowest scores survive
    rng = random.Random(7)
    low = [-0.5 + 0.01 * i for i in range(40)]   # -0.50 .. -0.11, all < -0.02
    high = [-0.01] * 60                           # above the threshold
    scores = low + high
    rng.shuffle(scores)
    records = [rec(i, 0, score=s) for i, s in enumerate(scores)]
    chosen = select_for_correction(records)
    assert len(chosen) == 20
    expected = sorted(low)[:20]
    assert sorted(r.score for r in chosen) == pytest.approx(expected)


def test_selection_is_strict_at_threshold():
    records = [rec(0, 0, score=-0.02), rec(1, 0, score=-0.020001)]
    chosen = select_for_correction(records, SelectionParams(threshold=-0.02))
    assert [(r.sample_id) for r in chosen] == [1]


def test_selection_caps_each_type_stratum():
    people = [rec(i, 0, "person", score=-1.0) for i in range(10)]
    places = [rec(100 + i, 0, "location", score=-1.0) for i in range(4)]
    chosen = select_for_correction(people + places)
    by_class = {}
    for r in chosen:
        by_class.setdefault(r.annotation.class_name, 0)
        by_class[r.annotation.class_name] += 1
    assert by_class == {"person": 2, "location": 1}  # ceil(.2*10), ceil(.2*4)


def test_selection_without_stratification_uses_one_pool():
    people = [rec(i, 0, "person", score=-1.0) for i in range(10)]
    places = [rec(100 + i, 0, "location", score=-1.0) for i in range(4)]
    chosen = select_for_correction(
        people + places, SelectionParams(stratify_by_type=False)
    )
    assert len(chosen) == math.ceil(0.2 * 14)


def test_selection_ties_break_on_sample_then_annotation():
    records = [rec(3, 1, score=-1.0), rec(3, 0, score=-1.0), rec(1, 5, score=-1.0),
               rec(9, 0, score=-1.0), rec(2, 0, score=-1.0)]
    chosen = select_for_correction(records)  # cap = ceil(.2*5) = 1
    assert [(r.sample_id, r.annotation_index) for r in chosen] == [(1, 5)]


def test_selection_result_in_batch_order():
    records = [rec(5, 0, score=-0.9), rec(1, 1, score=-0.5), rec(1, 0, score=-0.7),
               rec(2, 0, score=-0.3), rec(0, 0, score=-0.01)]
    chosen = select_for_correction(records)  # cap = ceil(.2*5) = 1
    assert [(r.sample_id, r.annotation_index) for r in chosen] == [(5, 0)]
    ordered = select_for_correction(
        [rec(i % 7, i % 3, score=-0.5 - 0.001 * i) for i in range(60)]
    )
    assert [(r.sample_id, r.annotation_index) for r in ordered] == sorted(
        (r.sample_id, r.annotation_index) for r in ordered
    )


def test_selection_order_invariant_to_input_shuffle():
    rng = random.Random(11)
    records = [
        rec(i, j, cls, score=rng.choice([-0.5, -0.25, -0.01, -0.003]))
        for i in range(25)
        for j, cls in enumerate(("person", "location"))
    ]
    baseline = select_for_correction(records)
    for _ in range(5):
        shuffled = records[:]
        rng.shuffle(shuffled)
        assert select_for_correction(shuffled) == baseline


def test_selection_monotone_in_threshold():
    rng = random.Random(3)
    records = [rec(i, 0, score=-rng.random()) for i in range(50)]
    tighter = select_for_correction(records, SelectionParams(threshold=-0.6))
    looser = select_for_correction(records, SelectionParams(threshold=-0.1))
    tighter_keys = {(r.sample_id, r.annotation_index) for r in tighter}
    looser_keys = {(r.sample_id, r.annotation_index) for r in looser}
    assert tighter_keys <= looser_keys


def test_selection_bulk_against_sort_oracle():
    rng = random.Random(42)
    for _ in range(200):
        records = []
        for sid in range(rng.randint(1, 30)):
            for idx in range(rng.randint(0, 3)):
                records.append(
                    rec(sid, idx, rng.choice(["person", "location"]),
                        score=round(rng.uniform(-1.0, 0.0), 3))
                )
        params = SelectionParams(threshold=rng.choice([-0.02, -0.3, -0.7]))
        got = select_for_correction(records, params)
        # independent restatement: per-class sort and slice
        expected = []
        for cls in {r.annotation.class_name for r in records}:
            stratum = [r for r in records if r.annotation.class_name == cls]
            cap = math.ceil(params.cap_fraction * len(stratum))
            cands = sorted(
                (r for r in stratum if r.score < params.threshold),
                key=lambda r: (r.score, r.sample_id, r.annotation_index),
            )
            expected.extend(cands[:cap])
        expected.sort(key=lambda r: (r.sample_id, r.annotation_index))
        assert got == expected


def test_selection_params_validation():
    with pytest.raises(ValueError):
        SelectionParams(cap_fraction=0.0)
    with pytest.raises(ValueError):
        SelectionParams(cap_fraction=1.5)


# ---------------------------------------------------------------------------
# Applying directives


def d(sid, idx, action, value=None):
    return CorrectionDirective(sid, idx, action, value)


def base_dataset():
    return [
        NerSample(
            "Bob met Ann.",
            (Annotation("Bob", "person", 0), Annotation("Ann", "person", 0)),
        ),
        NerSample("Paris glowed.", (Annotation("Paris", "location", 0),)),
        NerSample("Quiet day.", ()),
    ]


def test_keep_leaves_dataset_alone():
    out, stats = apply_directives(base_dataset(), [d(0, 0, KEEP)], SPEC)
    assert out == base_dataset()
    assert (stats.kept, stats.corrected, stats.invalid) == (1, 0, 0)


def test_drop_removes_annotation_but_keeps_sample():
    out, stats = apply_directives(base_dataset(), [d(1, 0, DROP)], SPEC)
    assert out[1] == NerSample("Paris glowed.", ())
    assert stats.dropped == 1
    assert len(out) == 3


def test_retype_to_spec_class():
    out, stats = apply_directives(
        base_dataset(), [d(1, 0, REVISE_TYPE, "organization")], SPEC
    )
    assert out[1].annotations == (Annotation("Paris", "organization", 0),)
    assert stats.revised_type == 1


def test_retype_case_insensitive():
    out, _ = apply_directives(base_dataset(), [d(1, 0, REVISE_TYPE, "Organization")], SPEC)
    assert out[1].annotations[0].class_name == "organization"


def test_retype_to_same_class_counts_as_kept():
    out, stats = apply_directives(base_dataset(), [d(1, 0, REVISE_TYPE, "location")], SPEC)
    assert out == base_dataset()
    assert (stats.kept, stats.revised_type) == (1, 0)


def test_retype_to_other_drops():
    out, stats = apply_directives(base_dataset(), [d(0, 1, REVISE_TYPE, "other")], SPEC)
    assert out[0].annotations == (Annotation("Bob", "person", 0),)
    assert (stats.dropped, stats.revised_type) == (1, 0)


def test_retype_to_other_uppercase_drops():
    _, stats = apply_directives(base_dataset(), [d(0, 1, REVISE_TYPE, "Other")], SPEC)
    assert stats.dropped == 1


def test_retype_to_unknown_class_is_invalid():
    out, stats = apply_directives(base_dataset(), [d(1, 0, REVISE_TYPE, "kingdom")], SPEC)
    assert out == base_dataset()
    assert stats.invalid == 1


def test_respan_commits_and_reorders():
    out, stats = apply_directives(base_dataset(), [d(0, 0, REVISE_SPAN, "met")], SPEC)
    assert out[0].annotations == (
        Annotation("met", "person", 0),
        Annotation("Ann", "person", 0),
    )
    assert stats.revised_span == 1


def test_respan_to_missing_text_is_invalid():
    out, stats = apply_directives(base_dataset(), [d(0, 0, REVISE_SPAN, "Zeus")], SPEC)
    assert out == base_dataset()
    assert stats.invalid == 1


def test_respan_collision_with_existing_annotation_is_invalid():
    out, stats = apply_directives(base_dataset(), [d(0, 0, REVISE_SPAN, "Ann")], SPEC)
    assert out == base_dataset()
    assert stats.invalid == 1


def test_respan_skips_colliding_occurrence():
    ds = [
        NerSample(
            "Bob met Bob.",
            (Annotation("Bob", "person", 0), Annotation("met", "person", 0)),
        )
    ]
    out, stats = apply_directives(ds, [d(0, 1, REVISE_SPAN, "Bob")], SPEC)
    assert out[0].annotations == (
        Annotation("Bob", "person", 0),
        Annotation("Bob", "person", 1),
    )
    assert stats.revised_span == 1


def test_out_of_range_targets_are_invalid():
    out, stats = apply_directives(
        base_dataset(), [d(9, 0, KEEP), d(2, 0, DROP), d(0, 5, DROP)], SPEC
    )
    assert out == base_dataset()
    assert stats.invalid == 3


def test_duplicate_target_second_directive_invalid():
    out, stats = apply_directives(
        base_dataset(), [d(1, 0, KEEP), d(1, 0, DROP)], SPEC
    )
    assert out == base_dataset()
    assert (stats.kept, stats.invalid) == (1, 1)


def test_stats_partition_counts_every_directive():
    directives = [
        d(0, 0, KEEP),
        d(0, 1, DROP),
        d(1, 0, REVISE_TYPE, "person"),
        d(2, 0, DROP),          # no annotations: invalid target
        d(9, 9, KEEP),          # out of range
    ]
    _, stats = apply_directives(base_dataset(), directives, SPEC)
    assert stats.prompted == 5
    assert (
        stats.kept + stats.dropped + stats.revised_span + stats.revised_type
        + stats.invalid
    ) == stats.prompted


def test_stats_report_and_fraction():
    stats = CorrectionStats(
        prompted=50, kept=28, dropped=12, revised_span=3, revised_type=5, invalid=2
    )
    assert stats.corrected == 20
    assert stats.corrected_fraction == pytest.approx(0.4)
    report = stats.report()
    assert report.splitlines()[0].split() == ["NA", "Span", "Type", "%", "#"]
    assert report.splitlines()[1].split() == ["12", "3", "5", "40.0%", "50"]
    assert CorrectionStats(0, 0, 0, 0, 0, 0).corrected_fraction == 0.0


@settings(max_examples=150)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_apply_never_grows_and_stays_valid(seed):
    rng = random.Random(seed)
    dataset = [random_sample(rng, ("person", "location")) for _ in range(4)]
    spans = [a.span for s in dataset for a in s.annotations] or ["x"]
    directives = []
    for _ in range(rng.randint(0, 10)):
        action = rng.choice([KEEP, DROP, REVISE_SPAN, REVISE_TYPE])
        value = None
        if action == REVISE_SPAN:
            value = rng.choice(spans + ["missing text"])
        elif action == REVISE_TYPE:
            value = rng.choice(["person", "location", "other", "kingdom"])
        directives.append(d(rng.randint(0, 5), rng.randint(0, 4), action, value))
    spec = TaskSpec(
        domain_description="notes",
        classes=(EntityClass("person"), EntityClass("location")),
        demos=(NerSample("stub", ()),),
        include_negative_demo=True,
    )
    before = sum(len(s.annotations) for s in dataset)
    out, stats = apply_directives(dataset, directives, spec)
    assert len(out) == len(dataset)
    assert sum(len(s.annotations) for s in out) <= before
    for sample in out:
        assert validate(sample, spec) is None
    assert (
        stats.kept + stats.dropped + stats.revised_span + stats.revised_type
        + stats.invalid
    ) == len(directives)


# ---------------------------------------------------------------------------
# Glue


def test_bind_actions_zips_by_position():
    records = [rec(4, 1), rec(7, 0)]
    actions = [ParsedAction(KEEP), ParsedAction(REVISE_TYPE, "location")]
    directives = bind_actions(records, actions)
    assert directives == [
        CorrectionDirective(4, 1, KEEP, None),
        CorrectionDirective(7, 0, REVISE_TYPE, "location"),
    ]


def test_bind_actions_length_mismatch():
    with pytest.raises(ValueError):
        bind_actions([rec(0, 0)], [])


def test_lint_flags_oversized_prompt_parts():
    assert lint_correction_config(range(7), range(2))
    assert lint_correction_config(range(2), range(9))
    assert lint_correction_config(range(6), range(6)) == []
