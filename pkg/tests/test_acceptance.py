"""Acceptance gate: one test per release criterion.

Each test checks a pinned tolerance or exact value and prints one
``ACCEPTANCE PASS`` line (visible with ``pytest -s``); a failing criterion
fails its test.  Everything here runs hermetically on CPU.
"""
import json
import math
import random
import time
from decimal import Decimal
from pathlib import Path

import pytest
from scipy import stats as scipy_stats

from nergen.config import load_pipeline_config
from nergen.correction import (
    AnnotationRecord,
    SelectionParams,
    apply_directives,
    select_for_correction,
)
from nergen.correction_types import CorrectionDirective
from nergen.dataio import format_conll, parse_conll
from nergen.diversity import (
    AttributeDimension,
    AttributePool,
    sample_config_x,
    sample_entities,
)
from nergen.evaluation import exact_micro, partial_micro
from nergen.gateway import (
    DEFAULT_PRICES,
    CostLedger,
    LedgerEntry,
    Usage,
    charge,
)
from nergen.parsing import parse_generation
from nergen.pipeline import run_stage
from nergen.schema import (
    Annotation,
    EntityClass,
    NerSample,
    TaskSpec,
    TokenizedSample,
    from_bio,
    to_bio,
    validate,
)

from test_evaluation import oracle_prf, random_corpus_pair, ts
from test_parsing import _FRAGMENTS, CASES, SPEC as PARSER_SPEC

MICRO = Path(__file__).resolve().parents[1] / "micro"


def passed(name: str) -> None:
    print(f"ACCEPTANCE PASS: {name}")


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
            (Annotation("Alice", "person"), Annotation("Berlin", "location")),
        ),
    ),
)


# ---------------------------------------------------------------------------
# 1. BIO round trip


WORDS = [
    "Bob", "Ann", "Paris", "Rome", "Acme", "visited", "met", "in",
    "the", "old", "plaza", "river", "bank", "they", "won",
]


def random_tagged(rng: random.Random) -> TokenizedSample:
    n = rng.randint(1, 12)
    tokens = [rng.choice(WORDS) for _ in range(n)]
    if rng.random() < 0.5:
        tokens.append(".")
    tags = ["O"] * len(tokens)
    i = 0
    while i < n:
        if rng.random() < 0.35:
            cls = rng.choice(("person", "location", "organization"))
            length = min(rng.randint(1, 3), n - i)
            tags[i] = f"B-{cls}"
            for j in range(i + 1, i + length):
                tags[j] = f"I-{cls}"
            i += length
        else:
            i += 1
    return TokenizedSample(tuple(tokens), tuple(tags))


def test_bio_round_trip():
    start = time.monotonic()
    rng = random.Random(20240816)
    for _ in range(10_000):
        tagged = random_tagged(rng)
        sample = from_bio(tagged)
        assert to_bio(sample) == tagged
        assert from_bio(to_bio(sample)) == sample
    elapsed = time.monotonic() - start

    example = NerSample(
        "Bob is born in Athens.",
        (Annotation("Bob", "person"), Annotation("Athens", "location")),
    )
    assert list(to_bio(example).tags) == [
        "B-person", "O", "O", "O", "B-location", "O",
    ]
    assert elapsed < 10.0, f"round trip took {elapsed:.1f}s"
    passed("BIO round trip (10,000 samples, reference tag sequence)")


# ---------------------------------------------------------------------------
# 2. Parser taxonomy


def test_parser_taxonomy():
    assert len(CASES) >= 30
    reject_kinds = set()
    for case in CASES:
        outcome = parse_generation(case.text, PARSER_SPEC)
        got = [
            (s.sentence, tuple((a.span, a.class_name, a.occurrence) for a in s.annotations))
            for s in outcome.samples
        ]
        want = [(sent, tuple(anns)) for sent, anns in case.samples]
        assert got == want, case.name
        assert [r.reason for r in outcome.rejects] == list(case.rejects), case.name
        assert outcome.block_count == len(case.samples) + len(case.rejects)
        reject_kinds.update(r.value for r in case.rejects)
    assert {"OverlappingSpans", "UnseenType", "SpanNotFound"} <= reject_kinds

    rng = random.Random(7)
    for _ in range(1_000):
        text = "\n".join(
            rng.choice(_FRAGMENTS) for _ in range(rng.randint(0, 12))
        )
        outcome = parse_generation(text, PARSER_SPEC)
        assert len(outcome.samples) + len(outcome.rejects) == outcome.block_count
        for sample in outcome.samples:
            assert validate(sample, PARSER_SPEC) is None
    passed("parser taxonomy (30+ cases exact, 1,000 fuzzed partitions)")


# ---------------------------------------------------------------------------
# 3. Diversity sampling statistics


def test_diversity_sampling_statistics():
    start = time.monotonic()
    rng = random.Random(11)

    topic = AttributeDimension(
        "news topic",
        tuple(f"topic-{i}" for i in range(14)),
        is_topic=True,
    )
    style = AttributeDimension(
        "writing style",
        ("formal", "casual", "dry", "lively", "terse"),
        sample_probability=0.4,
    )
    pool = AttributePool((topic, style))
    counts = [len(sample_config_x(pool, rng).x_pairs) for _ in range(10_000)]
    mean = sum(counts) / len(counts)
    assert 1.37 <= mean <= 1.43, mean

    conflict = AttributePool(
        (
            topic,
            AttributeDimension("price", ("cheap", "mid"), 0.2, "amenity"),
            AttributeDimension("ambiance", ("cozy", "loud"), 0.2, "amenity"),
            AttributeDimension("service", ("fast", "slow"), 0.1, "amenity"),
        )
    )
    group = {"price", "ambiance", "service"}
    violations = 0
    for _ in range(10_000):
        names = [name for name, _ in sample_config_x(conflict, rng).x_pairs]
        if sum(1 for n in names if n in group) > 1:
            violations += 1
    assert violations == 0

    view3 = {f"c{i}": tuple(f"e{i}-{j}" for j in range(8)) for i in range(3)}
    kept = [len(sample_entities(view3, rng, 1.5)) for _ in range(10_000)]
    mean3 = sum(kept) / len(kept)
    assert 1.42 <= mean3 <= 1.58, mean3

    view12 = {f"c{i}": tuple(f"e{i}-{j}" for j in range(8)) for i in range(12)}
    kept12 = [len(sample_entities(view12, rng, 4.5)) for _ in range(10_000)]
    mean12 = sum(kept12) / len(kept12)
    assert 4.3 <= mean12 <= 4.7, mean12

    # a single class with no thinning exposes the per-class draw count
    single = {"c": tuple(f"e{j}" for j in range(10))}
    draws = [len(sample_entities(single, rng, 1000.0)) for _ in range(10_000)]
    histogram = [draws.count(k) for k in range(4)]
    assert sum(histogram) == 10_000
    p_value = scipy_stats.chisquare(histogram).pvalue
    assert p_value > 0.01, p_value

    elapsed = time.monotonic() - start
    assert elapsed < 30.0, f"sampling statistics took {elapsed:.1f}s"
    passed("diversity sampling statistics (means, conflicts, thinning, uniformity)")


# ---------------------------------------------------------------------------
# 4. Uncertainty selection


def selection_oracle(records, params):
    strata = {}
    for r in records:
        strata.setdefault(r.annotation.class_name, []).append(r)
    chosen = []
    for stratum in strata.values():
        cap = math.ceil(params.cap_fraction * len(stratum))
        below = sorted(
            (r for r in stratum if r.score < params.threshold),
            key=lambda r: (r.score, r.sample_id, r.annotation_index),
        )
        chosen.extend(below[:cap])
    return sorted(chosen, key=lambda r: (r.sample_id, r.annotation_index))


def test_uncertainty_selection():
    params = SelectionParams(threshold=-0.02, cap_fraction=0.20)
    rng = random.Random(3)
    for _ in range(1_000):
        classes = [f"c{i}" for i in range(rng.randint(1, 4))]
        records = [
            AnnotationRecord(
                sample_id=i,
                annotation_index=rng.randint(0, 2),
                annotation=Annotation("x", rng.choice(classes)),
                token_logprobs=(rng.uniform(-0.1, 0.0),),
            )
            for i in range(rng.randint(0, 60))
        ]
        selected = select_for_correction(records, params)
        assert selected == selection_oracle(records, params)
        assert all(r.score < -0.02 for r in selected)
        per_stratum = {}
        stratum_sizes = {}
        for r in records:
            stratum_sizes[r.annotation.class_name] = (
                stratum_sizes.get(r.annotation.class_name, 0) + 1
            )
        for r in selected:
            per_stratum[r.annotation.class_name] = (
                per_stratum.get(r.annotation.class_name, 0) + 1
            )
        for cls, count in per_stratum.items():
            assert count <= math.ceil(0.20 * stratum_sizes[cls])
    passed("uncertainty selection (threshold, stratum caps, 1,000-case oracle)")


# ---------------------------------------------------------------------------
# 5. Correction application


def test_correction_application():
    dataset = [
        NerSample("Bob met Ann.", (Annotation("Bob", "person"), Annotation("Ann", "person"))),
        NerSample("The Berlin Wall fell.", (Annotation("Berlin Wall", "location"),)),
        NerSample("France won.", (Annotation("France", "person"),)),
        NerSample("Pluto Day came.", (Annotation("Pluto Day", "organization"),)),
        NerSample("Acme hired Jo.", (Annotation("Acme", "organization"), Annotation("Jo", "person"))),
    ]
    directives = [
        CorrectionDirective(0, 0, "keep"),
        CorrectionDirective(0, 1, "keep"),
        CorrectionDirective(1, 0, "revise_span", "Berlin"),
        CorrectionDirective(2, 0, "revise_type", "location"),
        CorrectionDirective(3, 0, "revise_type", "other"),
        CorrectionDirective(4, 0, "drop"),
    ]
    corrected, stats = apply_directives(dataset, directives, SPEC)

    assert stats.prompted == 6
    assert stats.kept == 2
    assert stats.dropped == 2  # one drop verdict plus one retype to "other"
    assert stats.revised_span == 1
    assert stats.revised_type == 1
    assert stats.invalid == 0
    report_row = stats.report().splitlines()[1].split()
    assert report_row == ["2", "1", "1", "66.7%", "6"]

    by_sentence = {s.sentence: s.annotations for s in corrected}
    assert by_sentence["The Berlin Wall fell."] == (Annotation("Berlin", "location"),)
    assert by_sentence["France won."] == (Annotation("France", "location"),)
    assert by_sentence["Pluto Day came."] == ()
    assert by_sentence["Acme hired Jo."] == (Annotation("Jo", "person"),)
    for sample in corrected:
        assert validate(sample, SPEC) is None
    passed("correction application (exact NA/Span/Type stats, valid post-state)")


# ---------------------------------------------------------------------------
# 6. Evaluation oracle


def test_evaluation_oracle():
    pred = [ts(["B-a", "I-a", "O"])]
    gold = [ts(["O", "B-a", "I-a"])]
    partial = partial_micro(pred, gold)
    assert partial.precision == partial.recall == partial.f1 == 0.5
    exact = exact_micro(pred, gold)
    assert exact.f1 == 0.0

    rng = random.Random(99)
    for _ in range(1_000):
        pred_corpus, gold_corpus = random_corpus_pair(rng)
        for partial_mode in (False, True):
            mine = (
                partial_micro(pred_corpus, gold_corpus)
                if partial_mode
                else exact_micro(pred_corpus, gold_corpus)
            )
            want_p, want_r, want_f = oracle_prf(pred_corpus, gold_corpus, partial_mode)
            assert abs(mine.precision - want_p) < 1e-9
            assert abs(mine.recall - want_r) < 1e-9
            assert abs(mine.f1 - want_f) < 1e-9
        assert partial_micro(pred_corpus, gold_corpus).f1 >= exact_micro(
            pred_corpus, gold_corpus
        ).f1 - 1e-12
    passed("evaluation oracle (1,000 corpora within 1e-9, 0.5-credit rule)")


# ---------------------------------------------------------------------------
# 7. Cost arithmetic


def test_cost_arithmetic():
    dollars = charge(Usage(1000, 500), "gpt-3.5-turbo", DEFAULT_PRICES)
    assert isinstance(dollars, Decimal)
    assert dollars == Decimal("0.002")

    rng = random.Random(5)
    ledger = CostLedger()
    total = Decimal(0)
    for i in range(200):
        usage = Usage(rng.randint(0, 5000), rng.randint(0, 2000))
        model = rng.choice(("gpt-3.5-turbo", "gpt-4"))
        cost = charge(usage, model, DEFAULT_PRICES)
        total += cost
        ledger.record(
            LedgerEntry(
                request_index=i,
                kind=rng.choice(("ner", "correction", "entity")),
                model_id=model,
                prompt_tokens=usage.prompt_tokens,
                completion_tokens=usage.completion_tokens,
                dollars=cost,
            )
        )
    assert ledger.total() == total
    by_kind = ledger.by_kind()
    assert sum((dollars for *_, dollars in by_kind.values()), Decimal(0)) == total
    passed("cost arithmetic (exact $0.002 reference, ledger conservation)")


# ---------------------------------------------------------------------------
# 8. End-to-end replay determinism


def test_end_to_end_replay_determinism(tmp_path):
    start = time.monotonic()
    config = load_pipeline_config(MICRO / "pipeline.toml")
    dirs = (tmp_path / "first", tmp_path / "second")
    for run_dir in dirs:
        for stage in ("attrs", "generate", "correct", "export"):
            run_stage(config, run_dir, stage)
    names_a = sorted(p.name for p in dirs[0].iterdir())
    names_b = sorted(p.name for p in dirs[1].iterdir())
    assert names_a == names_b
    assert {"dataset.jsonl", "corrected.jsonl", "train.conll", "train.weights"} <= set(
        names_a
    )
    for name in names_a:
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes(), name

    # sanity that the export is a readable CoNLL file with the expected shape
    blocks = parse_conll((dirs[0] / "train.conll").read_text(encoding="utf-8"))
    assert len(blocks) == 18
    assert format_conll(blocks) == (dirs[0] / "train.conll").read_text(encoding="utf-8")
    stats = json.loads((dirs[0] / "correction.json").read_text(encoding="utf-8"))
    assert stats["prompted"] == 4 and stats["invalid"] == 0

    elapsed = time.monotonic() - start
    assert elapsed < 60.0, f"end-to-end replay took {elapsed:.1f}s"
    passed("end-to-end replay determinism (byte-identical run directories)")
