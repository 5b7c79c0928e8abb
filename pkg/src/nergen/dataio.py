"""File formats for datasets: CoNLL token/tag files and JSONL samples.

CoNLL layout: one ``token<TAB>tag`` line per token, a blank line between
samples, UTF-8 text.  JSONL layout: one object per line with a ``sentence``
string and an ``entities`` array of ``{span, type, occurrence}`` objects.
"""
from __future__ import annotations

import json
from pathlib import Path

from .schema import (
    Annotation,
    MalformedTagSequence,
    NerSample,
    TokenizedSample,
    from_bio,
    to_bio,
)


def format_conll(tokenized) -> str:
    """Render tokenized samples as CoNLL text (trailing newline included)."""
    blocks = []
    for ts in tokenized:
        blocks.append(
            "\n".join(f"{tok}\t{tag}" for tok, tag in zip(ts.tokens, ts.tags))
        )
    return "\n\n".join(blocks) + "\n" if blocks else ""


def parse_conll(text: str) -> list[TokenizedSample]:
    """Parse CoNLL text into tokenized samples.

    Raises ValueError on a line without a tab separator.
    """
    samples: list[TokenizedSample] = []
    tokens: list[str] = []
    tags: list[str] = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            if tokens:
                samples.append(TokenizedSample(tuple(tokens), tuple(tags)))
                tokens, tags = [], []
            continue
        if "\t" not in line:
            raise ValueError(f"line {lineno}: expected token<TAB>tag, got {line!r}")
        tok, _, tag = line.partition("\t")
        tokens.append(tok)
        tags.append(tag.strip())
    if tokens:
        samples.append(TokenizedSample(tuple(tokens), tuple(tags)))
    return samples


def write_conll(path, tokenized) -> None:
    Path(path).write_text(format_conll(tokenized), encoding="utf-8")


def read_conll(path) -> list[TokenizedSample]:
    return parse_conll(Path(path).read_text(encoding="utf-8"))


def read_conll_samples(path) -> list[NerSample]:
    """Read a CoNLL file and rebuild samples (strict BIO decoding)."""
    return [from_bio(ts) for ts in read_conll(path)]


def tolerant_entity_runs(ts: TokenizedSample) -> list[tuple[int, int, str]]:
    """Entity runs from possibly-malformed tags, skipping invalid annotations.

    An I- tag that does not continue a same-class run is dropped (the broken
    annotation is filtered out, the rest of the sample survives).  Unknown tag
    strings are treated as O.
    """
    runs: list[tuple[int, int, str]] = []
    open_class: str | None = None
    start = -1
    broken = False
    for i, tag in enumerate(ts.tags):
        if tag.startswith("B-") and len(tag) > 2:
            if open_class is not None and not broken:
                runs.append((start, i - 1, open_class))
            open_class = tag[2:]
            start = i
            broken = False
        elif tag.startswith("I-") and len(tag) > 2:
            if open_class != tag[2:]:
                # dangling or class-switching I-: keep what came before,
                # poison the run this tag starts
                if open_class is not None and not broken:
                    runs.append((start, i - 1, open_class))
                open_class = tag[2:]
                start = i
                broken = True
        else:
            if open_class is not None and not broken:
                runs.append((start, i - 1, open_class))
            open_class = None
            broken = False
    if open_class is not None and not broken:
        runs.append((start, len(ts.tags) - 1, open_class))
    return runs


# ---------------------------------------------------------------------------
# JSONL


def sample_to_obj(sample: NerSample) -> dict:
    return {
        "sentence": sample.sentence,
        "entities": [
            {"span": a.span, "type": a.class_name, "occurrence": a.occurrence}
            for a in sample.annotations
        ],
    }


def sample_from_obj(obj: dict) -> NerSample:
    return NerSample(
        sentence=obj["sentence"],
        annotations=tuple(
            Annotation(e["span"], e["type"], e.get("occurrence", 0))
            for e in obj["entities"]
        ),
    )


def format_jsonl(samples) -> str:
    return "".join(
        json.dumps(sample_to_obj(s), ensure_ascii=False, sort_keys=True) + "\n"
        for s in samples
    )


def parse_jsonl(text: str) -> list[NerSample]:
    return [
        sample_from_obj(json.loads(line))
        for line in text.splitlines()
        if line.strip()
    ]


def write_jsonl(path, samples) -> None:
    Path(path).write_text(format_jsonl(samples), encoding="utf-8")


def read_jsonl(path) -> list[NerSample]:
    return parse_jsonl(Path(path).read_text(encoding="utf-8"))


def export_conll(samples, demos, replication: int = 5, demo_weight: float = 1.0):
    """Build training-file blocks: demos first (replicated), then samples.

    Returns (tokenized_blocks, weights) where weights[i] is the loss weight
    recorded for block i in the sidecar.  With replication > 1 the demo weight
    is normally 1.0 (the copies carry the emphasis); with replication == 1 a
    loss-weighting trainer reads the demo weight from the sidecar instead.
    """
    if replication < 1:
        raise ValueError("replication must be >= 1")
    blocks: list[TokenizedSample] = []
    weights: list[float] = []
    for demo in demos:
        bio = to_bio(demo)
        for _ in range(replication):
            blocks.append(bio)
            weights.append(demo_weight)
    for sample in samples:
        blocks.append(to_bio(sample))
        weights.append(1.0)
    return blocks, weights


def format_weights(weights) -> str:
    return "".join(f"{w:g}\n" for w in weights)
