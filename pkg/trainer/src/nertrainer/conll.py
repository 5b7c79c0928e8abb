"""CoNLL token/tag files and the per-block loss-weight sidecar.

CoNLL layout: one ``token<TAB>tag`` line per token, a blank line between
blocks, UTF-8 text.  The weight sidecar holds one positive number per line,
line-aligned with the CoNLL blocks.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


class MalformedTags(ValueError):
    """A tag sequence is not valid BIO."""


@dataclass(frozen=True)
class Block:
    """One sentence: parallel token and tag tuples."""

    tokens: tuple[str, ...]
    tags: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.tags):
            raise ValueError("tokens and tags must have equal length")


def parse_conll(text: str) -> list[Block]:
    """Parse CoNLL text into blocks.

    Raises ValueError on a line without a tab separator.
    """
    blocks: list[Block] = []
    tokens: list[str] = []
    tags: list[str] = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            if tokens:
                blocks.append(Block(tuple(tokens), tuple(tags)))
                tokens, tags = [], []
            continue
        if "\t" not in line:
            raise ValueError(f"line {lineno}: expected token<TAB>tag, got {line!r}")
        tok, _, tag = line.partition("\t")
        tokens.append(tok)
        tags.append(tag.strip())
    if tokens:
        blocks.append(Block(tuple(tokens), tuple(tags)))
    return blocks


def format_conll(blocks) -> str:
    """Render blocks as CoNLL text (trailing newline included)."""
    parts = []
    for block in blocks:
        parts.append(
            "\n".join(f"{tok}\t{tag}" for tok, tag in zip(block.tokens, block.tags))
        )
    return "\n\n".join(parts) + "\n" if parts else ""


def read_conll(path) -> list[Block]:
    return parse_conll(Path(path).read_text(encoding="utf-8"))


def read_weights(path) -> list[float]:
    """Read the weight sidecar: one positive number per non-blank line."""
    weights: list[float] = []
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").split("\n"), start=1
    ):
        if not line.strip():
            continue
        try:
            value = float(line)
        except ValueError:
            raise ValueError(f"line {lineno}: not a number: {line!r}") from None
        if value <= 0:
            raise ValueError(f"line {lineno}: weights must be positive, got {value}")
        weights.append(value)
    return weights


Run = tuple[int, int, str]


def strict_runs(tags) -> list[Run]:
    """Entity runs from a valid BIO sequence; raises MalformedTags otherwise."""
    runs: list[Run] = []
    open_class: str | None = None
    start = -1
    for i, tag in enumerate(tags):
        if tag == "O":
            if open_class is not None:
                runs.append((start, i - 1, open_class))
                open_class = None
        elif tag.startswith("B-") and len(tag) > 2:
            if open_class is not None:
                runs.append((start, i - 1, open_class))
            open_class = tag[2:]
            start = i
        elif tag.startswith("I-") and len(tag) > 2:
            if open_class != tag[2:]:
                raise MalformedTags(f"position {i}: {tag} does not continue a run")
        else:
            raise MalformedTags(f"position {i}: unknown tag {tag!r}")
    if open_class is not None:
        runs.append((start, len(tags) - 1, open_class))
    return runs


def tolerant_runs(tags) -> list[Run]:
    """Entity runs from possibly-malformed tags, skipping broken annotations.

    An I- tag that does not continue a same-class run starts a poisoned run
    that is never emitted (further same-class I- tags extend the poison, a
    B- tag starts fresh).  Tag strings that are neither B-, I-, nor O are
    treated as O.
    """
    runs: list[Run] = []
    open_class: str | None = None
    start = -1
    broken = False
    for i, tag in enumerate(tags):
        if tag.startswith("B-") and len(tag) > 2:
            if open_class is not None and not broken:
                runs.append((start, i - 1, open_class))
            open_class = tag[2:]
            start = i
            broken = False
        elif tag.startswith("I-") and len(tag) > 2:
            if open_class != tag[2:]:
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
        runs.append((start, len(tags) - 1, open_class))
    return runs
