"""Parsing model completions back into structured data.

The generation format pairs a sentence line with an entity list::

    Sentence: Bob is born in Athens.
    Named Entities: [Bob (person), Athens (location)]

Block grammar: a block starts at a line whose first non-space content is
optional numbering ("1.", "2)") followed by "Sentence:" (case-insensitive)
and runs until the next such line.  Text before the first block (prose
preambles) is ignored.  Code-fence lines are stripped first.

Entity items are "span (type)" separated by commas.  Items are split only at
"), " boundaries and the type is the final parenthesized group, so spans may
contain commas and parentheses ("Washington, D.C. (location)" works).  The
listed type of an item may be any text; unknown types survive parsing and are
rejected by validation, keeping the filter-not-repair contract visible in the
reject log.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from .correction_types import DROP, KEEP, REVISE_SPAN, REVISE_TYPE, ParsedAction
from .schema import (
    Annotation,
    NerSample,
    Reject,
    RejectReason,
    TaskSpec,
    resolve_occurrences,
    validate,
)

logger = logging.getLogger(__name__)

_BLOCK_START = re.compile(
    r"^[^\S\n]*(?:\d+\s*[.)]\s*)?[\"'*_]*sentence[\"'*_]*\s*:",
    re.IGNORECASE | re.MULTILINE,
)
_ENTITY_LABEL = re.compile(r"named\s+entities[\"'*_]*\s*:", re.IGNORECASE)
_FENCE_LINE = re.compile(r"^\s*```[\w-]*\s*$", re.MULTILINE)
_ITEM = re.compile(r"(?s)^\s*(.+?)\s*\(([^()]*)\)\s*[.;]?\s*$")
_EMPTY_LIST_WORDS = frozenset({"", "none", "n/a", "-", "nil"})


@dataclass(frozen=True)
class RejectedBlock:
    raw: str
    reason: RejectReason
    detail: str = ""


@dataclass(frozen=True)
class ParseOutcome:
    """Partition of a completion into accepted samples and rejected blocks.

    ``annotation_ranges`` parallels ``samples``: for every annotation the
    character range of its "span (type)" item inside the original completion
    text, used downstream to align completion-token log probabilities.
    """

    samples: tuple[NerSample, ...]
    annotation_ranges: tuple[tuple[tuple[int, int], ...], ...]
    rejects: tuple[RejectedBlock, ...]
    block_count: int

    def __post_init__(self) -> None:
        if len(self.samples) + len(self.rejects) != self.block_count:
            raise ValueError("samples and rejects must partition the blocks")
        if len(self.annotation_ranges) != len(self.samples):
            raise ValueError("annotation_ranges must parallel samples")


def _strip_fences(text: str) -> str:
    """Blank out code-fence lines, preserving every other char position."""
    return _FENCE_LINE.sub(lambda m: " " * len(m.group(0)), text)


def _strip_quotes(text: str) -> str:
    t = text.strip()
    for a, b in (('"', '"'), ("'", "'"), ("“", "”"), ("‘", "’")):
        if len(t) >= 2 and t.startswith(a) and t.endswith(b):
            return t[1:-1].strip()
    return t


def _split_blocks(text: str) -> list[tuple[int, str]]:
    starts = [m.start() for m in _BLOCK_START.finditer(text)]
    blocks = []
    for i, s in enumerate(starts):
        e = starts[i + 1] if i + 1 < len(starts) else len(text)
        blocks.append((s, text[s:e]))
    return blocks


def _split_items(content: str, base: int) -> list[tuple[str, int, int]]:
    """Split an entity list on "), " boundaries, keeping absolute offsets."""
    items: list[tuple[str, int, int]] = []

    def push(start: int, end: int) -> None:
        chunk = content[start:end]
        lead = len(chunk) - len(chunk.lstrip())
        trail = len(chunk) - len(chunk.rstrip())
        if chunk.strip():
            items.append(
                (chunk.strip(), base + start + lead, base + end - trail)
            )

    start = 0
    i = 0
    while i < len(content):
        if content[i] == ")":
            j = i + 1
            while j < len(content) and content[j] in " \t\n":
                j += 1
            if j < len(content) and content[j] == ",":
                push(start, i + 1)
                start = j + 1
                i = j + 1
                continue
        i += 1
    push(start, len(content))
    return items


@dataclass
class _Block:
    raw: str
    sentence: str = ""
    items: list[tuple[str, str, tuple[int, int]]] = field(default_factory=list)
    failure: str = ""


def _parse_block(block_text: str, block_start: int, classes) -> _Block:
    out = _Block(raw=block_text)
    label = _BLOCK_START.match(block_text)
    after_label = label.end()
    entity_match = _ENTITY_LABEL.search(block_text, after_label)
    sentence_end = entity_match.start() if entity_match else len(block_text)
    sentence_part = block_text[after_label:sentence_end]
    # a bold "**Sentence:**" label leaves its closing marker on this side
    sentence_part = sentence_part.split("\n", 1)[0].lstrip("*_ \t")
    out.sentence = _strip_quotes(sentence_part)
    if not out.sentence:
        out.failure = "empty sentence"
        return out
    if entity_match is None:
        out.failure = "missing entity list"
        return out
    rest = block_text[entity_match.end():]
    rest_base = block_start + entity_match.end()
    first = re.search(r"[^\s*_]", rest)
    if first is None:
        return out  # bare label reads as an empty list
    if rest[first.start()] == "[":
        close = rest.find("]", first.start() + 1)
        if close < 0:
            out.failure = "unterminated entity list"
            return out
        content = rest[first.start() + 1 : close]
        content_base = rest_base + first.start() + 1
    else:
        line_end = rest.find("\n", first.start())
        if line_end < 0:
            line_end = len(rest)
        content = rest[first.start() : line_end]
        content_base = rest_base + first.start()
    if content.strip().lower() in _EMPTY_LIST_WORDS:
        return out
    canonical = {name.lower(): name for name in classes}
    for item_text, s, e in _split_items(content, content_base):
        m = _ITEM.match(item_text)
        if m is None:
            out.failure = f"malformed entity item {item_text!r}"
            return out
        span = _strip_quotes(m.group(1))
        raw_type = m.group(2).strip()
        class_name = canonical.get(raw_type.lower(), raw_type)
        if not span or not class_name:
            out.failure = f"malformed entity item {item_text!r}"
            return out
        out.items.append((span, class_name, (s, e)))
    return out


def normalize(
    sentence: str, items
) -> tuple[tuple[Annotation, ...], tuple[tuple[int, int], ...]]:
    """Canonical annotation list from raw (span, class, range) items.

    A span listed fewer times than it occurs is expanded to cover every
    occurrence; conflicting types for one span collapse to the first-listed
    type; annotations come out sorted by character offset with occurrence
    indices assigned left to right.  Extra mentions beyond the occurrence
    count are kept (validation rejects them).  Idempotent.
    """
    by_span: dict[str, dict] = {}
    for span, class_name, rng in items:
        entry = by_span.setdefault(span, {"class": class_name, "ranges": []})
        entry["ranges"].append(rng)
    annotated: list[tuple[Annotation, tuple[int, int]]] = []
    for span, entry in by_span.items():
        occs = resolve_occurrences(sentence, span)
        m = len(entry["ranges"])
        count = max(m, len(occs))
        for occurrence in range(count):
            rng = entry["ranges"][min(occurrence, m - 1)]
            annotated.append(
                (Annotation(span, entry["class"], occurrence), rng)
            )

    def sort_key(pair):
        ann, _ = pair
        occs = resolve_occurrences(sentence, ann.span)
        if ann.occurrence < len(occs):
            s, e = occs[ann.occurrence]
            return (0, s, e, ann.span)
        return (1, ann.occurrence, 0, ann.span)

    annotated.sort(key=sort_key)
    if not annotated:
        return (), ()
    anns, ranges = zip(*annotated)
    return tuple(anns), tuple(ranges)


def parse_generation(text: str, spec: TaskSpec) -> ParseOutcome:
    """Partition a generation completion into valid samples and rejects.

    Every detected block lands in exactly one bucket.  Structural failures
    reject as Unparseable; structurally sound blocks go through
    :func:`normalize` and :func:`nergen.schema.validate`, and carry the
    validation reason when rejected.
    """
    clean = _strip_fences(text)
    samples: list[NerSample] = []
    ranges: list[tuple[tuple[int, int], ...]] = []
    rejects: list[RejectedBlock] = []
    blocks = _split_blocks(clean)
    for block_start, block_text in blocks:
        parsed = _parse_block(block_text, block_start, spec.class_names())
        if parsed.failure:
            rejects.append(
                RejectedBlock(block_text.strip(), RejectReason.UNPARSEABLE, parsed.failure)
            )
            continue
        sentence = parsed.sentence
        items = parsed.items
        if spec.lowercase_outputs:
            sentence = sentence.lower()
            items = [(s.lower(), c, r) for s, c, r in items]
        anns, ann_ranges = normalize(sentence, items)
        try:
            sample = NerSample(sentence, anns)
        except ValueError as exc:
            rejects.append(
                RejectedBlock(block_text.strip(), RejectReason.UNPARSEABLE, str(exc))
            )
            continue
        verdict = validate(sample, spec)
        if verdict is not None:
            rejects.append(
                RejectedBlock(block_text.strip(), verdict.reason, verdict.detail)
            )
            continue
        samples.append(sample)
        ranges.append(ann_ranges)
    return ParseOutcome(
        samples=tuple(samples),
        annotation_ranges=tuple(ranges),
        rejects=tuple(rejects),
        block_count=len(blocks),
    )


def count_raw_samples(text: str) -> int:
    """Blocks that parse structurally, before any validity or dedup check."""
    clean = _strip_fences(text)
    count = 0
    for block_start, block_text in _split_blocks(clean):
        if not _parse_block(block_text, block_start, ()).failure:
            count += 1
    return count


# ---------------------------------------------------------------------------
# Entity list completions


_NUMBERED = re.compile(r"^\s*(?:\d+\s*[.)]|[-*•])\s+(.*\S)\s*$")


def parse_entity_list(text: str) -> list[str]:
    """Entity names from a list completion.

    Handles numbered/bulleted lines, a single comma-separated line, or one
    plain name per line.  Enumeration markers and surrounding quotes are
    stripped; blank lines and "...:" preamble lines are skipped; duplicates
    collapse keeping first appearance.
    """
    clean = _strip_fences(text)
    lines = [l for l in clean.splitlines() if l.strip()]
    numbered = [m.group(1) for m in (_NUMBERED.match(l) for l in lines) if m]
    skipped = 0
    candidates: list[str]
    if numbered:
        candidates = numbered
        skipped = len(lines) - len(numbered)
    else:
        content = [l.strip() for l in lines if not l.strip().endswith(":")]
        skipped = len(lines) - len(content)
        if len(content) == 1 and "," in content[0]:
            candidates = content[0].split(",")
        else:
            candidates = content
    if skipped:
        logger.debug("parse_entity_list skipped %d non-entity lines", skipped)
    out: list[str] = []
    seen: set[str] = set()
    for cand in candidates:
        name = _strip_quotes(cand)
        if name and name not in seen:
            seen.add(name)
            out.append(name)
    return out


# ---------------------------------------------------------------------------
# Correction completions


@dataclass(frozen=True)
class CorrectionParse:
    """One action per batch item, plus which items needed the Keep fallback."""

    actions: tuple[ParsedAction, ...]
    invalid_indices: tuple[int, ...]


_SPAN_VERDICT = re.compile(
    r"(?:^|\b)(?:entity\s+)?span(?:\s+should\s+be|\s*[:=])\s*(.+)$", re.IGNORECASE
)
_TYPE_VERDICT = re.compile(
    r"(?:^|\b)(?:entity\s+)?type(?:\s+should\s+be|\s*[:=])\s*(.+)$", re.IGNORECASE
)
_DROP_VERDICT = re.compile(r"\b(?:drop|remove|delete|not a named entity)\b", re.IGNORECASE)
_KEEP_VERDICT = re.compile(r"^\W*(?:keep|correct|good|yes|ok(?:ay)?)\b", re.IGNORECASE)


def _parse_verdict(text: str) -> ParsedAction | None:
    body = text.strip()
    m = _SPAN_VERDICT.search(body)
    if m:
        value = _strip_quotes(m.group(1).rstrip("."))
        return ParsedAction(REVISE_SPAN, value) if value else None
    m = _TYPE_VERDICT.search(body)
    if m:
        value = _strip_quotes(m.group(1).rstrip("."))
        return ParsedAction(REVISE_TYPE, value) if value else None
    if _DROP_VERDICT.search(body):
        return ParsedAction(DROP)
    if _KEEP_VERDICT.match(body):
        return ParsedAction(KEEP)
    return None


def parse_correction_response(text: str, batch_size: int) -> CorrectionParse:
    """One verdict per numbered batch item, in item order.

    A missing or unintelligible verdict falls back to Keep and the item index
    (0-based) is reported in ``invalid_indices``.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    verdicts: dict[int, str] = {}
    for line in _strip_fences(text).splitlines():
        m = re.match(r"^\s*(\d+)\s*[.):]\s*(.+)$", line)
        if m:
            idx = int(m.group(1))
            if 1 <= idx <= batch_size and idx not in verdicts:
                verdicts[idx] = m.group(2)
    actions: list[ParsedAction] = []
    invalid: list[int] = []
    for i in range(1, batch_size + 1):
        parsed = _parse_verdict(verdicts[i]) if i in verdicts else None
        if parsed is None:
            actions.append(ParsedAction(KEEP))
            invalid.append(i - 1)
        else:
            actions.append(parsed)
    return CorrectionParse(tuple(actions), tuple(invalid))
