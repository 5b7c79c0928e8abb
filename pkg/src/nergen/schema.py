"""Core domain types for NER samples plus span resolution, BIO tagging and dedup.

A sample is a natural-language sentence together with annotations, where each
annotation names an entity span (a substring of the sentence), its entity
class, and which occurrence of the span it refers to when the same text
appears more than once.  Everything downstream (prompt rendering, parsing,
correction, export, evaluation) goes through these types.
"""
from __future__ import annotations

import enum
import unicodedata
from dataclasses import dataclass, field


class SpanAlignmentError(Exception):
    """An annotation span does not map cleanly onto token boundaries."""


class MalformedTagSequence(Exception):
    """A BIO tag sequence is structurally invalid (dangling I- tag, bad label)."""


class RejectReason(enum.Enum):
    UNPARSEABLE = "Unparseable"
    OVERLAPPING_SPANS = "OverlappingSpans"
    UNSEEN_TYPE = "UnseenType"
    SPAN_NOT_FOUND = "SpanNotFound"


@dataclass(frozen=True)
class Reject:
    """Validation verdict for a sample that cannot enter the dataset."""

    reason: RejectReason
    detail: str = ""


@dataclass(frozen=True)
class Annotation:
    """One entity mention: a span of text, its class, and its occurrence index.

    ``occurrence`` selects which occurrence of ``span`` in the sentence this
    annotation points at, counting non-overlapping matches left to right
    starting from 0.
    """

    span: str
    class_name: str
    occurrence: int = 0

    def __post_init__(self) -> None:
        if not self.span:
            raise ValueError("annotation span must be non-empty")
        if not self.class_name:
            raise ValueError("annotation class must be non-empty")
        if self.occurrence < 0:
            raise ValueError("occurrence index must be >= 0")


@dataclass(frozen=True)
class NerSample:
    """A sentence with zero or more entity annotations.

    The constructor is permissive: candidates straight out of a model response
    are represented as ``NerSample`` before they are checked.  Use
    :func:`validate` to decide whether a sample may enter a dataset.
    """

    sentence: str
    annotations: tuple[Annotation, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.annotations, tuple):
            object.__setattr__(self, "annotations", tuple(self.annotations))
        if not self.sentence.strip():
            raise ValueError("sentence must contain non-whitespace text")


@dataclass(frozen=True)
class EntityClass:
    name: str
    definition: str = ""

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise ValueError("entity class name must be non-empty")


@dataclass(frozen=True)
class TaskSpec:
    """Static description of one dataset-synthesis task.

    ``domain_description`` is the human phrase for what a sample is (for
    example "news articles").  ``demos`` seed the generation prompts and are
    exported into the final training set with elevated weight.
    """

    domain_description: str
    classes: tuple[EntityClass, ...]
    demos: tuple[NerSample, ...]
    include_negative_demo: bool = False
    lowercase_outputs: bool = False
    expected_entity_requirement: float = 1.5

    def __post_init__(self) -> None:
        if not isinstance(self.classes, tuple):
            object.__setattr__(self, "classes", tuple(self.classes))
        if not isinstance(self.demos, tuple):
            object.__setattr__(self, "demos", tuple(self.demos))
        if not self.domain_description.strip():
            raise ValueError("domain description must be non-empty")
        names = [c.name for c in self.classes]
        if not names:
            raise ValueError("at least one entity class is required")
        if len(set(names)) != len(names):
            raise ValueError("entity class names must be unique")
        if not 0 < len(self.demos) < 10:
            raise ValueError("between 1 and 9 demos are required")
        for demo in self.demos:
            verdict = validate(demo, self)
            if verdict is not None:
                raise ValueError(
                    f"demo {demo.sentence!r} is invalid: {verdict.reason.value} {verdict.detail}"
                )
        if self.include_negative_demo and not any(
            not d.annotations for d in self.demos
        ):
            raise ValueError(
                "include_negative_demo requires at least one demo without entities"
            )
        if self.expected_entity_requirement < 0:
            raise ValueError("expected entity requirement must be >= 0")

    def class_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.classes)


@dataclass(frozen=True)
class TokenizedSample:
    """Token/tag view of a sample in BIO scheme."""

    tokens: tuple[str, ...]
    tags: tuple[str, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.tokens, tuple):
            object.__setattr__(self, "tokens", tuple(self.tokens))
        if not isinstance(self.tags, tuple):
            object.__setattr__(self, "tags", tuple(self.tags))
        if len(self.tokens) != len(self.tags):
            raise ValueError("tokens and tags must have equal length")
        if any(not t for t in self.tokens):
            raise ValueError("tokens must be non-empty strings")


# ---------------------------------------------------------------------------
# Tokenization


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch)[0] in ("P", "S")


def tokenize_with_offsets(text: str) -> list[tuple[str, int, int]]:
    """Split on whitespace and punctuation, keeping character offsets.

    Each punctuation or symbol character becomes its own token, so "U.S.-based"
    yields U / . / S / . / - / based.  Whitespace never appears in a token.
    """
    out: list[tuple[str, int, int]] = []
    start = None
    for i, ch in enumerate(text):
        if ch.isspace():
            if start is not None:
                out.append((text[start:i], start, i))
                start = None
        elif _is_punct(ch):
            if start is not None:
                out.append((text[start:i], start, i))
                start = None
            out.append((ch, i, i + 1))
        else:
            if start is None:
                start = i
    if start is not None:
        out.append((text[start:], start, len(text)))
    return out


def tokenize(text: str) -> list[str]:
    return [tok for tok, _, _ in tokenize_with_offsets(text)]


# Spacing rules for detokenize.  Only readability is at stake: round-tripping
# through tokenize holds for any spacing because punctuation characters are
# always split off again, and word-word boundaries always get a space.
_NO_SPACE_BEFORE = set(".,;:!?%)]}>…”’»")
_NO_SPACE_AFTER = set("([{<“‘«$€£#")
_JOINERS = set("-'/’")


def detokenize_with_offsets(tokens) -> tuple[str, list[tuple[int, int]]]:
    """Join tokens with natural spacing, returning per-token char offsets."""
    pieces: list[str] = []
    offsets: list[tuple[int, int]] = []
    pos = 0
    quote_open = False
    prev: str | None = None
    for tok in tokens:
        space = True
        if prev is None:
            space = False
        elif tok in _JOINERS or prev in _JOINERS:
            space = False
        elif tok in _NO_SPACE_BEFORE:
            space = False
        elif prev in _NO_SPACE_AFTER:
            space = False
        elif prev == '"' and quote_open:
            # prev quote opened a quotation: hug the following token
            space = False
        elif tok == '"' and quote_open:
            # this quote closes a quotation: hug the preceding token
            space = False
        if tok == '"':
            quote_open = not quote_open
        if space:
            pieces.append(" ")
            pos += 1
        pieces.append(tok)
        offsets.append((pos, pos + len(tok)))
        pos += len(tok)
        prev = tok
    return "".join(pieces), offsets


def detokenize(tokens) -> str:
    return detokenize_with_offsets(tokens)[0]


# ---------------------------------------------------------------------------
# Span resolution


def resolve_occurrences(sentence: str, span: str) -> list[tuple[int, int]]:
    """Char ranges of every occurrence of span, ordered by start position.

    Every match start counts, so occurrence k is the k-th start position at
    which the span appears, scanning left to right.  For natural spans the
    matches are disjoint; self-overlapping repetitive text yields overlapping
    ranges, which validation then treats like any other overlap.
    """
    if not span:
        return []
    out = []
    pos = 0
    while True:
        idx = sentence.find(span, pos)
        if idx < 0:
            return out
        out.append((idx, idx + len(span)))
        pos = idx + 1


def resolve_annotation(sentence: str, ann: Annotation) -> tuple[int, int] | None:
    occs = resolve_occurrences(sentence, ann.span)
    if ann.occurrence < len(occs):
        return occs[ann.occurrence]
    return None


# ---------------------------------------------------------------------------
# Validation


def validate(sample: NerSample, spec: TaskSpec) -> Reject | None:
    """Return None if the sample may enter the dataset, else a Reject.

    Checks, in reporting priority: resolved spans must not overlap, every
    class must come from the task spec, and every (span, occurrence) must
    resolve inside the sentence.  The verdict does not depend on annotation
    order; only the reported reason could.
    """
    known = set(spec.class_names())
    unseen: str | None = None
    not_found: str | None = None
    resolved: list[tuple[int, int, Annotation]] = []
    for ann in sample.annotations:
        if ann.class_name not in known and unseen is None:
            unseen = ann.class_name
        rng = resolve_annotation(sample.sentence, ann)
        if rng is None:
            if not_found is None:
                not_found = ann.span
        else:
            resolved.append((rng[0], rng[1], ann))
    resolved.sort(key=lambda item: (item[0], item[1]))
    overlap: str | None = None
    for (s1, e1, a1), (s2, e2, a2) in zip(resolved, resolved[1:]):
        if s2 < e1:
            overlap = f"{a1.span!r} and {a2.span!r}"
            break
    if overlap is not None:
        return Reject(RejectReason.OVERLAPPING_SPANS, overlap)
    if unseen is not None:
        return Reject(RejectReason.UNSEEN_TYPE, unseen)
    if not_found is not None:
        return Reject(RejectReason.SPAN_NOT_FOUND, not_found)
    return None


def lowercased(sample: NerSample) -> NerSample:
    """Lowercase sentence and spans (offsets are re-derived downstream)."""
    return NerSample(
        sentence=sample.sentence.lower(),
        annotations=tuple(
            Annotation(a.span.lower(), a.class_name, a.occurrence)
            for a in sample.annotations
        ),
    )


def sorted_annotations(sample: NerSample) -> NerSample:
    """Order annotations by resolved character offset (unresolvable last)."""

    def key(ann: Annotation):
        rng = resolve_annotation(sample.sentence, ann)
        if rng is None:
            return (len(sample.sentence) + 1, 0, ann.span)
        return (rng[0], rng[1], ann.span)

    return NerSample(sample.sentence, tuple(sorted(sample.annotations, key=key)))


# ---------------------------------------------------------------------------
# BIO conversion


def to_bio(sample: NerSample) -> TokenizedSample:
    """Tokenize the sentence and tag annotated spans with B-/I- labels.

    The sample is expected to be valid for some task spec.  Raises
    SpanAlignmentError when an annotation does not start and end exactly on
    token boundaries (or cannot be resolved / collides with another tag).
    """
    toks = tokenize_with_offsets(sample.sentence)
    tags = ["O"] * len(toks)
    starts = {t[1]: i for i, t in enumerate(toks)}
    ends = {t[2]: i for i, t in enumerate(toks)}
    for ann in sample.annotations:
        rng = resolve_annotation(sample.sentence, ann)
        if rng is None:
            raise SpanAlignmentError(
                f"span {ann.span!r} occurrence {ann.occurrence} not found in sentence"
            )
        s, e = rng
        if s not in starts or e not in ends:
            raise SpanAlignmentError(
                f"span {ann.span!r} does not align to token boundaries"
            )
        first, last = starts[s], ends[e]
        if any(tags[i] != "O" for i in range(first, last + 1)):
            raise SpanAlignmentError(
                f"span {ann.span!r} overlaps an already-tagged span"
            )
        tags[first] = f"B-{ann.class_name}"
        for i in range(first + 1, last + 1):
            tags[i] = f"I-{ann.class_name}"
    return TokenizedSample(tuple(t[0] for t in toks), tuple(tags))


def entity_runs(tags) -> list[tuple[int, int, str]]:
    """Decode BIO tags into (first_token, last_token, class) runs.

    Raises MalformedTagSequence for labels outside O/B-x/I-x or for an I- tag
    not continuing a same-class run.
    """
    runs: list[tuple[int, int, str]] = []
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
            if open_class is None or tag[2:] != open_class:
                raise MalformedTagSequence(
                    f"I- tag at position {i} does not continue a {tag[2:]!r} span"
                )
        else:
            raise MalformedTagSequence(f"unrecognized tag {tag!r} at position {i}")
    if open_class is not None:
        runs.append((start, len(tags) - 1, open_class))
    return runs


def from_bio(ts: TokenizedSample) -> NerSample:
    """Rebuild a sample from tokens and BIO tags.

    The sentence is the naturally-spaced detokenization; each tag run becomes
    an annotation whose occurrence index is derived from the run's position.
    """
    sentence, offsets = detokenize_with_offsets(ts.tokens)
    annotations = []
    for first, last, class_name in entity_runs(ts.tags):
        s, e = offsets[first][0], offsets[last][1]
        span = sentence[s:e]
        occurrence = 0
        for os_, oe_ in resolve_occurrences(sentence, span):
            if os_ == s and oe_ == e:
                break
            occurrence += 1
        annotations.append(Annotation(span, class_name, occurrence))
    return NerSample(sentence, tuple(annotations))


# ---------------------------------------------------------------------------
# Dedup


@dataclass(frozen=True)
class DedupReport:
    kept: int
    duplicates_removed: int
    conflicts_removed: int


def _ws_normalize(text: str) -> str:
    return " ".join(text.split())


def _annotation_key(sample: NerSample) -> tuple:
    return tuple((a.span, a.class_name, a.occurrence) for a in sample.annotations)


def dedup_indices(samples) -> tuple[list[int], DedupReport]:
    """Like :func:`dedup`, but returns the indices of the kept samples."""
    order: list[str] = []
    groups: dict[str, list[int]] = {}
    for i, sample in enumerate(samples):
        key = _ws_normalize(sample.sentence)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(i)
    kept: list[int] = []
    duplicates = 0
    conflicts = 0
    for key in order:
        group = groups[key]
        distinct = {_annotation_key(samples[i]) for i in group}
        if len(distinct) == 1:
            kept.append(group[0])
            duplicates += len(group) - 1
        else:
            conflicts += len(group)
    return kept, DedupReport(len(kept), duplicates, conflicts)


def dedup(samples) -> tuple[list[NerSample], DedupReport]:
    """Collapse exact duplicates and drop conflicting re-annotations.

    Sentences are compared after whitespace normalization.  A sentence seen
    repeatedly with the same annotations keeps its first copy; a sentence seen
    with two or more distinct annotation sets is removed entirely.
    """
    kept, report = dedup_indices(samples)
    return [samples[i] for i in kept], report
