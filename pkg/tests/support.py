"""Shared test helpers: independent oracles and hypothesis strategies.

Oracles here are deliberately written from scratch (simple, slow, obviously
correct) so that expected values never come from the code under test.
"""
from __future__ import annotations

import random
import string

from hypothesis import strategies as st

from nergen.schema import Annotation, NerSample, detokenize

WORD_CHARS = string.ascii_letters + "0123456789" + "àéüñØß"
PUNCT_CHARS = ".,!?;:()-'\"%$"

words = st.text(alphabet=WORD_CHARS, min_size=1, max_size=8)
puncts = st.sampled_from(list(PUNCT_CHARS))
token_lists = st.lists(st.one_of(words, puncts), min_size=1, max_size=20)


def count_overlapping_occurrences(sentence: str, span: str, before: int) -> int:
    """Number of match starts of span strictly before position `before`."""
    return sum(
        1
        for i in range(before)
        if sentence.startswith(span, i)
    )


def build_sample(tokens: list[str], runs: list[tuple[int, int, str]]) -> NerSample:
    """Assemble a canonical sample from token runs, with an independent
    occurrence-index computation (a literal startswith scan)."""
    sentence = detokenize(tokens)
    # recompute token offsets by walking the detokenized sentence
    offsets = []
    pos = 0
    for tok in tokens:
        idx = sentence.index(tok, pos)
        offsets.append((idx, idx + len(tok)))
        pos = idx + len(tok)
    anns = []
    for first, last, cls in runs:
        s, e = offsets[first][0], offsets[last][1]
        span = sentence[s:e]
        occ = count_overlapping_occurrences(sentence, span, s)
        anns.append(Annotation(span, cls, occ))
    return NerSample(sentence, tuple(anns))


@st.composite
def samples_with_entities(draw, classes=("person", "location", "organization")):
    """Canonical-spacing samples whose entities sit on token boundaries."""
    tokens = draw(token_lists)
    n = len(tokens)
    n_runs = draw(st.integers(min_value=0, max_value=min(3, n)))
    starts = draw(
        st.lists(
            st.integers(min_value=0, max_value=n - 1),
            min_size=n_runs,
            max_size=n_runs,
            unique=True,
        )
    )
    runs = []
    covered: set[int] = set()
    for s in sorted(starts):
        if s in covered:
            continue
        max_len = 1
        while s + max_len - 1 < n - 1 and s + max_len not in covered and max_len < 3:
            max_len += 1
        length = draw(st.integers(min_value=1, max_value=max_len))
        e = s + length - 1
        covered.update(range(s, e + 1))
        runs.append((s, e, draw(st.sampled_from(list(classes)))))
    return build_sample(tokens, runs)


def random_sample(rng: random.Random, classes=("person", "location")) -> NerSample:
    """Plain-random analogue of samples_with_entities for bulk loops."""
    n = rng.randint(1, 16)
    tokens = []
    for _ in range(n):
        if rng.random() < 0.2:
            tokens.append(rng.choice(PUNCT_CHARS))
        else:
            k = rng.randint(1, 7)
            tokens.append("".join(rng.choice(WORD_CHARS) for _ in range(k)))
    runs = []
    covered: set[int] = set()
    for _ in range(rng.randint(0, 3)):
        s = rng.randrange(n)
        if s in covered:
            continue
        length = rng.randint(1, 3)
        e = min(s + length - 1, n - 1)
        while e > s and e in covered:
            e -= 1
        if any(i in covered for i in range(s, e + 1)):
            continue
        covered.update(range(s, e + 1))
        runs.append((s, e, rng.choice(list(classes))))
    runs.sort()
    return build_sample(tokens, runs)
