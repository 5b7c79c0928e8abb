"""Deterministic subword encoding for token-classification inputs.

Words split into fixed-width character pieces (continuations carry a ``##``
prefix), so multi-piece words exist without any external tokenizer model.
Only each word's first piece receives the word's label; continuation pieces
and special positions are masked with IGNORE_INDEX and contribute no loss.
"""
from __future__ import annotations

from dataclasses import dataclass

IGNORE_INDEX = -100
PIECE_LEN = 4
PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS = (PAD, UNK, CLS, SEP)


def word_pieces(word: str) -> list[str]:
    """Split a word into PIECE_LEN-character pieces, continuations ##-marked."""
    pieces = [word[:PIECE_LEN]]
    for start in range(PIECE_LEN, len(word), PIECE_LEN):
        pieces.append("##" + word[start : start + PIECE_LEN])
    return pieces


class Vocab:
    """Piece-to-id table; unknown pieces map to the UNK id."""

    def __init__(self, pieces) -> None:
        self.pieces = tuple(pieces)
        if self.pieces[: len(SPECIALS)] != SPECIALS:
            raise ValueError("vocabulary must start with the special pieces")
        self._ids = {piece: i for i, piece in enumerate(self.pieces)}
        if len(self._ids) != len(self.pieces):
            raise ValueError("duplicate pieces in vocabulary")

    @classmethod
    def from_blocks(cls, blocks) -> "Vocab":
        seen: set[str] = set()
        for block in blocks:
            for token in block.tokens:
                seen.update(word_pieces(token))
        return cls(SPECIALS + tuple(sorted(seen)))

    def id(self, piece: str) -> int:
        return self._ids.get(piece, self._ids[UNK])

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    @property
    def cls_id(self) -> int:
        return self._ids[CLS]

    @property
    def sep_id(self) -> int:
        return self._ids[SEP]

    def __len__(self) -> int:
        return len(self.pieces)


@dataclass(frozen=True)
class EncodedExample:
    """One block as model input.

    word_positions[w] is the piece index of word w's first piece, or -1 when
    truncation cut the word; labels carry the word's tag id there and
    IGNORE_INDEX everywhere else.
    """

    ids: tuple[int, ...]
    labels: tuple[int, ...]
    word_positions: tuple[int, ...]
    weight: float
    truncated_words: int
    overflow: bool


def encode_block(
    tokens, tag_ids, vocab: Vocab, max_length: int, weight: float = 1.0
) -> EncodedExample:
    """Encode one block, truncating the piece sequence to max_length."""
    ids = [vocab.cls_id]
    labels = [IGNORE_INDEX]
    word_positions: list[int] = []
    budget = max_length - 1  # seat reserved for the trailing separator
    truncated_words = 0
    full_length = 2  # leading and trailing special positions
    for token, tag_id in zip(tokens, tag_ids):
        pieces = word_pieces(token)
        full_length += len(pieces)
        first_position = len(ids) if len(ids) < budget else -1
        if first_position == -1:
            truncated_words += 1
            word_positions.append(-1)
            continue
        word_positions.append(first_position)
        for j, piece in enumerate(pieces):
            if len(ids) >= budget:
                break
            ids.append(vocab.id(piece))
            labels.append(tag_id if j == 0 else IGNORE_INDEX)
    ids.append(vocab.sep_id)
    labels.append(IGNORE_INDEX)
    return EncodedExample(
        tuple(ids),
        tuple(labels),
        tuple(word_positions),
        weight,
        truncated_words,
        full_length > max_length,
    )
