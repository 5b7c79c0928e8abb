"""Training and prediction on CoNLL corpora with a loss-weight sidecar.

train() fine-tunes the scratch encoder on a CoNLL file, honoring per-block
weights either by scaling each block's loss or by physically replicating
blocks; predict_and_score() tags a test file, writes the predictions as
CoNLL, and scores them against the file's gold tags.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
import random
import warnings
from dataclasses import dataclass
from pathlib import Path

import torch
from torch.nn import functional as F

from .conll import Block, format_conll, read_conll, read_weights
from .encoding import IGNORE_INDEX, EncodedExample, Vocab, encode_block
from .model import TinyEncoder
from .scoring import Scores, micro

WEIGHT_MODES = ("loss-weighted", "replicated")
MODELS = ("tiny-scratch",)


class TagSetMismatch(ValueError):
    """The tag set of a file is unusable or not closed over the trained set."""


class TruncationOverflow(UserWarning):
    """An input exceeded the maximum piece length and was truncated."""


@dataclass(frozen=True)
class TrainConfig:
    model: str = "tiny-scratch"
    learning_rate: float = 4e-5
    epochs: int = 16
    batch_size: int = 24
    weight_decay: float = 1e-4
    warmup_steps: int = 200
    max_length: int = 144
    demo_weight_mode: str = "loss-weighted"
    seed: int = 0
    hidden_size: int = 64
    layers: int = 2
    heads: int = 4
    feedforward: int = 128
    dropout: float = 0.1

    def __post_init__(self) -> None:
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; choose from {MODELS}")
        if self.demo_weight_mode not in WEIGHT_MODES:
            raise ValueError(
                f"demo_weight_mode must be one of {WEIGHT_MODES},"
                f" got {self.demo_weight_mode!r}"
            )
        positive = {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "max_length": self.max_length,
            "hidden_size": self.hidden_size,
            "layers": self.layers,
            "heads": self.heads,
            "feedforward": self.feedforward,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        for name, value in (
            ("weight_decay", self.weight_decay),
            ("warmup_steps", self.warmup_steps),
            ("dropout", self.dropout),
        ):
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")
        if self.hidden_size % self.heads:
            raise ValueError("hidden_size must be divisible by heads")


@dataclass
class TrainResult:
    model: TinyEncoder
    vocab: Vocab
    tags: tuple[str, ...]
    config: TrainConfig
    epoch_losses: list[float]
    log: dict
    model_path: Path
    log_path: Path


def weighted_loss(
    logits: torch.Tensor, labels: torch.Tensor, weights: torch.Tensor
) -> torch.Tensor:
    """Mean over samples of (weight x that sample's mean labeled-token loss).

    A sample's contribution scales linearly with its weight: weight 5 adds
    exactly five times what the same sample adds at weight 1.
    """
    batch, pieces, classes = logits.shape
    flat = F.cross_entropy(
        logits.reshape(-1, classes),
        labels.reshape(-1),
        reduction="none",
        ignore_index=IGNORE_INDEX,
    ).reshape(batch, pieces)
    mask = labels != IGNORE_INDEX
    counts = mask.sum(dim=1).clamp(min=1)
    per_sample = (flat * mask).sum(dim=1) / counts
    return (weights * per_sample).mean()


def _lr_factor(step: int, warmup: int, total: int) -> float:
    if warmup > 0 and step < warmup:
        return (step + 1) / warmup
    if total <= warmup:
        return 1.0
    return max(0.0, (total - step) / (total - warmup))


def _collate(
    examples: list[EncodedExample], pad_id: int
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    width = max(len(ex.ids) for ex in examples)
    ids = torch.full((len(examples), width), pad_id, dtype=torch.long)
    labels = torch.full((len(examples), width), IGNORE_INDEX, dtype=torch.long)
    for i, ex in enumerate(examples):
        ids[i, : len(ex.ids)] = torch.tensor(ex.ids, dtype=torch.long)
        labels[i, : len(ex.labels)] = torch.tensor(ex.labels, dtype=torch.long)
    weights = torch.tensor([ex.weight for ex in examples], dtype=torch.float)
    return ids, labels, weights


def _apply_weight_mode(
    blocks: list[Block], weights: list[float], mode: str
) -> tuple[list[Block], list[float]]:
    if mode == "loss-weighted":
        return blocks, weights
    replicated: list[Block] = []
    for block, weight in zip(blocks, weights):
        copies = int(round(weight))
        if copies < 1:
            raise ValueError(
                f"replicated mode needs weights that round to >= 1, got {weight}"
            )
        replicated.extend([block] * copies)
    return replicated, [1.0] * len(replicated)


def _encode_corpus(
    blocks: list[Block],
    weights: list[float],
    vocab: Vocab,
    tag_ids: dict[str, int],
    max_length: int,
) -> tuple[list[EncodedExample], int, int]:
    examples = []
    overflowed = truncated_words = 0
    for block, weight in zip(blocks, weights):
        ex = encode_block(
            block.tokens,
            [tag_ids[t] for t in block.tags],
            vocab,
            max_length,
            weight,
        )
        overflowed += ex.overflow
        truncated_words += ex.truncated_words
        examples.append(ex)
    if overflowed:
        warnings.warn(
            f"{overflowed} block(s) exceeded max_length and were truncated",
            TruncationOverflow,
            stacklevel=3,
        )
    return examples, overflowed, truncated_words


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def train(
    train_path, weights_path, config: TrainConfig, out_dir
) -> TrainResult:
    """Train on a CoNLL file; returns the model plus saved artifact paths."""
    blocks = read_conll(train_path)
    if not blocks:
        raise TagSetMismatch(f"training file has no samples: {train_path}")
    if weights_path is not None:
        weights = read_weights(weights_path)
        if len(weights) != len(blocks):
            raise ValueError(
                f"{len(weights)} weights for {len(blocks)} blocks"
                f" in {weights_path}"
            )
    else:
        weights = [1.0] * len(blocks)
    blocks, weights = _apply_weight_mode(blocks, weights, config.demo_weight_mode)

    tags = tuple(sorted({tag for block in blocks for tag in block.tags}))
    tag_ids = {tag: i for i, tag in enumerate(tags)}
    vocab = Vocab.from_blocks(blocks)
    examples, overflowed, truncated_words = _encode_corpus(
        blocks, weights, vocab, tag_ids, config.max_length
    )

    torch.manual_seed(config.seed)
    model = TinyEncoder(
        vocab_size=len(vocab),
        num_tags=len(tags),
        hidden_size=config.hidden_size,
        layers=config.layers,
        heads=config.heads,
        feedforward=config.feedforward,
        dropout=config.dropout,
        max_positions=config.max_length,
        pad_id=vocab.pad_id,
    )
    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=config.learning_rate,
        weight_decay=config.weight_decay,
    )
    batches_per_epoch = math.ceil(len(examples) / config.batch_size)
    total_steps = config.epochs * batches_per_epoch
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer,
        lambda step: _lr_factor(step, config.warmup_steps, total_steps),
    )

    order_rng = random.Random(config.seed)
    model.train()
    epoch_losses: list[float] = []
    for _ in range(config.epochs):
        indices = list(range(len(examples)))
        order_rng.shuffle(indices)
        batch_losses: list[float] = []
        for start in range(0, len(indices), config.batch_size):
            batch = [examples[i] for i in indices[start : start + config.batch_size]]
            ids, labels, batch_weights = _collate(batch, vocab.pad_id)
            optimizer.zero_grad()
            loss = weighted_loss(model(ids), labels, batch_weights)
            loss.backward()
            optimizer.step()
            scheduler.step()
            batch_losses.append(loss.item())
        epoch_losses.append(sum(batch_losses) / len(batch_losses))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_path = out_dir / "model.pt"
    torch.save(
        {
            "state_dict": model.state_dict(),
            "vocab": list(vocab.pieces),
            "tags": list(tags),
            "config": dataclasses.asdict(config),
        },
        model_path,
    )
    log = {
        "model": config.model,
        "demo_weight_mode": config.demo_weight_mode,
        "blocks": len(blocks),
        "tags": list(tags),
        "vocab_size": len(vocab),
        "seed": config.seed,
        "learning_rate": config.learning_rate,
        "warmup_steps": config.warmup_steps,
        "steps": total_steps,
        "truncated_blocks": overflowed,
        "truncated_words": truncated_words,
        "epoch_losses": epoch_losses,
        "final_loss": epoch_losses[-1],
    }
    log_path = out_dir / "training_log.json"
    _atomic_write(log_path, json.dumps(log, indent=2, sort_keys=True) + "\n")
    return TrainResult(
        model, vocab, tags, config, epoch_losses, log, model_path, log_path
    )


def load_model(path) -> TrainResult:
    """Rebuild a TrainResult (without the log) from a saved model artifact."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    config = TrainConfig(**payload["config"])
    vocab = Vocab(payload["vocab"])
    tags = tuple(payload["tags"])
    model = TinyEncoder(
        vocab_size=len(vocab),
        num_tags=len(tags),
        hidden_size=config.hidden_size,
        layers=config.layers,
        heads=config.heads,
        feedforward=config.feedforward,
        dropout=config.dropout,
        max_positions=config.max_length,
        pad_id=vocab.pad_id,
    )
    model.load_state_dict(payload["state_dict"])
    return TrainResult(
        model, vocab, tags, config, [], {}, Path(path), Path(path)
    )


def predict_tags(result: TrainResult, blocks: list[Block]) -> list[Block]:
    """Tag blocks with the trained model; truncated words get O."""
    dummy_ids = {tag: 0 for block in blocks for tag in block.tags}
    examples, _, _ = _encode_corpus(
        blocks,
        [1.0] * len(blocks),
        result.vocab,
        dummy_ids,  # labels unused at prediction time
        result.config.max_length,
    )
    model = result.model
    model.eval()
    predicted: list[Block] = []
    batch_size = result.config.batch_size
    with torch.no_grad():
        for start in range(0, len(examples), batch_size):
            batch = examples[start : start + batch_size]
            ids, _, _ = _collate(batch, result.vocab.pad_id)
            best = model(ids).argmax(dim=-1)
            for row, ex, block in zip(
                best, batch, blocks[start : start + len(batch)]
            ):
                tags = tuple(
                    result.tags[int(row[pos])] if pos >= 0 else "O"
                    for pos in ex.word_positions
                )
                predicted.append(Block(block.tokens, tags))
    return predicted


@dataclass(frozen=True)
class ScoreResult:
    scores: Scores
    predictions_path: Path
    scores_path: Path


def predict_and_score(result: TrainResult, test_path, out_dir) -> ScoreResult:
    """Tag a gold CoNLL file, write predictions and scores, return the scores."""
    gold = read_conll(test_path)
    trained = set(result.tags)
    unseen = sorted(
        {tag for block in gold for tag in block.tags if tag not in trained}
    )
    if unseen:
        raise TagSetMismatch(
            f"{test_path} uses tags outside the trained set: {', '.join(unseen)}"
        )
    predicted = predict_tags(result, gold)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    predictions_path = out_dir / "predictions.conll"
    _atomic_write(predictions_path, format_conll(predicted))
    scores = micro(predicted, gold, tolerant_predictions=True)
    scores_path = out_dir / "scores.json"
    _atomic_write(
        scores_path, json.dumps(scores.as_obj(), indent=2, sort_keys=True) + "\n"
    )
    return ScoreResult(scores, predictions_path, scores_path)
