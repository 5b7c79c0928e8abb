"""A small transformer encoder with a token-classification head.

Trained from scratch: piece and position embeddings feed a stack of
standard encoder layers, and a linear head emits one logit row per piece.
"""
from __future__ import annotations

import torch
from torch import nn


class TinyEncoder(nn.Module):
    def __init__(
        self,
        vocab_size: int,
        num_tags: int,
        hidden_size: int = 64,
        layers: int = 2,
        heads: int = 4,
        feedforward: int = 128,
        dropout: float = 0.1,
        max_positions: int = 144,
        pad_id: int = 0,
    ) -> None:
        super().__init__()
        self.pad_id = pad_id
        self.max_positions = max_positions
        self.token_embedding = nn.Embedding(vocab_size, hidden_size, padding_idx=pad_id)
        self.position_embedding = nn.Embedding(max_positions, hidden_size)
        self.dropout = nn.Dropout(dropout)
        layer = nn.TransformerEncoderLayer(
            d_model=hidden_size,
            nhead=heads,
            dim_feedforward=feedforward,
            dropout=dropout,
            batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(
            layer, num_layers=layers, enable_nested_tensor=False
        )
        self.head = nn.Linear(hidden_size, num_tags)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """ids: (batch, pieces) int64; returns logits (batch, pieces, tags)."""
        positions = torch.arange(ids.shape[1], device=ids.device)
        hidden = self.token_embedding(ids) + self.position_embedding(positions)
        hidden = self.dropout(hidden)
        padding_mask = ids == self.pad_id
        hidden = self.encoder(hidden, src_key_padding_mask=padding_mask)
        return self.head(hidden)
