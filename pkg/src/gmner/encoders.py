"""Trainable toy text and region encoders.

The toy encoders stand in for pretrained backbones. An adapter for a
pretrained subword text encoder must return one row per word (first-subword
pooling) so that spans index words; a pretrained vision adapter must return
``k`` region rows in input order, and the ungroundable row is prepended here.
"""

from __future__ import annotations

from typing import Dict, Iterable, List, Sequence

import torch
from torch import nn

from .attention import AttentionBlock
from .core import CandidateRegion, InvalidInputError

PAD, UNK = "<pad>", "<unk>"


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: List[str] = [PAD, UNK]
        self.stoi: Dict[str, int] = {PAD: 0, UNK: 1}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self.stoi.get(t, 1) for t in tokens]

    @classmethod
    def build(cls, examples) -> "Vocabulary":
        vocab = cls()
        for ex in examples:
            for t in ex.tokens:
                vocab.add(t)
        return vocab


class TextEncoder(nn.Module):
    """Embedding table plus an optional self-attention stack (no positional signal by default)."""

    def __init__(self, vocab_size: int, hidden: int, heads: int = 4, layers: int = 1,
                 max_positions: int = 0):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, hidden, padding_idx=0)
        nn.init.normal_(self.embed.weight, std=1.0)
        with torch.no_grad():
            self.embed.weight[0].zero_()
        self.positions = nn.Embedding(max_positions, hidden) if max_positions > 0 else None
        self.blocks = nn.ModuleList(AttentionBlock(hidden, heads) for _ in range(layers))

    def forward(self, token_ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if token_ids.shape[1] == 0:
            raise InvalidInputError("cannot encode an empty token sequence")
        x = self.embed(token_ids)
        if self.positions is not None:
            n = token_ids.shape[1]
            if n > self.positions.num_embeddings:
                raise InvalidInputError(f"sentence of {n} tokens exceeds {self.positions.num_embeddings} positions")
            x = x + self.positions(torch.arange(n, device=token_ids.device))[None]
        for block in self.blocks:
            x, _ = block(x, x, mask)
        return x


class RegionEncoder(nn.Module):
    """Projects raw region features to the hidden size and prepends the ungroundable row."""

    def __init__(self, feature_dim: int, hidden: int):
        super().__init__()
        self.feature_dim = feature_dim
        self.proj = nn.Linear(feature_dim, hidden)
        self.ungroundable = nn.Parameter(torch.randn(hidden))

    def encode_ungroundable(self, batch: int) -> torch.Tensor:
        return self.ungroundable.expand(batch, 1, -1)

    def forward(self, features: torch.Tensor, mask: torch.Tensor):
        """``features`` (B, k, raw) and ``mask`` (B, k) -> (B, k+1, h) and (B, k+1) mask."""
        if features.shape[-1] != self.feature_dim:
            raise InvalidInputError(f"region features have dim {features.shape[-1]}, expected {self.feature_dim}")
        b = features.shape[0]
        rows = torch.cat([self.encode_ungroundable(b), self.proj(features)], dim=1)
        full_mask = torch.cat([mask.new_ones(b, 1), mask], dim=1)
        return rows, full_mask


def freeze(module: nn.Module, flag: bool = True) -> None:
    """Suppress (or restore) gradient updates for every parameter of ``module``."""
    for p in module.parameters():
        p.requires_grad_(not flag)
        if flag:
            p.grad = None


def encode_text(tokens: Sequence[str], vocab: Vocabulary, encoder: TextEncoder) -> torch.Tensor:
    """Single-sentence convenience wrapper returning an (n, h) matrix."""
    if len(tokens) == 0:
        raise InvalidInputError("cannot encode an empty token sequence")
    ids = torch.tensor([vocab.encode(tokens)])
    mask = torch.ones_like(ids, dtype=torch.bool)
    return encoder(ids, mask)[0]


def encode_regions(regions: Sequence[CandidateRegion], encoder: RegionEncoder) -> torch.Tensor:
    """Single-image convenience wrapper returning a (k+1, h) matrix; row 0 is ungroundable."""
    if len(regions) == 0:
        raise InvalidInputError("at least one candidate region is required")
    dtype = encoder.proj.weight.dtype
    feats = torch.tensor([[r.feature for r in regions]], dtype=dtype)
    mask = torch.ones(1, len(regions), dtype=torch.bool)
    rows, _ = encoder(feats, mask)
    return rows[0]
