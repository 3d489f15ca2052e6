"""Small attention primitives with explicit key masks and optional key/value prefixes."""

from __future__ import annotations

import math
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn


def masked_softmax(scores: torch.Tensor, key_mask: Optional[torch.Tensor]) -> torch.Tensor:
    """Softmax over the last axis; ``key_mask`` is broadcastable, True = attendable."""
    if key_mask is not None:
        scores = scores.masked_fill(~key_mask, float("-inf"))
    return torch.softmax(scores, dim=-1)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention over (batch, length, h) tensors.

    ``prefix_k`` / ``prefix_v`` are extra key/value rows (already in key space)
    prepended before the projected keys and values; they are never masked.
    """

    def __init__(self, hidden: int, heads: int, scale: Optional[float] = None):
        super().__init__()
        if hidden % heads:
            raise ValueError(f"hidden size {hidden} not divisible by {heads} heads")
        self.hidden = hidden
        self.heads = heads
        self.head_dim = hidden // heads
        self.scale = scale if scale is not None else 1.0 / math.sqrt(self.head_dim)
        self.q_proj = nn.Linear(hidden, hidden)
        self.k_proj = nn.Linear(hidden, hidden)
        self.v_proj = nn.Linear(hidden, hidden)
        self.out_proj = nn.Linear(hidden, hidden)

    def _split(self, x):
        b, n, _ = x.shape
        return x.view(b, n, self.heads, self.head_dim).transpose(1, 2)

    def forward(self, query, key, value, key_mask=None, prefix_k=None, prefix_v=None):
        q = self._split(self.q_proj(query))
        k = self.k_proj(key)
        v = self.v_proj(value)
        if prefix_k is not None:
            k = torch.cat([prefix_k, k], dim=1)
            v = torch.cat([prefix_v, v], dim=1)
            if key_mask is not None:
                pad = key_mask.new_ones(key_mask.shape[0], prefix_k.shape[1])
                key_mask = torch.cat([pad, key_mask], dim=1)
        k, v = self._split(k), self._split(v)
        scores = torch.matmul(q, k.transpose(-1, -2)) * self.scale
        mask = None if key_mask is None else key_mask[:, None, None, :]
        weights = masked_softmax(scores, mask)
        out = torch.matmul(weights, v).transpose(1, 2).reshape(query.shape[0], query.shape[1], self.hidden)
        return self.out_proj(out), weights


class FeedForward(nn.Module):
    def __init__(self, hidden: int, mult: int = 2):
        super().__init__()
        self.fc1 = nn.Linear(hidden, hidden * mult)
        self.fc2 = nn.Linear(hidden * mult, hidden)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class AttentionBlock(nn.Module):
    """Post-norm transformer sublayer pair: attention + residual + LN, FFN + residual + LN."""

    def __init__(self, hidden: int, heads: int):
        super().__init__()
        self.attn = MultiHeadAttention(hidden, heads)
        self.norm1 = nn.LayerNorm(hidden)
        self.ffn = FeedForward(hidden)
        self.norm2 = nn.LayerNorm(hidden)

    def forward(self, x, context, context_mask=None):
        a, weights = self.attn(x, context, context, key_mask=context_mask)
        x = self.norm1(x + a)
        x = self.norm2(x + self.ffn(x))
        return x, weights
