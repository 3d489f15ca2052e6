"""Query-guided fusion: queries mediate between text tokens and candidate regions.

Each layer runs, in order, query/text cross-attention, query-prefixed region
attention and the similarity-aware aggregator. No positional signal is ever
added to the queries, so the whole stack is equivariant to query permutations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from .attention import AttentionBlock, FeedForward, masked_softmax
from .core import ConfigError


@dataclass
class FusionState:
    queries: torch.Tensor  # (B, u, h)
    text: torch.Tensor  # (B, n, h)
    regions: torch.Tensor  # (B, k+1, h)
    text_mask: torch.Tensor  # (B, n) bool
    region_mask: torch.Tensor  # (B, k+1) bool

    def replace(self, **kw) -> "FusionState":
        return FusionState(**{**self.__dict__, **kw})


class QueryTextCrossAttention(nn.Module):
    """Queries attend over text; text then attends over the updated queries."""

    def __init__(self, hidden: int, heads: int, update_text: bool = True):
        super().__init__()
        self.query_block = AttentionBlock(hidden, heads)
        self.text_block = AttentionBlock(hidden, heads) if update_text else None
        self.last_weights = None

    def forward(self, state: FusionState) -> FusionState:
        hq, w = self.query_block(state.queries, state.text, state.text_mask)
        self.last_weights = w
        ht = state.text
        if self.text_block is not None:
            ht, _ = self.text_block(state.text, hq)
        return state.replace(queries=hq, text=ht)


class PrefixIntegration(nn.Module):
    """Region self-attention whose keys/values are prefixed with query projections.

    Single head, logits scaled by 1/sqrt(h). With ``use_prefix=False`` it is
    plain region self-attention (the prefix slots are removed, not zeroed).
    """

    def __init__(self, hidden: int):
        super().__init__()
        self.hidden = hidden
        self.wq = nn.Linear(hidden, hidden)
        self.wk = nn.Linear(hidden, hidden)
        self.wv = nn.Linear(hidden, hidden)
        # two isolated transforms, for the key prefix and the value prefix
        self.prefix_k = nn.Linear(hidden, hidden)
        self.prefix_v = nn.Linear(hidden, hidden)
        self.out = nn.Linear(hidden, hidden)
        self.norm1 = nn.LayerNorm(hidden)
        self.ffn = FeedForward(hidden)
        self.norm2 = nn.LayerNorm(hidden)
        self.last_weights = None

    def attend(self, state: FusionState, use_prefix: bool = True):
        hv = state.regions
        q, k, v = self.wq(hv), self.wk(hv), self.wv(hv)
        mask = state.region_mask
        if use_prefix:
            b, u = state.queries.shape[:2]
            k = torch.cat([self.prefix_k(state.queries), k], dim=1)
            v = torch.cat([self.prefix_v(state.queries), v], dim=1)
            mask = torch.cat([mask.new_ones(b, u), mask], dim=1)
        scores = torch.matmul(q, k.transpose(-1, -2)) / math.sqrt(self.hidden)
        weights = masked_softmax(scores, mask[:, None, :])
        return torch.matmul(weights, v), weights

    def forward(self, state: FusionState, use_prefix: bool = True) -> FusionState:
        pi, self.last_weights = self.attend(state, use_prefix)
        hv = self.norm1(state.regions + self.out(pi))
        hv = self.norm2(hv + self.ffn(hv))
        return state.replace(regions=hv)


class SimilarityAggregator(nn.Module):
    """Pools similarity-weighted text and region rows back into each query.

    Similarities are raw dot products normalized with a softmax per query;
    the update is ``tanh(Q W1 + lam_t * pooled_text + lam_v * pooled_regions) W2 + b``,
    added residually and layer-normalized.
    """

    def __init__(self, hidden: int, lambda_v: float = 0.5):
        super().__init__()
        if not 0.0 <= lambda_v <= 1.0:
            raise ConfigError(f"lambda_v must lie in [0, 1], got {lambda_v}")
        self.lambda_v = lambda_v
        self.w1 = nn.Linear(hidden, hidden, bias=False)
        self.w2 = nn.Linear(hidden, hidden)  # carries the bias term b
        self.norm = nn.LayerNorm(hidden)
        self.last_alpha = None

    @property
    def lambda_t(self) -> float:
        return 1.0 - self.lambda_v

    def pooled(self, state: FusionState):
        hq = state.queries
        alpha_t = masked_softmax(torch.matmul(hq, state.text.transpose(-1, -2)), state.text_mask[:, None, :])
        alpha_v = masked_softmax(torch.matmul(hq, state.regions.transpose(-1, -2)), state.region_mask[:, None, :])
        pooled = self.lambda_t * torch.matmul(alpha_t, state.text) + self.lambda_v * torch.matmul(alpha_v, state.regions)
        return pooled, alpha_t, alpha_v

    def forward(self, state: FusionState) -> FusionState:
        pooled, alpha_t, alpha_v = self.pooled(state)
        self.last_alpha = (alpha_t, alpha_v)
        update = self.w2(torch.tanh(self.w1(state.queries) + pooled))
        return state.replace(queries=self.norm(state.queries + update))


class QFNetLayer(nn.Module):
    def __init__(self, hidden: int, heads: int, lambda_v: float = 0.5, update_text: bool = True):
        super().__init__()
        self.cross = QueryTextCrossAttention(hidden, heads, update_text)
        self.prefix = PrefixIntegration(hidden)
        self.aggregate = SimilarityAggregator(hidden, lambda_v)

    def forward(self, state: FusionState, qct=True, qpi=True, sag=True, refine_regions=True) -> FusionState:
        if qct:
            state = self.cross(state)
        if refine_regions or qpi:
            state = self.prefix(state, use_prefix=qpi)
        if sag:
            state = self.aggregate(state)
        return state


class QFNet(nn.Module):
    """``layers`` stacked fusion layers with per-sublayer ablation switches.

    ``qpi=False`` keeps the region refinement but drops the query prefixes;
    ``refine_regions=False`` additionally skips the region stack entirely.
    """

    def __init__(self, hidden: int, heads: int = 4, layers: int = 3, lambda_v: float = 0.5,
                 qct: bool = True, qpi: bool = True, sag: bool = True, update_text: bool = True,
                 refine_regions: bool = True):
        super().__init__()
        if layers < 1:
            raise ConfigError(f"QFNet needs at least one layer, got {layers}")
        if hidden % heads:
            raise ConfigError(f"h={hidden} must be divisible by heads={heads}")
        self.qct, self.qpi, self.sag = qct, qpi, sag
        self.refine_regions = refine_regions
        self.layers = nn.ModuleList(QFNetLayer(hidden, heads, lambda_v, update_text) for _ in range(layers))

    def forward(self, state: FusionState) -> FusionState:
        for layer in self.layers:
            state = layer(state, self.qct, self.qpi, self.sag, self.refine_regions)
        return state


def run_qfnet(state: FusionState, net: QFNet, qct: Optional[bool] = None, qpi: Optional[bool] = None,
              sag: Optional[bool] = None) -> FusionState:
    """Run ``net`` with optional one-off ablation overrides."""
    saved = (net.qct, net.qpi, net.sag)
    net.qct = saved[0] if qct is None else qct
    net.qpi = saved[1] if qpi is None else qpi
    net.sag = saved[2] if sag is None else sag
    try:
        return net(state)
    finally:
        net.qct, net.qpi, net.sag = saved
