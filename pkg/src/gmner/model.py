"""Full network assembly, batch collation and the batched training objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .assignment import Assignment, solve_hungarian
from .config import RunConfig
from .core import CapacityError, Example, TypeSchema, region_target
from .encoders import RegionEncoder, TextEncoder, Vocabulary, freeze
from .fusion import FusionState, QFNet
from .heads import ClassHead, PredictionBundle, RegionHead, SpanHead
from .matching import EPS, GoldTarget, PaddedGold, cost_matrix, fixed_order_assignment, pad_gold, target_nll
from .queryset import PromptEncoder, QuerySet

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class PreparedExample:
    token_ids: List[int]
    features: np.ndarray  # (k, raw)
    targets: List[GoldTarget]
    source: Example


def prepare(examples: Sequence[Example], vocab: Vocabulary, iou_threshold: float = 0.5,
            u: Optional[int] = None) -> List[PreparedExample]:
    """Tokenize and precompute region targets; with ``u`` set, enforce the query capacity."""
    out = []
    for i, ex in enumerate(examples):
        if u is not None and len(ex.gold) > u:
            raise CapacityError(f"example {i} has {len(ex.gold)} entities but u={u}; increase u")
        feats = np.array([r.feature for r in ex.regions], dtype=np.float64).reshape(len(ex.regions), -1)
        targets = [GoldTarget.from_quadruple(g, region_target(g, ex.regions, iou_threshold)) for g in ex.gold]
        out.append(PreparedExample(vocab.encode(ex.tokens), feats, targets, ex))
    return out


@dataclass
class Batch:
    token_ids: torch.Tensor  # (B, n) long
    text_mask: torch.Tensor  # (B, n) bool
    features: torch.Tensor  # (B, k, raw)
    feature_mask: torch.Tensor  # (B, k) bool
    targets: List[List[GoldTarget]]
    examples: List[Example]

    def __len__(self):
        return self.token_ids.shape[0]


def collate(items: Sequence[PreparedExample], feature_dim: int, dtype=torch.float32) -> Batch:
    b = len(items)
    n = max(len(it.token_ids) for it in items)
    k = max(1, max(len(it.features) for it in items))
    ids = torch.zeros(b, n, dtype=torch.long)
    tmask = torch.zeros(b, n, dtype=torch.bool)
    feats = torch.zeros(b, k, feature_dim, dtype=dtype)
    fmask = torch.zeros(b, k, dtype=torch.bool)
    for i, it in enumerate(items):
        ids[i, : len(it.token_ids)] = torch.tensor(it.token_ids)
        tmask[i, : len(it.token_ids)] = True
        if len(it.features):
            feats[i, : len(it.features)] = torch.as_tensor(it.features, dtype=dtype)
            fmask[i, : len(it.features)] = True
    return Batch(ids, tmask, feats, fmask, [it.targets for it in items], [it.source for it in items])


class GMNERModel(nn.Module):
    def __init__(self, config: RunConfig, vocab_size: int, prompt_encoder: Optional[PromptEncoder] = None):
        super().__init__()
        self.config = config
        h = config.h
        self.schema = TypeSchema.from_template(config.type_names, config.prompt)
        self.text_encoder = TextEncoder(vocab_size, h, config.heads, config.text_layers, config.text_positions)
        self.region_encoder = RegionEncoder(config.region_feature_dim, h)
        self.queries = QuerySet(self.schema, config.u, h, config.query_mode, config.query_layout,
                                prompt_encoder, config.prompt)
        qf = config.qfnet
        self.qfnet = QFNet(h, config.heads, qf.layers, config.lambda_v, qf.qct, qf.qpi, qf.sag, qf.update_text)
        self.span_head = SpanHead(h)
        self.region_head = RegionHead(h)
        self.class_head = ClassHead(h)

    @property
    def type_of(self) -> np.ndarray:
        return self.queries.type_of

    def encoder_modules(self) -> List[nn.Module]:
        return [self.text_encoder, self.region_encoder]

    def freeze_encoders(self, flag: bool = True) -> None:
        for m in self.encoder_modules():
            freeze(m, flag)

    def encode(self, batch: Batch, queries: Optional[torch.Tensor] = None) -> FusionState:
        text = self.text_encoder(batch.token_ids, batch.text_mask)
        regions, region_mask = self.region_encoder(batch.features, batch.feature_mask)
        if queries is None:
            queries = self.queries()
        hq = queries.unsqueeze(0).expand(len(batch), -1, -1)
        return FusionState(hq, text, regions, batch.text_mask, region_mask)

    def predict(self, state: FusionState) -> PredictionBundle:
        """Fusion + heads from an initial state (queries may be arbitrarily permuted)."""
        state = self.qfnet(state)
        ps, pe = self.span_head(state.queries, state.text)
        pr = self.region_head(state.queries, state.regions)
        pc = self.class_head(state.queries, state.text, state.regions, ps, pe, pr, state.text_mask, state.region_mask)
        return PredictionBundle(ps, pe, pr, pc, state.text_mask, state.region_mask)

    def forward(self, batch: Batch, queries: Optional[torch.Tensor] = None) -> PredictionBundle:
        return self.predict(self.encode(batch, queries))


def batch_assignments(bundle: PredictionBundle, batch: Batch, type_of, config: RunConfig,
                      solver=solve_hungarian):
    """Per example: the padded gold list (in loss order) and its query assignment."""
    plans = []
    for b, targets in enumerate(batch.targets):
        padded = pad_gold(targets, config.u, config.padding)
        if config.bml:
            ex = bundle.example(b)
            cost = cost_matrix(padded, *ex.numpy(), type_of, mode=config.match_cost, form=config.target_form)
            plans.append((padded, solver(cost)))
        else:
            plans.append(fixed_order_assignment(padded, type_of))
    return plans


def batched_set_loss(bundle: PredictionBundle, plans: Sequence[tuple], form: str = "balanced") -> torch.Tensor:
    """Mean over examples of the per-example loss summed over all ``u`` positions.

    Equal to averaging :func:`gmner.matching.set_loss` over the batch, but
    gathered in a handful of tensor ops. Padded text and region slots are
    excluded from the negatives.
    """
    null_b, null_q, gb, gq, gs, ge, rows = [], [], [], [], [], [], []
    k1 = bundle.region.shape[2]
    for b, (padded, assignment) in enumerate(plans):
        for i, g in enumerate(padded):
            q = assignment.perm[i]
            if g is None:
                null_b.append(b)
                null_q.append(q)
            else:
                gb.append(b)
                gq.append(q)
                gs.append(g.start)
                ge.append(g.end)
                row = np.zeros(k1)
                row[: len(g.region)] = g.region
                rows.append(row)
    pc, ps, pe, pr = bundle.exist, bundle.start, bundle.end, bundle.region
    total = pc.new_zeros(())
    if null_b:
        total = total - torch.log(1 - pc[null_b, null_q].clamp(EPS, 1 - EPS)).sum()
    if gb:
        n = ps.shape[2]
        idx = torch.arange(n)
        start_t = (idx[None, :] == torch.as_tensor(gs)[:, None]).to(ps.dtype)
        end_t = (idx[None, :] == torch.as_tensor(ge)[:, None]).to(ps.dtype)
        text_valid = bundle.text_mask[gb].to(ps.dtype)
        region_t = torch.as_tensor(np.stack(rows), dtype=pr.dtype)
        region_valid = bundle.region_mask[gb].to(pr.dtype)
        total = total + (-torch.log(pc[gb, gq].clamp(EPS, 1 - EPS))
                         + target_nll(ps[gb, gq], start_t, text_valid, form)
                         + target_nll(pe[gb, gq], end_t, text_valid, form)
                         + target_nll(pr[gb, gq], region_t, region_valid, form)).sum()
    return total / len(plans)


def training_loss(model: GMNERModel, batch: Batch, solver=solve_hungarian):
    bundle = model(batch)
    plans = batch_assignments(bundle, batch, model.type_of, model.config, solver)
    return batched_set_loss(bundle, plans, model.config.target_form), bundle, plans
