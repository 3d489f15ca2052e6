"""Span boundary, candidate-region and existence heads, and decoding into entities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import torch
from torch import nn


@dataclass
class PredictionBundle:
    """Sigmoid outputs for one batch: start/end (B,u,n), region (B,u,k+1), existence (B,u)."""

    start: torch.Tensor
    end: torch.Tensor
    region: torch.Tensor
    exist: torch.Tensor
    text_mask: torch.Tensor
    region_mask: torch.Tensor

    def example(self, b: int) -> "ExampleBundle":
        n = int(self.text_mask[b].sum())
        k1 = int(self.region_mask[b].sum())
        return ExampleBundle(self.start[b, :, :n], self.end[b, :, :n], self.region[b, :, :k1], self.exist[b])


@dataclass
class ExampleBundle:
    """Unpadded matrices for a single example: P_s, P_e (u,n), P_r (u,k+1), P_c (u,)."""

    start: torch.Tensor
    end: torch.Tensor
    region: torch.Tensor
    exist: torch.Tensor

    def numpy(self):
        return tuple(x.detach().cpu().numpy() for x in (self.start, self.end, self.region, self.exist))


@dataclass(frozen=True)
class DecodedEntity:
    start: int
    end: int
    type_id: int
    region_index: int  # 0 = ungroundable
    confidence: float
    query: int

    @property
    def key(self):
        return (self.start, self.end, self.type_id, self.region_index)


class JointScorer(nn.Module):
    """sigmoid(ReLU(Q Wq + X Wx) w + c) for every (query, row) pair, one scalar per output head."""

    def __init__(self, hidden: int, outputs: int = 1):
        super().__init__()
        self.wq = nn.Linear(hidden, hidden, bias=False)
        self.wx = nn.Linear(hidden, hidden, bias=False)
        self.score = nn.ModuleList(nn.Linear(hidden, 1) for _ in range(outputs))

    def forward(self, hq, hx):
        joint = torch.relu(self.wq(hq).unsqueeze(2) + self.wx(hx).unsqueeze(1))  # (B,u,n,h)
        return [torch.sigmoid(s(joint).squeeze(-1)) for s in self.score]


class SpanHead(nn.Module):
    def __init__(self, hidden: int):
        super().__init__()
        self.scorer = JointScorer(hidden, outputs=2)

    def forward(self, hq, ht):
        ps, pe = self.scorer(hq, ht)
        return ps, pe


class RegionHead(nn.Module):
    def __init__(self, hidden: int):
        super().__init__()
        self.scorer = JointScorer(hidden, outputs=1)

    def forward(self, hq, hv):
        return self.scorer(hq, hv)[0]


class ClassHead(nn.Module):
    """Existence probability per query from the query and probability-pooled evidence.

    ``P_s @ H_T`` is a probability-weighted sum of token rows (not normalized);
    padded positions are zeroed by the masks.
    """

    def __init__(self, hidden: int):
        super().__init__()
        self.wq = nn.Linear(hidden, hidden, bias=False)
        self.score = nn.Linear(4 * hidden, 1)

    def forward(self, hq, ht, hv, ps, pe, pr, text_mask=None, region_mask=None):
        if text_mask is not None:
            tm = text_mask[:, None, :].to(ps.dtype)
            ps, pe = ps * tm, pe * tm
        if region_mask is not None:
            pr = pr * region_mask[:, None, :].to(pr.dtype)
        feats = torch.cat([self.wq(hq), ps @ ht, pe @ ht, pr @ hv], dim=-1)
        return torch.sigmoid(self.score(torch.relu(feats)).squeeze(-1))


def _first_argmax(row: np.ndarray) -> int:
    return int(np.argmax(row))  # numpy returns the first maximal index


def decode(ps, pe, pr, pc, type_of: Sequence[int], threshold: float = 0.5) -> List[DecodedEntity]:
    """Read one entity per confident query, then collapse duplicates.

    The end index is searched only at positions >= the chosen start. Among
    identical (start, end, type, region) tuples the most confident is kept.
    Results are sorted by descending confidence, then query index.
    """
    ps, pe, pr, pc = (x.detach().cpu().numpy() if torch.is_tensor(x) else np.asarray(x) for x in (ps, pe, pr, pc))
    best = {}
    for q in range(len(pc)):
        conf = float(pc[q])
        if conf < threshold:
            continue
        s = _first_argmax(ps[q])
        e = s + _first_argmax(pe[q, s:])
        ent = DecodedEntity(s, e, int(type_of[q]), _first_argmax(pr[q]), conf, q)
        kept = best.get(ent.key)
        if kept is None or ent.confidence > kept.confidence:
            best[ent.key] = ent
    return sorted(best.values(), key=lambda d: (-d.confidence, d.query))


def decode_bundle(bundle: PredictionBundle, type_of, threshold: float = 0.5) -> List[List[DecodedEntity]]:
    out = []
    for b in range(bundle.exist.shape[0]):
        ex = bundle.example(b)
        out.append(decode(ex.start, ex.end, ex.region, ex.exist, type_of, threshold))
    return out


def region_box(entity: DecodedEntity, regions) -> Optional[object]:
    """Box of the chosen candidate, or None for the ungroundable slot."""
    if entity.region_index == 0:
        return None
    return regions[entity.region_index - 1].box
