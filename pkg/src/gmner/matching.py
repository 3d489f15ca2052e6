"""Bipartite matching between padded gold sets and query predictions, and the set loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from .assignment import Assignment, solve_hungarian
from .core import CapacityError, ConfigError, Quadruple

EPS = 1e-7
TYPE_PENALTY = 1e4


@dataclass(frozen=True)
class GoldTarget:
    """A gold entity in training form: span, type and multi-hot region target over ``k + 1`` slots."""

    start: int
    end: int
    type_id: int
    region: np.ndarray

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.region > 0)

    @classmethod
    def from_quadruple(cls, q: Quadruple, region: np.ndarray) -> "GoldTarget":
        return cls(q.start, q.end, q.type_id, np.asarray(region, dtype=np.float64))


# ``None`` entries stand for the null label
PaddedGold = List[Optional[GoldTarget]]


def pad_gold(gold: Sequence[GoldTarget], u: int, mode: str = "null") -> PaddedGold:
    """Pad the gold list to ``u`` entries.

    ``mode="null"`` appends null labels. ``mode="replicate"`` cycles the gold
    entries to fill the slots instead (kept only for comparison runs; an empty
    gold set still pads with nulls).
    """
    m = len(gold)
    if m > u:
        raise CapacityError(f"{m} gold entities but only {u} queries; increase u")
    if mode == "null" or m == 0:
        return list(gold) + [None] * (u - m)
    if mode == "replicate":
        return [gold[i % m] for i in range(u)]
    raise ConfigError(f"unknown padding mode {mode!r}")


TARGET_FORMS = ("balanced", "gold_only")


def _check_form(form: str) -> None:
    if form not in TARGET_FORMS:
        raise ConfigError(f"unknown target form {form!r}; expected one of {TARGET_FORMS}")


def target_nll(p, target, valid=None, form: str = "balanced"):
    """Negative log-likelihood of a 0/1 ``target`` under independent sigmoid outputs ``p`` (last axis).

    ``gold_only`` keeps just the positive slots: the mean of -log p over them.
    ``balanced`` averages that with the mean of -log(1 - p) over the valid
    negative slots, so non-gold positions are pushed down as well; with no
    negatives it equals ``gold_only``. Both give ln 2 when every p is 0.5.
    Works on numpy arrays and torch tensors alike.
    """
    _check_form(form)
    if torch.is_tensor(p):
        p = p.clamp(EPS, 1 - EPS)
        log = torch.log
    else:
        p = np.clip(p, EPS, 1 - EPS)
        log = np.log
    pos = (-log(p) * target).sum(-1) / target.sum(-1)
    if form == "gold_only":
        return pos
    neg_mask = 1 - target if valid is None else valid * (1 - target)
    n_neg = neg_mask.sum(-1)
    if torch.is_tensor(p):
        neg = (-log(1 - p) * neg_mask).sum(-1) / n_neg.clamp(min=1)
        return torch.where(n_neg > 0, 0.5 * (pos + neg), pos)
    neg = (-log(1 - p) * neg_mask).sum(-1) / np.maximum(n_neg, 1)
    return np.where(n_neg > 0, 0.5 * (pos + neg), pos)


def _one_hot(index: int, size: int) -> np.ndarray:
    out = np.zeros(size)
    out[index] = 1.0
    return out


def pair_cost(entry: Optional[GoldTarget], q: int, ps, pe, pr, pc, type_of: Sequence[int],
              mode: str = "prob", penalty: float = TYPE_PENALTY, form: str = "balanced") -> float:
    """Matching cost of padded entry ``entry`` against query ``q`` for one example.

    ``mode="prob"`` uses raw probabilities; ``mode="nll"`` uses exactly the
    per-pair terms of :func:`set_loss` (with target form ``form``) so that the
    assignment minimizes the loss.
    """
    ps, pe, pr, pc = (np.asarray(x, dtype=np.float64) for x in (ps, pe, pr, pc))
    if mode == "prob":
        if entry is None:
            return 0.0
        if type_of[q] != entry.type_id:
            return penalty
        return -float(pc[q] + ps[q, entry.start] + pe[q, entry.end] + pr[q, entry.active].mean())
    if mode == "nll":
        c = np.clip(pc[q], EPS, 1 - EPS)
        if entry is None:
            return float(-np.log(1 - c))
        n = ps.shape[1]
        nll = (-np.log(c) + target_nll(ps[q], _one_hot(entry.start, n), form=form)
               + target_nll(pe[q], _one_hot(entry.end, n), form=form)
               + target_nll(pr[q], entry.region[: pr.shape[1]], form=form))
        return float(nll) + (penalty if type_of[q] != entry.type_id else 0.0)
    raise ConfigError(f"unknown cost mode {mode!r}")


def cost_matrix(padded: PaddedGold, ps, pe, pr, pc, type_of, mode: str = "prob",
                penalty: float = TYPE_PENALTY, form: str = "balanced") -> np.ndarray:
    """Vectorized :func:`pair_cost` over all (entry, query) pairs; rows are padded entries."""
    ps, pe, pr, pc = (np.asarray(x, dtype=np.float64) for x in (ps, pe, pr, pc))
    type_of = np.asarray(type_of)
    u = len(padded)
    if pc.shape[0] != u:
        raise ConfigError(f"padded gold has {u} entries but bundle has {pc.shape[0]} queries")
    if mode not in ("prob", "nll"):
        raise ConfigError(f"unknown cost mode {mode!r}")
    out = np.zeros((u, u))
    n = ps.shape[1]
    lc = np.clip(pc, EPS, 1 - EPS)
    for i, g in enumerate(padded):
        if g is None:
            if mode == "nll":
                out[i] = -np.log(1 - lc)
            continue
        if mode == "prob":
            row = -(pc + ps[:, g.start] + pe[:, g.end] + pr[:, g.active].mean(axis=1))
        else:
            row = (-np.log(lc) + target_nll(ps, _one_hot(g.start, n), form=form)
                   + target_nll(pe, _one_hot(g.end, n), form=form)
                   + target_nll(pr, g.region[: pr.shape[1]], form=form))
        mismatch = type_of != g.type_id
        # prob mode: a flat penalty; nll mode: penalty on top of the loss terms
        out[i] = np.where(mismatch, penalty, row) if mode == "prob" else row + np.where(mismatch, penalty, 0.0)
    return out


def match(padded: PaddedGold, ps, pe, pr, pc, type_of, mode: str = "prob", solver=solve_hungarian,
          form: str = "balanced") -> Assignment:
    def _np(x):
        return x.detach().cpu().numpy() if torch.is_tensor(x) else x

    return solver(cost_matrix(padded, _np(ps), _np(pe), _np(pr), _np(pc), type_of, mode=mode, form=form))


def pair_losses(padded: PaddedGold, ps, pe, pr, pc, perm: Sequence[int], form: str = "balanced"):
    """Per-position loss terms under assignment ``perm`` (a differentiable 1-D tensor)."""
    terms = []
    n = ps.shape[1]
    for i, g in enumerate(padded):
        q = perm[i]
        c = pc[q].clamp(EPS, 1 - EPS)
        if g is None:
            terms.append(-torch.log(1 - c))
        else:
            def t(x):
                return torch.as_tensor(x, dtype=ps.dtype)
            terms.append(-torch.log(c)
                         + target_nll(ps[q], t(_one_hot(g.start, n)), form=form)
                         + target_nll(pe[q], t(_one_hot(g.end, n)), form=form)
                         + target_nll(pr[q], t(g.region[: pr.shape[1]]), form=form))
    if not terms:
        return pc.new_zeros(0)
    return torch.stack(terms)


def set_loss(padded: PaddedGold, ps, pe, pr, pc, assignment: Assignment, form: str = "balanced") -> torch.Tensor:
    """Bipartite matching loss summed over all ``u`` padded positions.

    The assignment is a constant here; gradients flow only through the
    probabilities.
    """
    return pair_losses(padded, ps, pe, pr, pc, assignment.perm, form).sum()


def fixed_order_assignment(padded: PaddedGold, type_of: Sequence[int]) -> Tuple[PaddedGold, Assignment]:
    """Deterministic, order-based assignment used when bipartite matching is ablated.

    Gold entries are sorted by (start, end, type). Each takes the lowest-index
    free query of its own type (any free query if its type is exhausted); null
    entries then fill the remaining queries in index order. With a single-type
    schema this is exactly the identity assignment over the sorted gold list.
    """
    u = len(padded)
    golds = sorted((g for g in padded if g is not None), key=lambda g: (g.start, g.end, g.type_id))
    free = list(range(u))
    perm = []
    for g in golds:
        q = next((q for q in free if type_of[q] == g.type_id), free[0])
        free.remove(q)
        perm.append(q)
    perm.extend(free)
    # no cost matrix is involved, so the recorded cost is 0
    return golds + [None] * (u - len(golds)), Assignment(tuple(perm), 0.0)


def fixed_order_loss(padded: PaddedGold, ps, pe, pr, pc, type_of: Sequence[int],
                     form: str = "balanced") -> torch.Tensor:
    ordered, assignment = fixed_order_assignment(padded, type_of)
    return pair_losses(ordered, ps, pe, pr, pc, assignment.perm, form).sum()
