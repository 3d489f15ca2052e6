"""Correctness predicates and micro precision/recall/F1 for GMNER, MNER and EEG."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

from .core import BoundingBox, InvalidInputError, Quadruple, iou

TASKS = ("GMNER", "MNER", "EEG")
IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class ScoredPrediction:
    """A predicted entity with its region resolved to a box (None = ungroundable)."""

    start: int
    end: int
    type_id: int
    box: Optional[BoundingBox]
    confidence: float = 1.0


@dataclass
class MetricReport:
    task: str
    type: str
    precision: float
    recall: float
    f1: float
    correct: int
    predict: int
    gold: int

    def to_dict(self) -> dict:
        return asdict(self)


def span_correct(pred: ScoredPrediction, gold: Quadruple) -> bool:
    return pred.start == gold.start and pred.end == gold.end


def type_correct(pred: ScoredPrediction, gold: Quadruple) -> bool:
    return pred.type_id == gold.type_id


def region_correct(pred: ScoredPrediction, gold: Quadruple) -> bool:
    # strictly greater than the threshold: IoU of exactly 0.5 does not count
    if pred.box is None or gold.boxes is None:
        return pred.box is None and gold.boxes is None
    return max(iou(pred.box, g) for g in gold.boxes) > IOU_THRESHOLD


def correctness(pred: ScoredPrediction, gold: Quadruple, task: str = "GMNER") -> bool:
    if task == "GMNER":
        return span_correct(pred, gold) and type_correct(pred, gold) and region_correct(pred, gold)
    if task == "MNER":
        return span_correct(pred, gold) and type_correct(pred, gold)
    if task == "EEG":
        return span_correct(pred, gold) and region_correct(pred, gold)
    raise InvalidInputError(f"unknown task {task!r}; expected one of {TASKS}")


def prf(correct: int, predict: int, gold: int):
    precision = correct / predict if predict else 0.0
    recall = correct / gold if gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def count_correct(preds: Sequence[ScoredPrediction], golds: Sequence[Quadruple], task: str) -> int:
    """Greedy one-to-one pairing: predictions in descending confidence take the first free correct gold."""
    order = sorted(range(len(preds)), key=lambda i: -preds[i].confidence)
    taken = [False] * len(golds)
    hits = 0
    for i in order:
        for j, g in enumerate(golds):
            if not taken[j] and correctness(preds[i], g, task):
                taken[j] = True
                hits += 1
                break
    return hits


def score(predictions: Sequence[Sequence[ScoredPrediction]], golds: Sequence[Sequence[Quadruple]],
          task: str = "GMNER", type_name: str = "All") -> MetricReport:
    """Micro-averaged report over a corpus of aligned per-example lists."""
    if len(predictions) != len(golds):
        raise InvalidInputError(f"{len(predictions)} prediction lists for {len(golds)} gold lists")
    correct = sum(count_correct(p, g, task) for p, g in zip(predictions, golds))
    n_pred = sum(len(p) for p in predictions)
    n_gold = sum(len(g) for g in golds)
    precision, recall, f1 = prf(correct, n_pred, n_gold)
    return MetricReport(task, type_name, precision, recall, f1, correct, n_pred, n_gold)


def per_type_report(predictions, golds, type_names: Sequence[str], task: str = "GMNER") -> Dict[str, MetricReport]:
    """One report per type (predictions bucketed by predicted type, golds by gold type) plus ``All``."""
    out = {"All": score(predictions, golds, task)}
    for t, name in enumerate(type_names):
        p_t = [[x for x in p if x.type_id == t] for p in predictions]
        g_t = [[x for x in g if x.type_id == t] for g in golds]
        out[name] = score(p_t, g_t, task, name)
    return out


def full_report(predictions, golds, type_names: Sequence[str]) -> List[MetricReport]:
    """Rows for every task, overall and per type."""
    rows = []
    for task in TASKS:
        rows.extend(per_type_report(predictions, golds, type_names, task).values())
    return rows
