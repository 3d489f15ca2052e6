"""Training loop, evaluation, prediction, checkpoints and throughput measurement."""

from __future__ import annotations

import copy
import json
import logging
import math
import os
import pickle
import statistics
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch

from .config import RunConfig
from .core import Example, InvalidInputError
from .data import atomic_write_text
from .encoders import Vocabulary
from .heads import DecodedEntity, decode_bundle, region_box
from .metrics import MetricReport, ScoredPrediction, full_report, score
from .model import DTYPES, GMNERModel, PreparedExample, collate, prepare, training_loss

log = logging.getLogger(__name__)


class CheckpointError(RuntimeError):
    pass


def set_determinism(seed: int, deterministic: bool = True) -> None:
    torch.manual_seed(seed)
    if deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def build_model(config: RunConfig, vocab: Vocabulary) -> GMNERModel:
    torch.manual_seed(config.seed)
    model = GMNERModel(config, len(vocab))
    return model.to(DTYPES[config.dtype])


def warmup_linear(total_steps: int, warmup_ratio: float) -> Callable[[int], float]:
    """LR multiplier: linear warmup over the first ``warmup_ratio`` of steps, then linear decay to 0."""
    warmup = int(round(total_steps * warmup_ratio))

    def factor(step: int) -> float:
        if warmup and step < warmup:
            return (step + 1) / warmup
        return max(0.0, (total_steps - step) / max(1, total_steps - warmup))

    return factor


def batches(items: Sequence, batch_size: int, order: Optional[np.ndarray] = None):
    idx = np.arange(len(items)) if order is None else order
    for i in range(0, len(idx), batch_size):
        yield [items[j] for j in idx[i: i + batch_size]]


# --------------------------------------------------------------------------- checkpoints

def save_checkpoint(path, model: GMNERModel, vocab: Vocabulary, optimizer=None, epoch: int = 0,
                    rng: Optional[np.random.Generator] = None, extra: Optional[dict] = None) -> None:
    payload = {
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "config": model.config.to_dict(),
        "vocab": list(vocab.itos),
        "torch_rng": torch.get_rng_state(),
        "numpy_rng": json.dumps(rng.bit_generator.state) if rng is not None else None,
        "extra": json.dumps(extra or {}),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        torch.save(payload, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path, config: Optional[RunConfig] = None):
    """Returns ``(model, vocab, payload)``. A ``config`` that disagrees with the stored shapes is a load error."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except (OSError, RuntimeError, ValueError, pickle.UnpicklingError, EOFError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        stored = RunConfig.from_dict(payload["config"])
        vocab = Vocabulary(payload["vocab"][2:])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"checkpoint {path} is missing fields: {exc}") from exc
    model = build_model(config or stored, vocab)
    try:
        model.load_state_dict(payload["model"])
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint {path} does not match the configuration: {exc}") from exc
    model.eval()
    return model, vocab, payload


# --------------------------------------------------------------------------- inference

@torch.no_grad()
def predict_examples(model: GMNERModel, vocab: Vocabulary, examples: Sequence[Example],
                     batch_size: int = 64, prepared: Optional[List[PreparedExample]] = None) -> List[List[DecodedEntity]]:
    cfg = model.config
    model.eval()
    items = prepared if prepared is not None else prepare(examples, vocab, cfg.iou_threshold)
    out = []
    for chunk in batches(items, batch_size):
        batch = collate(chunk, cfg.region_feature_dim, DTYPES[cfg.dtype])
        out.extend(decode_bundle(model(batch), model.type_of, cfg.tau_c))
    return out


def to_scored(decoded: Sequence[DecodedEntity], example: Example) -> List[ScoredPrediction]:
    return [ScoredPrediction(d.start, d.end, d.type_id, region_box(d, example.regions), d.confidence) for d in decoded]


def evaluate(model: GMNERModel, vocab: Vocabulary, examples: Sequence[Example],
             prepared: Optional[List[PreparedExample]] = None):
    """Decode ``examples`` and score them; returns (report rows, decoded entities per example)."""
    decoded = predict_examples(model, vocab, examples, prepared=prepared)
    scored = [to_scored(d, ex) for d, ex in zip(decoded, examples)]
    rows = full_report(scored, [ex.gold for ex in examples], model.config.type_names)
    return rows, decoded


def gmner_f1(model, vocab, examples, prepared=None) -> float:
    decoded = predict_examples(model, vocab, examples, prepared=prepared)
    scored = [to_scored(d, ex) for d, ex in zip(decoded, examples)]
    return score(scored, [ex.gold for ex in examples], "GMNER").f1


def prediction_record(decoded: Sequence[DecodedEntity], example: Example, type_names) -> dict:
    ents = []
    for d in decoded:
        box = region_box(d, example.regions)
        ents.append({"start": d.start, "end": d.end, "type": type_names[d.type_id], "region_index": d.region_index,
                     "box": None if box is None else box.as_list(), "confidence": d.confidence})
    return {"entities": ents}


def write_predictions(path, decoded_sets, examples, type_names) -> None:
    lines = [json.dumps(prediction_record(d, ex, type_names)) for d, ex in zip(decoded_sets, examples)]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def report_dict(rows: Sequence[MetricReport]) -> dict:
    return {"rows": [r.to_dict() for r in rows]}


# --------------------------------------------------------------------------- training

@dataclass
class TrainResult:
    model: GMNERModel
    vocab: Vocabulary
    epoch_losses: List[float] = field(default_factory=list)
    dev_f1: List[float] = field(default_factory=list)
    best_f1: float = -1.0
    best_epoch: int = -1
    checkpoint: Optional[Path] = None
    seconds: float = 0.0


def train(config: RunConfig, train_set: Sequence[Example], dev_set: Sequence[Example],
          out_dir=None, vocab: Optional[Vocabulary] = None) -> TrainResult:
    """Minibatch Adam on the set loss; keeps the checkpoint with the best dev GMNER F1.

    The returned model carries the best epoch's weights. Encoder parameters are frozen for the first ``freeze_epochs`` epochs. With
    ``out_dir`` set, ``best.pt`` and ``history.json`` are written there.
    """
    config.validate()
    set_determinism(config.seed, config.deterministic)
    vocab = vocab or Vocabulary.build(train_set)
    train_items = prepare(train_set, vocab, config.iou_threshold, u=config.u)
    dev_items = prepare(dev_set, vocab, config.iou_threshold)
    model = build_model(config, vocab)
    params = [p for n, p in model.named_parameters() if not (n == "queries.entity_table" and not p.requires_grad)]
    optimizer = torch.optim.Adam(params, lr=config.lr)
    steps_per_epoch = math.ceil(len(train_items) / config.batch_size)
    sched = torch.optim.lr_scheduler.LambdaLR(optimizer, warmup_linear(steps_per_epoch * config.epochs, config.warmup_ratio))
    rng = np.random.default_rng(config.seed)
    result = TrainResult(model, vocab)
    ckpt = Path(out_dir) / "best.pt" if out_dir is not None else None
    start = time.perf_counter()
    dtype = DTYPES[config.dtype]
    best_state = None
    for epoch in range(config.epochs):
        model.freeze_encoders(epoch < config.freeze_epochs)
        model.train()
        total, count = 0.0, 0
        for chunk in batches(train_items, config.batch_size, rng.permutation(len(train_items))):
            batch = collate(chunk, config.region_feature_dim, dtype)
            loss, _, _ = training_loss(model, batch)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            if config.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_([p for p in params if p.grad is not None], config.grad_clip)
            optimizer.step()
            sched.step()
            total += float(loss.detach()) * len(chunk)
            count += len(chunk)
        epoch_loss = total / max(1, count)
        if not math.isfinite(epoch_loss):
            raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
        f1 = gmner_f1(model, vocab, dev_set, prepared=dev_items) if dev_set else 0.0
        result.epoch_losses.append(epoch_loss)
        result.dev_f1.append(f1)
        log.info("epoch %d loss %.4f dev GMNER F1 %.4f", epoch + 1, epoch_loss, f1)
        if f1 > result.best_f1:
            result.best_f1, result.best_epoch = f1, epoch
            best_state = copy.deepcopy(model.state_dict())
            if ckpt is not None:
                save_checkpoint(ckpt, model, vocab, optimizer, epoch + 1, rng, {"dev_f1": f1})
    result.seconds = time.perf_counter() - start
    if best_state is not None:
        model.load_state_dict(best_state)
    model.freeze_encoders(False)
    model.eval()
    if ckpt is not None:
        result.checkpoint = ckpt
        history = {"epoch_loss": result.epoch_losses, "dev_gmner_f1": result.dev_f1,
                   "best_epoch": result.best_epoch + 1, "best_dev_gmner_f1": result.best_f1,
                   "seconds": result.seconds}
        atomic_write_text(Path(out_dir) / "history.json", json.dumps(history, indent=2))
    return result


# --------------------------------------------------------------------------- throughput

@torch.no_grad()
def _timed_pass(model, items, batch_size, dtype) -> float:
    t0 = time.perf_counter()
    for chunk in batches(items, batch_size):
        batch = collate(chunk, model.config.region_feature_dim, dtype)
        decode_bundle(model(batch), model.type_of, model.config.tau_c)
    return time.perf_counter() - t0


def benchmark(model: GMNERModel, vocab: Vocabulary, examples: Sequence[Example], batch_size: int = 16,
              repeats: int = 3, warmup: int = 1) -> Dict:
    """Throughput of forward + decode. Warmup passes are excluded from the timings.

    When ``batch_size > 1`` the same measurement at batch size 1 is included
    and ``batching_gain`` is False if batching did not lower per-example latency.
    """
    if not examples:
        raise InvalidInputError("nothing to benchmark: the dataset is empty")
    model.eval()
    dtype = DTYPES[model.config.dtype]
    items = prepare(examples, vocab, model.config.iou_threshold)

    def measure(bs):
        for _ in range(warmup):
            _timed_pass(model, items, bs, dtype)
        times = [_timed_pass(model, items, bs, dtype) for _ in range(repeats)]
        per_ex = [t / len(items) for t in times]
        return {
            "batch_size": bs,
            "examples_per_sec": len(items) / statistics.mean(times),
            "mean_latency_ms": 1000 * statistics.mean(per_ex),
            "latency_std_ms": 1000 * (statistics.stdev(per_ex) if len(per_ex) > 1 else 0.0),
            "runs": len(times),
        }

    report = measure(batch_size)
    lengths = [len(ex.tokens) for ex in examples]
    ks = [len(ex.regions) for ex in examples]
    report.update({
        "examples": len(items), "u": model.config.u,
        "n_mean": statistics.mean(lengths), "n_max": max(lengths),
        "k_mean": statistics.mean(ks), "k_max": max(ks),
    })
    if batch_size > 1:
        single = measure(1)
        report["batch1_mean_latency_ms"] = single["mean_latency_ms"]
        report["batching_gain"] = report["mean_latency_ms"] < single["mean_latency_ms"]
    return report
