"""Property checks that do not need a trained model.

Each check returns a :class:`CheckResult`; :func:`run_selftest` runs them all
and prints a table. The Hungarian solver can be swapped out (``solver=``) so
that a deliberately broken solver can be shown to fail.
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np
import torch

from .assignment import brute_force_assignment, solve_hungarian
from .config import QFNetConfig, RunConfig
from .core import BoundingBox, CandidateRegion, Example, Quadruple
from .encoders import Vocabulary
from .heads import decode
from .matching import GoldTarget, fixed_order_loss, match, pad_gold, set_loss
from .metrics import ScoredPrediction, correctness, score
from .model import GMNERModel, batch_assignments, batched_set_loss, collate, prepare
from .queryset import query_types


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        result = fn(*args, **kwargs)
        result.seconds = time.perf_counter() - t0
        return result

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# --------------------------------------------------------------------------- random instances

def random_gold(rng, m: int, n: int, k1: int, p: int, per_type: Optional[int] = None) -> List[GoldTarget]:
    """``m`` random gold targets; ``per_type`` caps how many share a type."""
    counts = np.zeros(p, dtype=int)
    out = []
    for _ in range(m):
        s = int(rng.integers(n))
        e = int(rng.integers(s, n))
        region = np.zeros(k1)
        if k1 == 1 or rng.random() < 0.3:
            region[0] = 1.0
        else:
            size = int(rng.integers(1, min(3, k1)))
            region[rng.choice(np.arange(1, k1), size=size, replace=False)] = 1.0
        free = [t for t in range(p) if per_type is None or counts[t] < per_type]
        t = int(rng.choice(free))
        counts[t] += 1
        out.append(GoldTarget(s, e, t, region))
    return out


def random_bundle(rng, u: int, n: int, k1: int):
    """Random (P_s, P_e, P_r, P_c) as float64 tensors strictly inside (0, 1)."""
    def draw(*shape):
        return torch.as_tensor(rng.uniform(0.01, 0.99, shape), dtype=torch.float64)

    return draw(u, n), draw(u, n), draw(u, k1), draw(u)


def random_cost(rng, n: int, ties: bool) -> np.ndarray:
    if ties:
        return rng.integers(0, 3, size=(n, n)).astype(np.float64)
    return rng.uniform(0.0, 1.0, size=(n, n))


def random_example(rng, n: int, k: int, p: int, m: int, feature_dim: int, vocab_size: int = 8) -> Example:
    tokens = [f"t{int(rng.integers(vocab_size))}" for _ in range(n)]
    regions = []
    for _ in range(k):
        x, y = rng.uniform(0, 0.6, 2)
        regions.append(CandidateRegion(BoundingBox(x, y, x + 0.3, y + 0.3), tuple(rng.standard_normal(feature_dim))))
    gold = []
    for _ in range(m):
        s = int(rng.integers(n))
        e = int(rng.integers(s, n))
        boxes = (regions[int(rng.integers(k))].box,) if k and rng.random() < 0.6 else None
        gold.append(Quadruple(s, e, int(rng.integers(p)), boxes))
    return Example(tokens, regions, gold)


def small_config(**overrides) -> RunConfig:
    base = dict(h=8, u=4, heads=2, type_names=["A", "B"], region_feature_dim=5, qfnet=QFNetConfig(layers=1),
                dtype="float64", freeze_epochs=0)
    base.update(overrides)
    return RunConfig(**base).validate()


# --------------------------------------------------------------------------- checks

@_timed
def check_hungarian(count: int = 1000, sizes=range(2, 8), seed: int = 0, solver: Callable = solve_hungarian,
                    tie_fraction: float = 0.25) -> CheckResult:
    """Solver total equals the exhaustive minimum exactly on uniform and tied matrices."""
    rng = np.random.default_rng(seed)
    bad, total = 0, 0
    for n in sizes:
        n_ties = int(round(count * tie_fraction))
        for i in range(count + n_ties):
            cost = random_cost(rng, n, ties=i >= count)
            if solver(cost).cost != brute_force_assignment(cost).cost:
                bad += 1
            total += 1
    return CheckResult("hungarian_oracle", bad == 0, f"{total - bad}/{total} matrices match the exhaustive minimum")


@_timed
def check_loss_invariance(count: int = 200, u: int = 6, p: int = 3, n: int = 7, k1: int = 5, perms: int = 6,
                          seed: int = 1, solver: Callable = solve_hungarian, tol: float = 1e-9) -> CheckResult:
    """set_loss does not depend on the order in which gold entities are listed."""
    rng = np.random.default_rng(seed)
    type_of = query_types(u, p)
    worst = 0.0
    for _ in range(count):
        ps, pe, pr, pc = random_bundle(rng, u, n, k1)
        gold = random_gold(rng, int(rng.integers(0, u + 1)), n, k1, p, per_type=u // p)
        orders = [np.arange(len(gold)), np.arange(len(gold))[::-1]] + [rng.permutation(len(gold)) for _ in range(perms)]
        losses = []
        for order in orders:
            padded = pad_gold([gold[i] for i in order], u)
            a = match(padded, ps, pe, pr, pc, type_of, solver=solver)
            losses.append(float(set_loss(padded, ps, pe, pr, pc, a)))
        worst = max(worst, max(losses) - min(losses))
    return CheckResult("loss_permutation_invariance", worst <= tol, f"max spread {worst:.3g} (tol {tol:g})")


def adversarial_instance():
    """Two same-type queries; only the second one fits the gold entity."""
    ps = torch.tensor([[0.01, 0.99], [0.99, 0.01]], dtype=torch.float64)
    pr = torch.full((2, 1), 0.99, dtype=torch.float64)
    pc = torch.tensor([0.01, 0.99], dtype=torch.float64)
    padded = pad_gold([GoldTarget(0, 0, 0, np.array([1.0]))], 2)
    return padded, ps, ps.clone(), pr, pc, np.array([0, 0])


@_timed
def check_dominance(count: int = 200, u: int = 6, p: int = 3, n: int = 6, k1: int = 4, seed: int = 2,
                    solver: Callable = solve_hungarian) -> CheckResult:
    """Matched loss never exceeds the fixed-order loss; strictly lower on the adversarial case."""
    rng = np.random.default_rng(seed)
    type_of = query_types(u, p)
    violations = 0
    for _ in range(count):
        ps, pe, pr, pc = random_bundle(rng, u, n, k1)
        padded = pad_gold(random_gold(rng, int(rng.integers(0, u + 1)), n, k1, p, per_type=u // p), u)
        a = match(padded, ps, pe, pr, pc, type_of, mode="nll", solver=solver)
        if float(set_loss(padded, ps, pe, pr, pc, a)) > float(fixed_order_loss(padded, ps, pe, pr, pc, type_of)) + 1e-12:
            violations += 1
    padded, ps, pe, pr, pc, type_of = adversarial_instance()
    a = match(padded, ps, pe, pr, pc, type_of, mode="nll", solver=solver)
    matched = float(set_loss(padded, ps, pe, pr, pc, a))
    fixed = float(fixed_order_loss(padded, ps, pe, pr, pc, type_of))
    ok = violations == 0 and matched < fixed
    return CheckResult("optimality_dominance", ok,
                       f"{violations} violations in {count}; adversarial {matched:.3f} < {fixed:.3f}")


def gradient_errors(seed: int = 0, step: float = 1e-5) -> Dict[str, float]:
    """Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||) per parameter group.

    Float64, h=8, u=4, p=2, n=6, k=3, one fusion layer; the assignment is
    solved once at the base point and held fixed. Every scalar parameter is
    perturbed (central differences).
    """
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    cfg = small_config()
    ex = random_example(rng, n=6, k=3, p=2, m=2, feature_dim=cfg.region_feature_dim)
    vocab = Vocabulary.build([ex])
    model = GMNERModel(cfg, len(vocab)).double()
    batch = collate(prepare([ex], vocab, cfg.iou_threshold, u=cfg.u), cfg.region_feature_dim, torch.float64)
    with torch.no_grad():
        plans = batch_assignments(model(batch), batch, model.type_of, cfg)

    def loss_value():
        return batched_set_loss(model(batch), plans, cfg.target_form)

    model.zero_grad()
    loss_value().backward()
    groups: Dict[str, tuple] = {}
    with torch.no_grad():
        for name, param in model.named_parameters():
            if not param.requires_grad:
                continue
            analytic = param.grad.detach().clone().reshape(-1)
            numeric = torch.zeros_like(analytic)
            flat = param.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = loss_value().item()
                flat[i] = orig - step
                down = loss_value().item()
                flat[i] = orig
                numeric[i] = (up - down) / (2 * step)
            group = name.split(".")[0]
            a, b = groups.get(group, ([], []))
            groups[group] = (a + [analytic], b + [numeric])
    errors = {}
    for group, (a, b) in groups.items():
        a, b = torch.cat(a), torch.cat(b)
        denom = max(a.norm().item(), b.norm().item(), 1e-12)
        errors[group] = (a - b).norm().item() / denom
    return errors


@_timed
def check_gradients(seed: int = 0, tol: float = 1e-4) -> CheckResult:
    errors = gradient_errors(seed)
    worst = max(errors, key=errors.get)
    detail = f"max relative error {errors[worst]:.2e} ({worst}) over {len(errors)} groups"
    return CheckResult("gradient_check", errors[worst] < tol, detail)


def equivariance_trial(rng, cfg: RunConfig) -> bool:
    torch.manual_seed(int(rng.integers(2**31)))
    n, k = int(rng.integers(3, 9)), int(rng.integers(1, 5))
    ex = random_example(rng, n=n, k=k, p=cfg.p, m=1, feature_dim=cfg.region_feature_dim)
    vocab = Vocabulary.build([ex])
    model = GMNERModel(cfg, len(vocab)).double().eval()
    batch = collate(prepare([ex], vocab, cfg.iou_threshold), cfg.region_feature_dim, torch.float64)
    perm = rng.permutation(cfg.u)
    with torch.no_grad():
        queries = model.queries()
        base = model.predict(model.encode(batch, queries)).example(0)
        moved = model.predict(model.encode(batch, queries[torch.as_tensor(perm)])).example(0)
    # threshold halfway across the widest gap near the middle so that rounding cannot flip membership
    conf = np.sort(base.exist.numpy())
    mid = len(conf) // 2
    threshold = float((conf[mid - 1] + conf[mid]) / 2)
    a = decode(base.start, base.end, base.region, base.exist, model.type_of, threshold)
    b = decode(moved.start, moved.end, moved.region, moved.exist, model.type_of[perm], threshold)
    same_keys = sorted(d.key for d in a) == sorted(d.key for d in b)
    conf_a = {d.key: d.confidence for d in a}
    return same_keys and all(abs(conf_a[d.key] - d.confidence) <= 1e-9 for d in b) and len(a) > 0


@_timed
def check_equivariance(count: int = 100, seed: int = 3) -> CheckResult:
    """Permuting query rows together with their type labels leaves the decoded set unchanged."""
    rng = np.random.default_rng(seed)
    cfg = small_config(h=16, u=6, heads=2, type_names=["A", "B", "C"], qfnet=QFNetConfig(layers=2))
    ok = sum(equivariance_trial(rng, cfg) for _ in range(count))
    return CheckResult("query_permutation_equivariance", ok == count, f"{ok}/{count} identical decoded sets")


@_timed
def check_metrics() -> CheckResult:
    """Hand-built scoring fixtures."""
    b1, b2 = BoundingBox(0, 0, 2, 2), BoundingBox(5, 5, 6, 6)
    golds = [[Quadruple(0, 1, 0, (b1,)), Quadruple(3, 3, 1, None)],
             [Quadruple(2, 2, 0, None), Quadruple(4, 5, 2, (b2,))]]
    preds = [[ScoredPrediction(0, 1, 0, BoundingBox(0, 0, 2, 1.9)), ScoredPrediction(3, 3, 1, None)],
             [ScoredPrediction(2, 2, 1, None)]]
    r = score(preds, golds, "GMNER")
    counts_ok = (r.precision, r.recall) == (2 / 3, 1 / 2) and abs(r.f1 - 4 / 7) < 1e-15
    half = Quadruple(0, 0, 0, (BoundingBox(0, 0, 2, 1),))
    boundary_ok = not correctness(ScoredPrediction(0, 0, 0, BoundingBox(1, 0, 2, 1)), half, "GMNER")
    rng = np.random.default_rng(4)
    subsumed = True
    boxes = [b1, b2, BoundingBox(0, 0, 2, 1), BoundingBox(1, 0, 3, 2)]
    for _ in range(2000):
        s = int(rng.integers(3))
        g = Quadruple(s, s + int(rng.integers(2)), int(rng.integers(2)),
                      None if rng.random() < 0.3 else (boxes[int(rng.integers(4))],))
        s2 = int(rng.integers(3))
        pr = ScoredPrediction(s2, s2 + int(rng.integers(2)), int(rng.integers(2)),
                              None if rng.random() < 0.3 else boxes[int(rng.integers(4))])
        if correctness(pr, g, "GMNER") and not (correctness(pr, g, "MNER") and correctness(pr, g, "EEG")):
            subsumed = False
    ok = counts_ok and boundary_ok and subsumed
    detail = f"P={r.precision:.4f} R={r.recall:.4f} F1={r.f1:.6f}; IoU=0.5 scored incorrect={boundary_ok}; subsumption={subsumed}"
    return CheckResult("metric_fixtures", ok, detail)


def run_selftest(solver: Callable = solve_hungarian, quick: bool = False, out=None) -> int:
    """Run every check, print a table and return 0 if all pass, 2 otherwise."""
    out = out or sys.stdout
    scale = 0.2 if quick else 1.0
    results = [
        check_hungarian(count=int(1000 * scale), solver=solver),
        check_loss_invariance(count=int(200 * scale), solver=solver),
        check_dominance(count=int(200 * scale), solver=solver),
        check_gradients(),
        check_equivariance(count=int(100 * scale)),
        check_metrics(),
    ]
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.seconds:7.2f}s  {r.detail}", file=out)
    return 0 if all(r.passed for r in results) else 2
