"""Synthetic grounded-NER data and the line-delimited JSON dataset format.

JSONL schema, one example per line::

    {"tokens": ["w1", ...],
     "regions": [{"box": [x1, y1, x2, y2], "feature": [...]}, ...],
     "entities": [{"start": 0, "end": 1, "type": "PER", "boxes": [[...]] | null}, ...],
     "ambiguous": false}            # optional

``type`` is a type name (resolved against the run's type list) or an integer id.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import BoundingBox, CandidateRegion, ConfigError, Example, InvalidInputError, Quadruple

VIEW_NOISE = 0.5


class DataError(InvalidInputError):
    pass


@dataclass
class SyntheticSpec:
    """Knobs for the synthetic corpus. ``lexicon_seed`` fixes names, latents and cues;
    the per-call seed only drives sampling, so splits drawn with different seeds share a lexicon."""

    type_names: List[str] = field(default_factory=lambda: ["PER", "LOC", "ORG", "OTHER"])
    vocab_size: int = 200
    names_per_type: int = 25
    name_length: Tuple[int, int] = (1, 2)
    entities_per_example: Tuple[int, int] = (1, 3)
    sentence_length: Tuple[int, int] = (8, 16)
    k: int = 8
    feature_dim: int = 32
    groundable_prob: float = 0.7
    noise: float = 0.1
    ambiguity_rate: float = 0.2
    multi_box_prob: float = 0.1
    cues_per_type: int = 3
    lexicon_seed: int = 1234

    def validate(self) -> "SyntheticSpec":
        for name in ("groundable_prob", "ambiguity_rate", "multi_box_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        for name in ("name_length", "entities_per_example", "sentence_length"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < (0 if name == "entities_per_example" else 1):
                raise ConfigError(f"{name} range {lo}..{hi} is empty or invalid")
        if self.noise < 0 or self.vocab_size < 1 or self.names_per_type < 1 or self.feature_dim < 1:
            raise ConfigError("noise, vocab_size, names_per_type and feature_dim must be positive")
        e_max = self.entities_per_example[1]
        # every mention may carry a cue token in front of it
        if e_max * (self.name_length[1] + 1) > self.sentence_length[1]:
            raise ConfigError("entities cannot fit: max entities x (max name length + cue) exceeds max sentence length")
        boxes_needed = e_max * (2 if self.multi_box_prob > 0 else 1)
        if boxes_needed > self.k:
            raise ConfigError(f"k={self.k} regions cannot hold {boxes_needed} entity boxes")
        if len(self.type_names) < 2 and self.ambiguity_rate > 0:
            raise ConfigError("ambiguous names need at least two types")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        data = dict(data)
        for key in ("name_length", "entities_per_example", "sentence_length"):
            if key in data:
                data[key] = tuple(data[key])
        try:
            return cls(**data).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Lexicon:
    names: List[Tuple[str, ...]]
    name_types: List[List[int]]  # each name: one type, or two for ambiguous surface forms
    latents: Dict[Tuple[int, int], np.ndarray]  # (name id, type id) -> latent feature
    cues: List[List[str]]  # per type

    def ambiguous(self, name_id: int) -> bool:
        return len(self.name_types[name_id]) > 1


def build_lexicon(spec: SyntheticSpec) -> Lexicon:
    rng = np.random.default_rng(spec.lexicon_seed)
    p = len(spec.type_names)
    names, name_types = [], []
    for t, tname in enumerate(spec.type_names):
        for i in range(spec.names_per_type):
            length = int(rng.integers(spec.name_length[0], spec.name_length[1] + 1))
            names.append(tuple(f"{tname.lower()}{i}_{j}" for j in range(length)))
            name_types.append([t])
    n_amb = int(round(spec.ambiguity_rate * len(names)))
    for name_id in sorted(rng.choice(len(names), size=n_amb, replace=False).tolist()):
        first = name_types[name_id][0]
        other = int(rng.integers(p - 1))
        name_types[name_id].append(other if other < first else other + 1)
    latents = {}
    for name_id, types in enumerate(name_types):
        for t in types:
            latents[(name_id, t)] = rng.standard_normal(spec.feature_dim)
    cues = [[f"cue_{tname.lower()}_{c}" for c in range(spec.cues_per_type)] for tname in spec.type_names]
    return Lexicon(names, name_types, latents, cues)


def _random_box(rng) -> BoundingBox:
    w, h = rng.uniform(0.1, 0.3, size=2)
    x1, y1 = rng.uniform(0.0, 0.7, size=2)
    return BoundingBox(float(x1), float(y1), float(x1 + w), float(y1 + h))


def _jitter(box: BoundingBox, rng, scale: float = 0.02) -> BoundingBox:
    d = rng.uniform(-scale, scale, size=4)
    return BoundingBox(box.x1 + d[0], box.y1 + d[1], box.x2 + d[2], box.y2 + d[3])


def generate_synthetic(spec: SyntheticSpec, count: int, seed: int) -> List[Example]:
    """Deterministic corpus of ``count`` examples.

    Each mention is a lexicon name, preceded by a type cue when its surface
    form is ambiguous. A groundable mention contributes one candidate whose
    feature is the (name, type) latent plus noise (a second, noisier view with
    probability ``multi_box_prob``); the remaining candidates are distractors.
    """
    spec.validate()
    lex = build_lexicon(spec)
    rng = np.random.default_rng(seed)
    p = len(spec.type_names)
    by_type = [[i for i, ts in enumerate(lex.name_types) if t in ts] for t in range(p)]
    fillers = [f"w{i}" for i in range(spec.vocab_size)]
    out = []
    for _ in range(count):
        m = int(rng.integers(spec.entities_per_example[0], spec.entities_per_example[1] + 1))
        mentions, used = [], set()
        while len(mentions) < m:
            t = int(rng.integers(p))
            name_id = int(rng.choice(by_type[t]))
            if name_id in used:
                continue
            used.add(name_id)
            mentions.append((name_id, t))
        segments = []
        for name_id, t in mentions:
            prefix = [str(rng.choice(lex.cues[t]))] if lex.ambiguous(name_id) else []
            segments.append((prefix, list(lex.names[name_id])))
        ent_tokens = sum(len(a) + len(b) for a, b in segments)
        length = int(rng.integers(spec.sentence_length[0], spec.sentence_length[1] + 1))
        n_fill = max(0, length - ent_tokens)
        order = [("e", i) for i in range(m)] + [("f", None)] * n_fill
        rng.shuffle(order)
        tokens, spans = [], [None] * m
        for kind, i in order:
            if kind == "f":
                tokens.append(str(rng.choice(fillers)))
                continue
            prefix, name = segments[i]
            tokens.extend(prefix)
            spans[i] = (len(tokens), len(tokens) + len(name) - 1)
            tokens.extend(name)

        regions, golds = [], []
        for (name_id, t), (s, e) in zip(mentions, spans):
            if rng.random() >= spec.groundable_prob:
                golds.append(Quadruple(s, e, t, None))
                continue
            latent = lex.latents[(name_id, t)]
            views = [latent + spec.noise * rng.standard_normal(spec.feature_dim)]
            if rng.random() < spec.multi_box_prob:
                views.append(latent + VIEW_NOISE * rng.standard_normal(spec.feature_dim))
            boxes = []
            for feat in views:
                box = _random_box(rng)
                regions.append(CandidateRegion(box, tuple(feat.tolist())))
                boxes.append(_jitter(box, rng))
            golds.append(Quadruple(s, e, t, tuple(boxes)))
        while len(regions) < spec.k:
            regions.append(CandidateRegion(_random_box(rng), tuple(rng.standard_normal(spec.feature_dim).tolist())))
        perm = rng.permutation(len(regions))
        regions = [regions[i] for i in perm]
        amb = any(lex.ambiguous(name_id) for name_id, _ in mentions)
        out.append(Example(tokens, regions, golds, ambiguous=amb))
    return out


def _type_id(value, type_names: Optional[Sequence[str]], lineno: int) -> int:
    if isinstance(value, bool):
        raise DataError(f"line {lineno}: invalid entity type {value!r}")
    if isinstance(value, int):
        if type_names is not None and not 0 <= value < len(type_names):
            raise DataError(f"line {lineno}: type id {value} out of range")
        return value
    if type_names is None or value not in type_names:
        raise DataError(f"line {lineno}: unknown entity type {value!r}")
    return list(type_names).index(value)


def example_from_json(obj: dict, type_names: Optional[Sequence[str]] = None, lineno: int = 0) -> Example:
    try:
        tokens = [str(t) for t in obj["tokens"]]
        regions = [CandidateRegion(BoundingBox.from_list(r["box"]), tuple(r["feature"])) for r in obj.get("regions", [])]
        gold = []
        for ent in obj.get("entities", []):
            start, end = int(ent["start"]), int(ent["end"])
            if start > end:
                raise DataError(f"line {lineno}: entity start {start} > end {end}")
            if start < 0 or end >= len(tokens):
                raise DataError(f"line {lineno}: span [{start}, {end}] outside {len(tokens)} tokens")
            boxes = ent.get("boxes")
            boxes = None if boxes is None else tuple(BoundingBox.from_list(b) for b in boxes)
            gold.append(Quadruple(start, end, _type_id(ent["type"], type_names, lineno), boxes))
        dims = {len(r.feature) for r in regions}
        if len(dims) > 1:
            raise DataError(f"line {lineno}: region features have inconsistent dimensions {sorted(dims)}")
        return Example(tokens, regions, gold, ambiguous=bool(obj.get("ambiguous", False)))
    except DataError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"line {lineno}: {exc}") from exc


def example_to_json(ex: Example, type_names: Optional[Sequence[str]] = None) -> dict:
    def tname(t):
        return type_names[t] if type_names is not None else t

    return {
        "tokens": list(ex.tokens),
        "regions": [{"box": r.box.as_list(), "feature": list(r.feature)} for r in ex.regions],
        "entities": [
            {"start": g.start, "end": g.end, "type": tname(g.type_id),
             "boxes": None if g.boxes is None else [b.as_list() for b in g.boxes]}
            for g in ex.gold
        ],
        "ambiguous": ex.ambiguous,
    }


def load_jsonl(path, type_names: Optional[Sequence[str]] = None) -> List[Example]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: malformed JSON ({exc.msg})") from exc
            out.append(example_from_json(obj, type_names, lineno))
    return out


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_jsonl(examples: Sequence[Example], path, type_names: Optional[Sequence[str]] = None) -> None:
    lines = [json.dumps(example_to_json(ex, type_names)) for ex in examples]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))
