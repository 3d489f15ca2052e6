"""Domain types shared across the package, plus box geometry."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an operation receives structurally invalid data."""


class ConfigError(ValueError):
    """Raised for inconsistent configuration values."""


class CapacityError(ValueError):
    """Raised when an example holds more entities than there are queries."""


class UnmatchableRegionError(ValueError):
    """A groundable gold entity has no candidate regions to map onto."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in xyxy format (pixels or normalized units)."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not all(np.isfinite([self.x1, self.y1, self.x2, self.y2])):
            raise InvalidInputError(f"non-finite box coordinates: {self}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise InvalidInputError(f"degenerate box (zero area): {self}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def shift(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def as_list(self) -> List[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @classmethod
    def from_list(cls, coords: Sequence[float]) -> "BoundingBox":
        if len(coords) != 4:
            raise InvalidInputError(f"box needs 4 coordinates, got {len(coords)}")
        return cls(*(float(c) for c in coords))


@dataclass(frozen=True)
class Quadruple:
    """One gold entity: inclusive token span, type id and grounded boxes.

    ``boxes`` is ``None`` for an ungroundable entity. Predicted entities use
    :class:`gmner.heads.DecodedEntity`, which carries a candidate index instead.
    """

    start: int
    end: int
    type_id: int
    boxes: Optional[Tuple[BoundingBox, ...]] = None

    def __post_init__(self):
        if self.start < 0 or self.end < self.start:
            raise InvalidInputError(f"invalid span [{self.start}, {self.end}]")
        if self.type_id < 0:
            raise InvalidInputError(f"negative type id {self.type_id}")
        if self.boxes is not None:
            if len(self.boxes) == 0:
                raise InvalidInputError("groundable entity needs at least one box")
            object.__setattr__(self, "boxes", tuple(self.boxes))

    @property
    def groundable(self) -> bool:
        return self.boxes is not None


@dataclass(frozen=True)
class CandidateRegion:
    box: BoundingBox
    feature: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "feature", tuple(float(x) for x in self.feature))


@dataclass
class Example:
    """A sentence/image pair with its candidate regions and gold entities."""

    tokens: List[str]
    regions: List[CandidateRegion]
    gold: List[Quadruple] = field(default_factory=list)
    # set by the synthetic generator; True when a mention has a type-ambiguous surface form
    ambiguous: bool = False

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise InvalidInputError("example has no tokens")
        n = len(self.tokens)
        for q in self.gold:
            if q.end >= n:
                raise InvalidInputError(f"span [{q.start}, {q.end}] outside sentence of length {n}")


@dataclass(frozen=True)
class TypeSchema:
    names: Tuple[str, ...]
    prompts: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) == 0:
            raise ConfigError("type schema needs at least one type")
        if len(set(self.names)) != len(self.names):
            raise ConfigError(f"duplicate type names in {self.names}")
        object.__setattr__(self, "prompts", tuple(self.prompts))
        if self.prompts and len(self.prompts) != len(self.names):
            raise ConfigError("one prompt per type is required")

    @property
    def p(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise InvalidInputError(f"unknown entity type {name!r}") from None

    @classmethod
    def from_template(cls, names: Sequence[str], template: str) -> "TypeSchema":
        return cls(tuple(names), tuple(template.replace("[TYPE]", n) for n in names))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0.0 for disjoint or edge-touching boxes."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def region_target(gold: Quadruple, regions: Sequence[CandidateRegion], iou_threshold: float = 0.5) -> np.ndarray:
    """Map a gold entity onto the ``k + 1`` candidate slots (slot 0 = ungroundable).

    Groundable entities get a multi-hot vector over every candidate whose IoU
    with any gold box reaches ``iou_threshold``; when none qualifies, the single
    best-overlapping candidate is used (lowest index on ties).
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ConfigError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")
    target = np.zeros(len(regions) + 1, dtype=np.float64)
    if not gold.groundable:
        target[0] = 1.0
        return target
    if len(regions) == 0:
        raise UnmatchableRegionError(f"groundable entity [{gold.start}, {gold.end}] but no candidate regions")
    best = np.array([max(iou(r.box, g) for g in gold.boxes) for r in regions])
    hits = np.flatnonzero(best >= iou_threshold)
    if hits.size:
        target[hits + 1] = 1.0
    else:
        target[int(np.argmax(best)) + 1] = 1.0
    return target
