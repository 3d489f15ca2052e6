"""Run configuration: a JSON document mirroring :class:`RunConfig`."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

from .core import ConfigError
from .matching import TARGET_FORMS
from .queryset import DEFAULT_PROMPT, LAYOUTS, MODES

DEFAULT_TYPES = ["PER", "LOC", "ORG", "OTHER"]


@dataclass
class QFNetConfig:
    layers: int = 3
    qct: bool = True
    qpi: bool = True
    sag: bool = True
    update_text: bool = True


@dataclass
class RunConfig:
    """Model, loss and training settings.

    Defaults are the desk-scale configuration. The values used for the
    full-size setup are ``u=60``, ``lr=2e-5``, ``batch_size=16``, ``epochs=50``,
    ``warmup_ratio=0.05`` and ``freeze_epochs=5``.
    """

    h: int = 64
    u: int = 12
    k: int = 8
    heads: int = 4
    lambda_v: float = 0.5
    tau_c: float = 0.5
    iou_threshold: float = 0.5
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 30
    warmup_ratio: float = 0.05
    freeze_epochs: int = 1
    seed: int = 7
    type_names: List[str] = field(default_factory=lambda: list(DEFAULT_TYPES))
    prompt: str = DEFAULT_PROMPT
    region_feature_dim: int = 32
    text_layers: int = 1
    text_positions: int = 0
    query_mode: str = "full"
    query_layout: str = "tile"
    bml: bool = True
    match_cost: str = "prob"
    target_form: str = "balanced"
    padding: str = "null"
    grad_clip: float = 1.0
    deterministic: bool = True
    dtype: str = "float32"
    qfnet: QFNetConfig = field(default_factory=QFNetConfig)
    train_path: Optional[str] = None
    dev_path: Optional[str] = None
    out_dir: str = "runs/default"

    @property
    def p(self) -> int:
        return len(self.type_names)

    @property
    def L(self) -> int:
        return self.qfnet.layers

    def validate(self) -> "RunConfig":
        if self.p < 1 or len(set(self.type_names)) != self.p:
            raise ConfigError(f"type_names must be nonempty and unique: {self.type_names}")
        if self.u % self.p:
            raise ConfigError(f"u must be a multiple of p (u={self.u}, p={self.p})")
        if self.h % self.heads:
            raise ConfigError(f"h={self.h} must be divisible by heads={self.heads}")
        if self.qfnet.layers < 1:
            raise ConfigError("qfnet.layers must be >= 1")
        for name in ("lr", "batch_size", "epochs", "h", "u", "heads", "region_feature_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 <= self.lambda_v <= 1:
            raise ConfigError("lambda_v must lie in [0, 1]")
        if not 0 < self.tau_c < 1 or not 0 < self.iou_threshold < 1:
            raise ConfigError("tau_c and iou_threshold must lie in (0, 1)")
        if not 0 <= self.warmup_ratio < 1 or self.freeze_epochs < 0:
            raise ConfigError("warmup_ratio must lie in [0, 1) and freeze_epochs >= 0")
        if self.query_mode not in MODES or self.query_layout not in LAYOUTS:
            raise ConfigError(f"bad query mode/layout {self.query_mode!r}/{self.query_layout!r}")
        if self.match_cost not in ("prob", "nll") or self.padding not in ("null", "replicate"):
            raise ConfigError(f"bad match_cost/padding {self.match_cost!r}/{self.padding!r}")
        if self.target_form not in TARGET_FORMS:
            raise ConfigError(f"target_form must be one of {TARGET_FORMS}, got {self.target_form!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        qf = dict(data.pop("qfnet", {}) or {})
        # dotted keys ("qfnet.qct": false) are accepted as well as a nested section
        for key in [k for k in data if k.startswith("qfnet.")]:
            qf[key.split(".", 1)[1]] = data.pop(key)
        if "L" in data:
            qf["layers"] = data.pop("L")
        if "p" in data:
            p = data.pop("p")
            if p != len(data.get("type_names", DEFAULT_TYPES)):
                raise ConfigError(f"p={p} disagrees with type_names")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        qf_known = {f.name for f in fields(QFNetConfig)}
        if set(qf) - qf_known:
            raise ConfigError(f"unknown qfnet keys: {sorted(set(qf) - qf_known)}")
        return cls(**data, qfnet=QFNetConfig(**qf)).validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))
