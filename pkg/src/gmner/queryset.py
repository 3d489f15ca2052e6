"""Multi-grained query set: type-grained rows plus a learnable entity-grained table."""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .core import ConfigError, TypeSchema

DEFAULT_PROMPT = "[TYPE] is an entity type about [MASK]"
MODES = ("full", "no_type", "no_entity")
LAYOUTS = ("tile", "block")

# prompt -> (token rows (t, h), index of the mask row)
PromptEncoder = Callable[[str], Tuple[torch.Tensor, int]]


def query_types(u: int, p: int, layout: str = "tile") -> np.ndarray:
    """Type id served by each query slot.

    ``tile`` repeats the p type rows d times in sequence (slot q -> q mod p);
    ``block`` gives each type a contiguous run of d slots (slot q -> q // d).
    """
    if p < 1 or u % p:
        raise ConfigError(f"u must be a multiple of p (u={u}, p={p})")
    q = np.arange(u)
    if layout == "tile":
        return q % p
    if layout == "block":
        return q // (u // p)
    raise ConfigError(f"unknown query layout {layout!r}")


def compose_queries(type_q: Optional[torch.Tensor], ent_q: Optional[torch.Tensor], u: int,
                    layout: str = "tile") -> torch.Tensor:
    """Token-wise sum of the entity table and the type rows replicated to ``u`` slots.

    Either addend may be ``None`` (ablations), but not both.
    """
    if type_q is None and ent_q is None:
        raise ConfigError("at least one of the type or entity queries is required")
    if ent_q is not None and ent_q.shape[0] != u:
        raise ConfigError(f"entity table has {ent_q.shape[0]} rows, expected u={u}")
    if type_q is None:
        return ent_q
    types = torch.as_tensor(query_types(u, type_q.shape[0], layout), device=type_q.device)
    tiled = type_q[types]
    return tiled if ent_q is None else ent_q + tiled


def build_type_queries(schema: TypeSchema, table: Optional[nn.Embedding] = None,
                       encoder: Optional[PromptEncoder] = None, template: str = DEFAULT_PROMPT) -> torch.Tensor:
    """(p, h) type-grained queries.

    With a pretrained ``encoder`` each filled prompt is encoded and the row at
    the mask position is read out; otherwise the trainable ``table`` is used.
    """
    if encoder is not None:
        if "[MASK]" not in template or "[TYPE]" not in template:
            raise ConfigError(f"prompt template needs [TYPE] and [MASK] slots: {template!r}")
        rows = []
        for name in schema.names:
            hidden, mask_index = encoder(template.replace("[TYPE]", name))
            rows.append(hidden[mask_index])
        return torch.stack(rows)
    if table is None:
        raise ConfigError("either a type table or a prompt encoder is required")
    if table.num_embeddings != schema.p:
        raise ConfigError(f"type table has {table.num_embeddings} rows for {schema.p} types")
    return table.weight


class QuerySet(nn.Module):
    """Owns the trainable query tables and produces the (u, h) query matrix."""

    def __init__(self, schema: TypeSchema, u: int, hidden: int, mode: str = "full", layout: str = "tile",
                 prompt_encoder: Optional[PromptEncoder] = None, template: str = DEFAULT_PROMPT):
        super().__init__()
        if mode not in MODES:
            raise ConfigError(f"unknown query mode {mode!r}; expected one of {MODES}")
        self.schema = schema
        self.u = u
        self.mode = mode
        self.layout = layout
        self.template = template
        self.prompt_encoder = prompt_encoder
        self.type_of = query_types(u, schema.p, layout)
        self.type_table = nn.Embedding(schema.p, hidden) if prompt_encoder is None else None
        if self.type_table is not None:
            nn.init.normal_(self.type_table.weight, std=1.0)
        self.entity_table = nn.Parameter(torch.randn(u, hidden) * 0.02)
        # under no_entity the table is unused and frozen: only the type rows remain
        self.entity_table.requires_grad_(mode != "no_entity")

    def type_queries(self) -> torch.Tensor:
        return build_type_queries(self.schema, self.type_table, self.prompt_encoder, self.template)

    def forward(self) -> torch.Tensor:
        type_q = None if self.mode == "no_type" else self.type_queries()
        ent_q = None if self.mode == "no_entity" else self.entity_table
        if type_q is None:
            return ent_q
        return compose_queries(type_q, ent_q, self.u, self.layout)


def ablate(queries: QuerySet, mode: str) -> QuerySet:
    """Switch a query set to ``full``, ``no_type`` or ``no_entity`` in place."""
    if mode not in MODES:
        raise ConfigError(f"unknown query mode {mode!r}")
    queries.mode = mode
    queries.entity_table.requires_grad_(mode != "no_entity")
    return queries


def distinct_rows(x: torch.Tensor, atol: float = 0.0) -> int:
    rows = x.detach().cpu().numpy()
    kept: list = []
    for r in rows:
        if not any(np.allclose(r, k, atol=atol, rtol=0) for k in kept):
            kept.append(r)
    return len(kept)
