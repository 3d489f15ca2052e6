import numpy as np
import pytest
import torch

from gmner.core import ConfigError, TypeSchema
from gmner.queryset import (DEFAULT_PROMPT, QuerySet, ablate, build_type_queries, compose_queries, distinct_rows,
                            query_types)

SCHEMA = TypeSchema.from_template(["PER", "LOC", "ORG"], DEFAULT_PROMPT)


class TestLayout:
    def test_tile_and_block(self):
        assert query_types(6, 3, "tile").tolist() == [0, 1, 2, 0, 1, 2]
        assert query_types(6, 3, "block").tolist() == [0, 0, 1, 1, 2, 2]

    def test_u_must_be_multiple_of_p(self):
        with pytest.raises(ConfigError, match="multiple of p"):
            query_types(7, 3)

    @pytest.mark.parametrize("layout", ["tile", "block"])
    def test_each_type_gets_u_over_p_slots(self, layout):
        assert np.bincount(query_types(12, 4, layout)).tolist() == [3] * 4


class TestCompose:
    def test_sum_of_parts(self):
        t = torch.randn(2, 4)
        e = torch.randn(4, 4)
        q = compose_queries(t, e, 4)
        torch.testing.assert_close(q, e + t[[0, 1, 0, 1]])

    def test_entity_part_makes_rows_distinct(self):
        qs = QuerySet(SCHEMA, 6, 8)
        assert distinct_rows(qs()) == 6

    def test_without_entity_rows_repeat(self):
        qs = QuerySet(SCHEMA, 6, 8, mode="no_entity")
        assert distinct_rows(qs()) == 3
        assert not qs.entity_table.requires_grad

    def test_without_type(self):
        qs = QuerySet(SCHEMA, 6, 8, mode="no_type")
        torch.testing.assert_close(qs(), qs.entity_table)

    def test_ablate_switches_mode(self):
        qs = ablate(QuerySet(SCHEMA, 6, 8), "no_entity")
        assert distinct_rows(qs()) == 3
        ablate(qs, "full")
        assert qs.entity_table.requires_grad
        with pytest.raises(ConfigError):
            ablate(qs, "nothing")

    def test_entity_init_is_small(self):
        torch.manual_seed(0)
        qs = QuerySet(TypeSchema.from_template(["A"], DEFAULT_PROMPT), 600, 64)
        assert qs.entity_table.std().item() == pytest.approx(0.02, rel=0.05)


class TestPromptEncoder:
    def test_mask_row_read_out(self):
        calls = []

        def encoder(prompt):
            calls.append(prompt)
            rows = torch.arange(4 * 3, dtype=torch.float32).reshape(4, 3) + len(calls)
            return rows, 2

        q = build_type_queries(SCHEMA, encoder=encoder)
        assert calls[0] == "PER is an entity type about [MASK]"
        torch.testing.assert_close(q[1], torch.tensor([8.0, 9.0, 10.0]))

    def test_template_without_mask(self):
        with pytest.raises(ConfigError):
            build_type_queries(SCHEMA, encoder=lambda p: (torch.zeros(1, 2), 0), template="[TYPE] entity")
