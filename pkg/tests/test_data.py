import json

import numpy as np
import pytest

from gmner.core import ConfigError
from gmner.data import (DataError, SyntheticSpec, build_lexicon, example_from_json, generate_synthetic,
                        load_jsonl, save_jsonl)


class TestSynthetic:
    def test_deterministic(self):
        a = generate_synthetic(SyntheticSpec(), 10, 7)
        b = generate_synthetic(SyntheticSpec(), 10, 7)
        assert a == b
        assert a != generate_synthetic(SyntheticSpec(), 10, 8)

    def test_never_groundable(self):
        data = generate_synthetic(SyntheticSpec(groundable_prob=0.0), 30, 1)
        assert all(not g.groundable for ex in data for g in ex.gold)

    def test_noiseless_latent_appears_once(self):
        spec = SyntheticSpec(groundable_prob=1.0, noise=0.0, multi_box_prob=0.0)
        lex = build_lexicon(spec)
        data = generate_synthetic(spec, 20, 3)
        for ex in data:
            feats = np.array([r.feature for r in ex.regions])
            for g in ex.gold:
                name = tuple(ex.tokens[g.start: g.end + 1])
                name_id = lex.names.index(name)
                latent = lex.latents[(name_id, g.type_id)]
                assert np.sum(np.all(feats == latent, axis=1)) == 1

    def test_shape_of_examples(self):
        spec = SyntheticSpec()
        for ex in generate_synthetic(spec, 50, 2):
            assert len(ex.regions) == spec.k
            assert spec.entities_per_example[0] <= len(ex.gold) <= spec.entities_per_example[1]
            spans = sorted((g.start, g.end) for g in ex.gold)
            assert all(a[1] < b[0] for a, b in zip(spans, spans[1:]))

    def test_ambiguous_mentions_are_cued(self):
        spec = SyntheticSpec(ambiguity_rate=1.0)
        lex = build_lexicon(spec)
        for ex in generate_synthetic(spec, 20, 4):
            assert ex.ambiguous
            for g in ex.gold:
                assert ex.tokens[g.start - 1] in lex.cues[g.type_id]

    @pytest.mark.parametrize("changes", [
        {"groundable_prob": 1.2},
        {"sentence_length": (10, 4)},
        {"entities_per_example": (3, 9), "sentence_length": (4, 8)},
        {"k": 2},
    ])
    def test_impossible_spec(self, changes):
        with pytest.raises(ConfigError):
            SyntheticSpec.from_dict(changes)


class TestJsonl:
    def test_round_trip(self, tmp_path):
        data = generate_synthetic(SyntheticSpec(), 15, 5)
        path = tmp_path / "d.jsonl"
        save_jsonl(data, path, SyntheticSpec().type_names)
        assert load_jsonl(path, SyntheticSpec().type_names) == data

    def test_null_boxes_is_ungroundable(self):
        ex = example_from_json({"tokens": ["a", "b"], "regions": [],
                                "entities": [{"start": 0, "end": 1, "type": "PER", "boxes": None}]}, ["PER"])
        assert not ex.gold[0].groundable

    def test_errors_carry_line_numbers(self, tmp_path):
        good = {"tokens": ["a"], "regions": [], "entities": []}
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(good) + "\n" + json.dumps(good) + "\n{oops\n")
        with pytest.raises(DataError, match="line 3"):
            load_jsonl(path)
        bad_span = {"tokens": ["a", "b"], "entities": [{"start": 1, "end": 0, "type": 0, "boxes": None}]}
        path.write_text(json.dumps(good) + "\n" + json.dumps(bad_span) + "\n")
        with pytest.raises(DataError, match="line 2"):
            load_jsonl(path)

    def test_out_of_range_and_unknown_type(self):
        with pytest.raises(DataError):
            example_from_json({"tokens": ["a"], "entities": [{"start": 0, "end": 3, "type": 0}]})
        with pytest.raises(DataError):
            example_from_json({"tokens": ["a"], "entities": [{"start": 0, "end": 0, "type": "ORG"}]}, ["PER"])

    def test_three_lines(self, tmp_path):
        data = generate_synthetic(SyntheticSpec(), 3, 0)
        path = tmp_path / "d.jsonl"
        save_jsonl(data, path, SyntheticSpec().type_names)
        assert len(path.read_text().splitlines()) == 3
        assert len(load_jsonl(path, SyntheticSpec().type_names)) == 3
