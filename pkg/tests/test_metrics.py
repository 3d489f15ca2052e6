import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gmner.core import InvalidInputError, Quadruple
from gmner.metrics import (ScoredPrediction, correctness, count_correct, full_report, per_type_report, prf,
                           region_correct, score)

from conftest import box

B1 = box(0, 0, 2, 2)
B2 = box(5, 5, 6, 6)


def fixture_3_2_4():
    golds = [[Quadruple(0, 1, 0, (B1,)), Quadruple(3, 3, 1, None)],
             [Quadruple(2, 2, 0, None), Quadruple(4, 5, 2, (B2,))]]
    preds = [[ScoredPrediction(0, 1, 0, box(0, 0, 2, 1.9)), ScoredPrediction(3, 3, 1, None)],
             [ScoredPrediction(2, 2, 1, None)]]
    return preds, golds


class TestCounts:
    def test_three_pred_two_correct_four_gold(self):
        preds, golds = fixture_3_2_4()
        r = score(preds, golds, "GMNER")
        assert (r.correct, r.predict, r.gold) == (2, 3, 4)
        assert r.precision == 2 / 3
        assert r.recall == 1 / 2
        assert r.f1 == pytest.approx(4 / 7, abs=1e-15)

    def test_task_views(self):
        preds, golds = fixture_3_2_4()
        # the type-wrong prediction is still a correct span + region
        assert score(preds, golds, "EEG").correct == 3
        assert score(preds, golds, "MNER").correct == 2

    def test_zero_denominators(self):
        assert prf(0, 0, 0) == (0.0, 0.0, 0.0)
        assert prf(0, 3, 0) == (0.0, 0.0, 0.0)
        assert score([[]], [[]]).f1 == 0.0

    def test_duplicate_predictions_count_once(self):
        g = [[Quadruple(0, 0, 0, None)]]
        p = [[ScoredPrediction(0, 0, 0, None, 0.9), ScoredPrediction(0, 0, 0, None, 0.8)]]
        r = score(p, g)
        assert (r.correct, r.predict) == (1, 2)

    def test_greedy_by_confidence(self):
        g = [Quadruple(0, 0, 0, (B1,))]
        low = ScoredPrediction(0, 0, 0, B1, 0.2)
        high = ScoredPrediction(0, 0, 0, box(0, 0, 2, 1.5), 0.9)
        assert count_correct([low, high], g, "GMNER") == 1

    def test_misaligned_lists(self):
        with pytest.raises(InvalidInputError):
            score([[]], [[], []])

    def test_unknown_task(self):
        with pytest.raises(InvalidInputError):
            correctness(ScoredPrediction(0, 0, 0, None), Quadruple(0, 0, 0), "NER")


class TestRegion:
    def test_iou_exactly_half_is_wrong(self):
        gold = Quadruple(0, 0, 0, (box(0, 0, 2, 1),))
        assert not region_correct(ScoredPrediction(0, 0, 0, box(1, 0, 2, 1)), gold)
        assert region_correct(ScoredPrediction(0, 0, 0, box(0.99, 0, 2, 1)), gold)

    def test_ungroundable_pairs(self):
        g_none = Quadruple(0, 0, 0, None)
        assert region_correct(ScoredPrediction(0, 0, 0, None), g_none)
        assert not region_correct(ScoredPrediction(0, 0, 0, B1), g_none)
        assert not region_correct(ScoredPrediction(0, 0, 0, None), Quadruple(0, 0, 0, (B1,)))

    def test_any_gold_box_counts(self):
        gold = Quadruple(0, 0, 0, (B1, B2))
        assert region_correct(ScoredPrediction(0, 0, 0, B2), gold)


class TestReports:
    def test_per_type_buckets(self):
        preds, golds = fixture_3_2_4()
        rows = per_type_report(preds, golds, ["PER", "LOC", "ORG"])
        assert set(rows) == {"All", "PER", "LOC", "ORG"}
        assert (rows["PER"].correct, rows["PER"].predict, rows["PER"].gold) == (1, 1, 2)
        assert (rows["LOC"].correct, rows["LOC"].predict, rows["LOC"].gold) == (1, 2, 1)
        assert rows["ORG"].predict == 0 and rows["ORG"].f1 == 0.0

    def test_full_report_rows(self):
        preds, golds = fixture_3_2_4()
        rows = full_report(preds, golds, ["PER", "LOC", "ORG"])
        assert len(rows) == 3 * 4
        assert {r.task for r in rows} == {"GMNER", "MNER", "EEG"}


@st.composite
def corpora(draw):
    rng = np.random.default_rng(draw(st.integers(0, 2**31 - 1)))
    boxes = [box(0, 0, 1, 1), box(0, 0, 1, 0.6), box(0.5, 0, 1.5, 1), box(3, 3, 4, 4)]
    preds, golds = [], []
    for _ in range(int(rng.integers(1, 4))):
        def quad():
            s = int(rng.integers(0, 3))
            b = None if rng.random() < 0.3 else boxes[int(rng.integers(len(boxes)))]
            return s, s + int(rng.integers(0, 2)), int(rng.integers(0, 2)), b
        golds.append([Quadruple(s, e, t, None if b is None else (b,)) for s, e, t, b in
                      (quad() for _ in range(int(rng.integers(0, 4))))])
        preds.append([ScoredPrediction(s, e, t, b, float(rng.random())) for s, e, t, b in
                      (quad() for _ in range(int(rng.integers(0, 4))))])
    return preds, golds


@settings(max_examples=150, deadline=None)
@given(corpora())
def test_gmner_subsumed_by_mner_and_eeg(corpus):
    preds, golds = corpus
    for p_list, g_list in zip(preds, golds):
        for p in p_list:
            for g in g_list:
                if correctness(p, g, "GMNER"):
                    assert correctness(p, g, "MNER") and correctness(p, g, "EEG")
    # span+type equality is an equivalence relation, so greedy pairing is optimal for MNER
    assert score(preds, golds, "GMNER").correct <= score(preds, golds, "MNER").correct
