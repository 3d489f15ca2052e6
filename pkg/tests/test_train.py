import json

import numpy as np
import pytest
import torch

from gmner.config import QFNetConfig, RunConfig
from gmner.core import CapacityError, InvalidInputError, Quadruple
from gmner.data import SyntheticSpec, generate_synthetic
from gmner.encoders import Vocabulary
from gmner.matching import pad_gold, set_loss
from gmner.model import batch_assignments, batched_set_loss, collate, prepare
from gmner.train import (CheckpointError, benchmark, build_model, evaluate, load_checkpoint, predict_examples,
                         prediction_record, save_checkpoint, train, warmup_linear)

TINY = dict(h=16, u=4, heads=2, qfnet=QFNetConfig(layers=1), batch_size=4, epochs=2, freeze_epochs=1)


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic(SyntheticSpec(), 24, 11)


def tiny_config(**kw):
    return RunConfig(**{**TINY, **kw}).validate()


class TestBatching:
    def test_batched_loss_equals_mean_of_set_losses(self, corpus):
        cfg = tiny_config(dtype="float64")
        vocab = Vocabulary.build(corpus)
        model = build_model(cfg, vocab)
        batch = collate(prepare(corpus[:5], vocab, u=cfg.u), cfg.region_feature_dim, torch.float64)
        bundle = model(batch)
        plans = batch_assignments(bundle, batch, model.type_of, cfg)
        per_example = []
        for b, (padded, a) in enumerate(plans):
            ex = bundle.example(b)
            per_example.append(set_loss(padded, ex.start, ex.end, ex.region, ex.exist, a))
        expected = torch.stack(per_example).mean()
        torch.testing.assert_close(batched_set_loss(bundle, plans), expected, rtol=1e-12, atol=1e-12)

    def test_capacity_error_names_example(self, corpus):
        with pytest.raises(CapacityError, match="example 0"):
            prepare([corpus[0]] * 2, Vocabulary.build(corpus), u=len(corpus[0].gold) - 1)

    def test_padding_invariance(self, corpus):
        cfg = tiny_config(dtype="float64")
        vocab = Vocabulary.build(corpus)
        model = build_model(cfg, vocab).eval()
        items = prepare(corpus[:4], vocab)
        together = model(collate(items, cfg.region_feature_dim, torch.float64)).example(1)
        alone = model(collate(items[1:2], cfg.region_feature_dim, torch.float64)).example(0)
        for a, b in zip(together.numpy(), alone.numpy()):
            np.testing.assert_allclose(a, b, atol=1e-12)


class TestSchedule:
    def test_warmup_then_linear_decay(self):
        f = warmup_linear(100, 0.05)
        assert [round(f(s), 4) for s in (0, 4)] == [0.2, 1.0]
        assert f(5) == pytest.approx(1.0)
        assert f(52) == pytest.approx(0.5052, abs=1e-4)
        assert f(100) == 0.0

    def test_no_warmup(self):
        assert warmup_linear(10, 0.0)(0) == 1.0


class TestTrain:
    def test_smoke_writes_checkpoint(self, corpus, tmp_path):
        r = train(tiny_config(epochs=1), corpus[:8], corpus[8:12], out_dir=tmp_path)
        assert np.isfinite(r.epoch_losses[0])
        assert (tmp_path / "best.pt").exists()
        history = json.loads((tmp_path / "history.json").read_text())
        assert len(history["epoch_loss"]) == 1

    def test_freeze_epochs_hold_encoders(self, corpus):
        cfg = tiny_config(epochs=1, freeze_epochs=1)
        vocab = Vocabulary.build(corpus)
        before = {k: v.clone() for k, v in build_model(cfg, vocab).state_dict().items()}
        after = train(cfg, corpus[:8], corpus[8:12], vocab=vocab).model.state_dict()
        changed = {k for k in before if not torch.equal(before[k], after[k])}
        assert not any(k.startswith(("text_encoder.", "region_encoder.")) for k in changed)
        for group in ("queries.", "qfnet.", "span_head.", "region_head.", "class_head."):
            assert any(k.startswith(group) for k in changed), group

    def test_deterministic(self, corpus):
        a = train(tiny_config(), corpus[:12], corpus[12:16])
        b = train(tiny_config(), corpus[:12], corpus[12:16])
        assert a.epoch_losses == b.epoch_losses
        assert a.dev_f1 == b.dev_f1

    def test_capacity_checked_before_training(self, corpus):
        cfg = tiny_config(u=4)
        big = corpus[0].__class__(corpus[0].tokens, corpus[0].regions, [Quadruple(0, 0, 0)] * 5)
        with pytest.raises(CapacityError):
            train(cfg, [big], [])


class TestCheckpoint:
    def test_round_trip_bit_identical(self, corpus, tmp_path):
        cfg = tiny_config()
        vocab = Vocabulary.build(corpus)
        model = build_model(cfg, vocab).eval()
        path = tmp_path / "m.pt"
        save_checkpoint(path, model, vocab)
        loaded, vocab2, payload = load_checkpoint(path)
        assert vocab2.itos == vocab.itos
        batch = collate(prepare(corpus[:6], vocab), cfg.region_feature_dim)
        with torch.no_grad():
            a, b = model(batch), loaded(batch)
        for name in ("start", "end", "region", "exist"):
            assert torch.equal(getattr(a, name), getattr(b, name))

    def test_shape_mismatch(self, corpus, tmp_path):
        vocab = Vocabulary.build(corpus)
        path = tmp_path / "m.pt"
        save_checkpoint(path, build_model(tiny_config(), vocab), vocab)
        with pytest.raises(CheckpointError):
            load_checkpoint(path, tiny_config(h=32))

    def test_unreadable(self, tmp_path):
        path = tmp_path / "junk.pt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


class TestEvaluate:
    def test_report_schema(self, corpus):
        cfg = tiny_config()
        vocab = Vocabulary.build(corpus)
        rows, decoded = evaluate(build_model(cfg, vocab), vocab, corpus[:6])
        assert {(r.task, r.type) for r in rows} == {(t, n) for t in ("GMNER", "MNER", "EEG")
                                                     for n in ["All"] + cfg.type_names}
        assert len(decoded) == 6

    def test_untrained_model_scores_near_zero(self, corpus):
        cfg = tiny_config()
        vocab = Vocabulary.build(corpus)
        rows, _ = evaluate(build_model(cfg, vocab), vocab, corpus)
        gmner = next(r for r in rows if r.task == "GMNER" and r.type == "All")
        assert gmner.f1 < 0.1

    def test_prediction_record_format(self, corpus):
        cfg = tiny_config(tau_c=0.01)
        vocab = Vocabulary.build(corpus)
        model = build_model(cfg, vocab)
        decoded = predict_examples(model, vocab, corpus[:1])[0]
        rec = prediction_record(decoded, corpus[0], cfg.type_names)
        assert rec["entities"]
        for ent in rec["entities"]:
            assert set(ent) == {"start", "end", "type", "region_index", "box", "confidence"}
            assert ent["type"] in cfg.type_names
            assert (ent["box"] is None) == (ent["region_index"] == 0)


class TestBenchmark:
    def test_report(self, corpus):
        cfg = tiny_config()
        vocab = Vocabulary.build(corpus)
        report = benchmark(build_model(cfg, vocab), vocab, corpus[:8], batch_size=4, repeats=2)
        for key in ("examples_per_sec", "mean_latency_ms", "latency_std_ms", "batch_size", "u", "k_mean", "n_mean",
                    "batch1_mean_latency_ms", "batching_gain"):
            assert key in report
        assert report["examples"] == 8 and report["u"] == 4

    def test_empty(self, corpus):
        vocab = Vocabulary.build(corpus)
        with pytest.raises(InvalidInputError, match="nothing to benchmark"):
            benchmark(build_model(tiny_config(), vocab), vocab, [])
