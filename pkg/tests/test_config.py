import json

import pytest

from gmner.config import QFNetConfig, RunConfig
from gmner.core import ConfigError


class TestRunConfig:
    def test_defaults_are_desk_scale(self):
        c = RunConfig().validate()
        assert (c.h, c.u, c.p, c.k, c.L, c.heads) == (64, 12, 4, 8, 3, 4)

    @pytest.mark.parametrize("changes", [
        {"u": 10},
        {"h": 30},
        {"lr": 0.0},
        {"batch_size": -1},
        {"lambda_v": 1.5},
        {"tau_c": 1.0},
        {"query_mode": "random"},
        {"match_cost": "l1"},
        {"target_form": "focal"},
        {"dtype": "float16"},
        {"type_names": ["A", "A"]},
    ])
    def test_invalid(self, changes):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(changes)

    def test_nested_and_dotted_qfnet(self):
        a = RunConfig.from_dict({"qfnet": {"qct": False}, "qfnet.sag": False, "L": 2})
        assert a.qfnet == QFNetConfig(layers=2, qct=False, qpi=True, sag=False)

    def test_p_must_agree(self):
        assert RunConfig.from_dict({"p": 4}).p == 4
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"p": 3})

    def test_unknown_keys(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            RunConfig.from_dict({"hidden": 8})
        with pytest.raises(ConfigError, match="unknown qfnet keys"):
            RunConfig.from_dict({"qfnet": {"depth": 2}})

    def test_round_trip(self, tmp_path):
        c = RunConfig(u=8, type_names=["X", "Y"], qfnet=QFNetConfig(layers=1, qpi=False))
        path = tmp_path / "c.json"
        c.save(path)
        assert RunConfig.load(path) == c
        assert json.loads(path.read_text())["qfnet"]["qpi"] is False

    def test_unreadable(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError):
            RunConfig.load(bad)
