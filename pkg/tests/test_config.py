"""RunConfig validation and (de)serialization contracts."""

import dataclasses
import json

import pytest

from invgraph.config import MODES, RunConfig
from invgraph.errors import ContractError, ParseError


def test_defaults_match_documented_run_settings():
    cfg = RunConfig(dataset="d").validate()
    assert (cfg.hidden_dim, cfg.num_layers, cfg.codebook_size) == (64, 3, 100)
    assert (cfg.lambda_inv, cfg.lambda_reg, cfg.lambda_cmt) == (0.01, 0.5, 0.1)
    assert (cfg.gamma, cfg.eta) == (0.7, 0.99)
    assert (cfg.batch_size, cfg.lr, cfg.max_epochs) == (128, 0.001, 200)
    assert cfg.mode == "imold" and cfg.seeds == (0,) and cfg.select_metric == "auto"


def test_all_modes_accepted():
    for mode in MODES:
        assert RunConfig(dataset="d", mode=mode).validate().mode == mode


@pytest.mark.parametrize(
    "bad",
    [
        {"mode": "irm"},
        {"lambda_inv": -0.1},
        {"lambda_reg": -1.0},
        {"lambda_cmt": -0.5},
        {"gamma": 0.0},
        {"gamma": 1.0},
        {"eta": 0.0},
        {"eta": 1.5},
        {"codebook_size": 0},
        {"hidden_dim": 0},
        {"num_layers": 0},
        {"batch_size": 1},
        {"lr": 0.0},
        {"max_epochs": 0},
        {"seeds": ()},
        {"seeds": (0, True)},
        {"seeds": (0.5,)},
        {"task": "ranking"},
        {"select_metric": "f1"},
        {"dataset": ""},
    ],
)
def test_validate_rejects(bad):
    with pytest.raises(ContractError):
        RunConfig(**{"dataset": "d", **bad}).validate()


def test_frozen():
    cfg = RunConfig(dataset="d")
    with pytest.raises(dataclasses.FrozenInstanceError):
        cfg.lr = 0.1


def test_dict_round_trip():
    cfg = RunConfig(dataset="d", mode="no_vq", seeds=(3, 1), lambda_inv=0.2, task="binary")
    again = RunConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert isinstance(again.seeds, tuple)


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ParseError):
        RunConfig.from_dict({"dataset": "d", "learning_rate": 0.1})


def test_from_dict_rejects_missing_dataset():
    with pytest.raises(ParseError):
        RunConfig.from_dict({"mode": "erm"})


def test_from_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"dataset": "d", "seeds": [4, 5], "mode": "erm"}))
    cfg = RunConfig.from_json(path)
    assert cfg.seeds == (4, 5) and cfg.mode == "erm"


def test_from_json_rejects_malformed(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{nope")
    with pytest.raises(ParseError):
        RunConfig.from_json(path)
    path.write_text('["not", "an", "object"]')
    with pytest.raises(ParseError):
        RunConfig.from_json(path)


def test_with_overrides_validates():
    cfg = RunConfig(dataset="d")
    assert cfg.with_overrides(mode="erm").mode == "erm"
    assert cfg.with_overrides(mode="erm").dataset == "d"
    with pytest.raises(ContractError):
        cfg.with_overrides(batch_size=1)
