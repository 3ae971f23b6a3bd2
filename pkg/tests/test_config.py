import json

import pytest

from motionpref import config


def test_defaults_follow_published_recipe():
    cfg = config.resolve({})
    assert cfg["dpo"]["beta"] == 2500.0
    assert cfg["dpo"]["learning_rate"] == 1e-8
    assert cfg["dpo"]["warmup_steps"] == 2500
    assert cfg["train"]["audio"]["learning_rate"] == 1e-5
    assert cfg["train"]["audio"]["batch_size"] == 8
    assert cfg["dpo"]["min_margin"] == 0.5 and cfg["dpo"]["shared_noise"] is True
    assert (cfg["bench"]["T"], cfg["bench"]["H"], cfg["bench"]["W"]) == (16, 32, 32)
    assert (cfg["codec"]["d"], cfg["model"]["d"], cfg["model"]["n_blocks"]) == (16, 16, 2)


def test_unknown_key_names_path():
    with pytest.raises(config.ConfigError) as err:
        config.resolve({"train": {"audio": {"lr": 1.0}}})
    assert err.value.path == "train.audio.lr"
    with pytest.raises(config.ConfigError) as err:
        config.resolve({"extras": {}})
    assert err.value.path == "extras"


def test_type_and_value_checks():
    with pytest.raises(config.ConfigError):
        config.resolve({"bench": {"T": "16"}})
    with pytest.raises(config.ConfigError):
        config.resolve({"bench": {"n_tasks": True}})
    with pytest.raises(config.ConfigError):
        config.resolve({"dpo": {"omega": "cubic"}})
    with pytest.raises(config.ConfigError):
        config.resolve({"dpo": {"beta": 0}})
    assert config.resolve({"dpo": {"beta": 10}})["dpo"]["beta"] == 10.0


def test_load_and_dump(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"bench": {"n_tasks": 3}}))
    cfg = config.load(tmp_path / "c.json")
    config.dump(cfg, tmp_path / "out.json")
    assert config.load(tmp_path / "out.json") == cfg
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(config.ConfigError):
        config.load(tmp_path / "bad.json")


def test_desk_config_is_valid(desk_cfg):
    assert desk_cfg["dpo"]["beta"] == 2500.0
    assert desk_cfg["train"]["audio"]["schedule"] == "cosine"
