"""Flat key=value config files, dotted overrides, serialization, hashing."""

import numpy as np
import pytest

from evidscan.config import (
    RETINAMNIST_PRESET,
    TrainConfig,
    apply_settings,
    config_hash,
    parse_config_text,
    serialize_config,
)


def test_defaults_follow_reference_recipe():
    cfg = TrainConfig()
    assert cfg.learning_rate == 1e-3
    assert (cfg.beta1, cfg.beta2) == (0.9, 0.999)
    assert cfg.eps == 1e-8
    assert cfg.rap.kl_coef == 5e-3
    assert cfg.rap.kl_scale == 1.2


def test_retinamnist_preset_values():
    assert RETINAMNIST_PRESET == {"epochs": 100, "batch_size": 96,
                                  "scale": "B", "image_size": 28}


def test_parse_config_text():
    text = """
    # comment line
    epochs = 10
    scale = S

    rap.kl_coef = 0.01
    hac.mode = adapter
    """
    settings = parse_config_text(text)
    assert settings == {"epochs": "10", "scale": "S",
                        "rap.kl_coef": "0.01", "hac.mode": "adapter"}


def test_parse_rejects_malformed_line():
    with pytest.raises(ValueError):
        parse_config_text("epochs 10")


def test_apply_settings_dotted_keys():
    cfg = TrainConfig()
    apply_settings(cfg, {"epochs": "7", "learning_rate": "5e-4",
                         "rap.kl_coef": "0.02", "hac.enabled": "false"})
    assert cfg.epochs == 7
    assert cfg.learning_rate == 5e-4
    assert cfg.rap.kl_coef == 0.02
    assert cfg.hac.enabled is False


def test_apply_settings_unknown_key():
    with pytest.raises(ValueError):
        apply_settings(TrainConfig(), {"not_a_field": "1"})
    with pytest.raises(ValueError):
        apply_settings(TrainConfig(), {"warp.factor": "1"})


def test_config_hash_ignores_epoch_budget():
    a = TrainConfig(epochs=10)
    b = TrainConfig(epochs=200)
    assert config_hash(a) == config_hash(b)


def test_serialize_round_trip():
    cfg = TrainConfig(epochs=42, scale="S", seed=9)
    cfg.rap.nll_form = "log_marginal"
    text = serialize_config(cfg)
    back = TrainConfig()
    apply_settings(back, parse_config_text(text))
    assert back.epochs == 42
    assert back.scale == "S"
    assert back.rap.nll_form == "log_marginal"
    assert config_hash(back) == config_hash(cfg)


def test_validate_rejects_bad_values():
    bad = TrainConfig(epochs=-1)
    with pytest.raises(ValueError):
        bad.validate()
    bad = TrainConfig(batch_size=-1)
    with pytest.raises(ValueError):
        bad.validate()
    bad = TrainConfig(scale="Q")
    with pytest.raises(ValueError):
        bad.validate()
