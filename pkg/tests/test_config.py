import logging

import pytest
import yaml

from bmdfusion.config import (
    DEFAULT_SEED,
    FusionModelConfig,
    ImageEncoderConfig,
    OptimizerConfig,
    ScreeningConfig,
    config_hash,
    load_run_config,
    parse_run_config,
)
from bmdfusion.errors import ConfigError
from bmdfusion.utils.setup import log_level, setup_logging
from tests.conftest import tiny_model_dict


def test_defaults_are_valid():
    cfg = FusionModelConfig()
    cfg.validate()
    assert cfg.fusion_mode == "bidirectional"
    assert cfg.loss == "weighted_smooth_l1"
    assert cfg.head_input_width == cfg.image.projection_dim + cfg.metadata.embed_dim
    assert cfg.metadata.input_dim == sum(w for _, w in cfg.metadata.field_spec)
    assert cfg.seed == DEFAULT_SEED


def test_round_trip_keeps_the_hash(make_config):
    cfg = make_config(fusion_mode="img_to_meta")
    again = FusionModelConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)
    assert len(config_hash(cfg)) == 16


def test_hash_tracks_every_field(make_config):
    base = config_hash(make_config())
    assert config_hash(make_config()) == base
    assert config_hash(make_config(epochs=2)) != base
    assert config_hash(make_config(optimizer=OptimizerConfig(lr=2e-3))) != base


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError, match="learning_rate"):
        FusionModelConfig.from_dict({"learning_rate": 0.1})
    with pytest.raises(ConfigError, match="ImageEncoderConfig"):
        FusionModelConfig.from_dict({"image": {"size": 32}})


def test_replace_validates(make_config):
    cfg = make_config()
    with pytest.raises(ConfigError):
        cfg.replace(fusion_mode="late")
    with pytest.raises(ConfigError):
        cfg.replace(loss="l2")
    with pytest.raises(ConfigError):
        cfg.replace(image=ImageEncoderConfig(image_size=16, conv_channels=(4, 8), kernel_sizes=(3, 3),
                                             projection_dim=12))


def test_branch_dims_must_match_the_encoders():
    data = tiny_model_dict()
    data["meta_to_img"]["query_dim"] = 4
    with pytest.raises(ConfigError, match="meta_to_img"):
        FusionModelConfig.from_dict(data)
    data = tiny_model_dict()
    data["img_to_meta"]["n_heads"] = 3
    with pytest.raises(ConfigError, match="divisible"):
        FusionModelConfig.from_dict(data)


def test_screening_thresholds():
    cfg = ScreeningConfig()
    assert cfg.bmd_threshold == pytest.approx(1.038 - 0.139)
    assert cfg.osteoporosis_threshold == pytest.approx(1.038 - 2.5 * 0.139)
    with pytest.raises(ConfigError):
        ScreeningConfig.from_dict({"ci_level": 1.5})


# run config files


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


def test_missing_config_means_defaults():
    run = load_run_config(None)
    assert run.model == FusionModelConfig()
    assert run.command("screen") == {}


def test_yaml_run_config(tmp_path):
    path = write_yaml(tmp_path / "run.yaml", {
        "schema_version": 1,
        "model": tiny_model_dict(),
        "seed": 3,
        "workers": 2,
        "screen": {"screening": {"n_boot": 100}},
        "ablate": {"variants": ["bidirectional", "concat"]},
    })
    run = load_run_config(path)
    assert run.model.image.image_size == 16
    assert run.model.image.conv_channels == (4, 8)
    assert run.seed == 3 and run.workers == 2
    assert run.command("screen")["screening"] == ScreeningConfig(n_boot=100)
    assert run.command("ablate")["variants"] == ["bidirectional", "concat"]
    assert run.to_dict()["screen"]["screening"]["n_boot"] == 100


def test_bad_run_configs(tmp_path):
    with pytest.raises(ConfigError, match="unknown keys"):
        load_run_config(write_yaml(tmp_path / "a.yaml", {"modle": {}}))
    with pytest.raises(ConfigError, match="schema_version"):
        load_run_config(write_yaml(tmp_path / "b.yaml", {"schema_version": 2}))
    with pytest.raises(ConfigError, match="perturb"):
        parse_run_config({"perturb": {"n_folds": 3}})
    (tmp_path / "c.yaml").write_text("model: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="yaml"):
        load_run_config(tmp_path / "c.yaml")
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.yaml")
    (tmp_path / "d.yaml").write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="mapping"):
        load_run_config(tmp_path / "d.yaml")


# logging


@pytest.mark.parametrize("value, level", [
    ("DEBUG", logging.DEBUG),
    ("warning", logging.WARNING),
    ("nonsense", logging.INFO),
])
def test_log_level_from_environment(monkeypatch, value, level):
    monkeypatch.setenv("XATTN_LOG", value)
    assert log_level() == level


def test_setup_logging_defaults_to_info(monkeypatch):
    root = logging.getLogger()
    monkeypatch.setattr(root, "handlers", list(root.handlers))
    monkeypatch.setattr(root, "level", root.level)
    monkeypatch.delenv("XATTN_LOG", raising=False)
    assert setup_logging() == logging.INFO
    assert root.level == logging.INFO
    assert setup_logging(logging.ERROR) == logging.ERROR
