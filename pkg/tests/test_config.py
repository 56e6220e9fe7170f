import json

import pytest

from core.config import (
    AppConfig,
    TrainConfig,
    build_config,
    config_hash,
    garment_ranges,
    load_config,
    load_defaults,
)
from core.errors import ConfigError


def test_defaults_are_desk_scale():
    config = AppConfig()
    assert config.train.negatives == 150
    assert config.train.temperature == pytest.approx(0.07)
    assert config.render.points == 2048
    assert config.sim.dt <= 0.02


def test_bundled_presets():
    assert set(load_defaults()["presets"]) == {"desk", "full", "test"}
    assert load_config(preset="full").render.points == 10000


def test_test_preset_overrides_sections():
    config = load_config(preset="test")
    assert config.render.points == 256
    assert config.descriptor.feature_dim == 16
    assert config.train.total_batches == 3
    assert config.sim.dt == AppConfig().sim.dt


def test_user_file_overrides_preset(tmp_path):
    path = tmp_path / "override.json"
    path.write_text(json.dumps({"train": {"alpha": 0.5}}))
    config = load_config(str(path), preset="test")
    assert config.train.alpha == 0.5
    assert config.train.negatives == 20


def test_env_seed_override(monkeypatch):
    monkeypatch.setenv("CORRGARMENT_SEED", "7")
    assert load_config(preset="desk").train.seed == 7


def test_unknown_preset():
    with pytest.raises(ConfigError, match="Unknown preset"):
        load_config(preset="nope")


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="Unknown config sections"):
        build_config({"network": {}})
    with pytest.raises(ConfigError, match="Unknown keys"):
        build_config({"train": {"tau": 0.1}})


@pytest.mark.parametrize("values", [
    {"alpha": -1.0},
    {"alpha": 1.5},
    {"temperature": 0.0},
    {"negatives": 0},
    {"use_cross_deformation": False, "use_cross_object": False},
])
def test_train_invariants(values):
    with pytest.raises(ConfigError):
        TrainConfig(**values)


def test_alpha_one_allowed():
    assert TrainConfig(alpha=1.0).alpha == 1.0


def test_config_hash_is_stable():
    assert config_hash(TrainConfig()) == config_hash(TrainConfig())
    assert config_hash(TrainConfig()) != config_hash(TrainConfig(seed=1))


def test_garment_ranges():
    ranges = garment_ranges("trouser")
    assert set(ranges) >= {"leg_length", "leg_width"}
    with pytest.raises(ConfigError):
        garment_ranges("hat")
