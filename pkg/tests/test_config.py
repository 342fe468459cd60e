import pytest

from unlearn_forge.config import DEFAULTS, from_dict, load_config
from unlearn_forge.errors import ConfigError, InvalidInputError

from conftest import CONFIGS


def test_defaults_are_valid():
    cfg = load_config()
    assert cfg.trial_count == 20
    assert cfg.known_classes == 8
    assert cfg["model"]["hidden"] == [64, 64, 64]
    assert cfg.source == "<defaults>"


@pytest.mark.parametrize("name", ["class_wise.toml", "sample_wise.toml", "smoke.toml"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.source.endswith(name)


def test_unknown_key_names_field():
    with pytest.raises(ConfigError) as err:
        from_dict({"train": {"epoch": 3}})
    assert err.value.field == "train.epoch"


def test_invalid_class_id_names_field():
    with pytest.raises(ConfigError) as err:
        from_dict({"split": {"unlearn_class": 8}})
    assert err.value.field == "split.unlearn_class"
    assert "split.unlearn_class" in str(err.value)


def test_type_mismatch_names_field():
    with pytest.raises(ConfigError) as err:
        from_dict({"train": {"lr": "fast"}})
    assert err.value.field == "train.lr"


def test_trial_count_must_be_positive():
    with pytest.raises(ConfigError) as err:
        from_dict({"experiment": {"trial_count": 0}})
    assert err.value.field == "experiment.trial_count"


def test_attack_must_match_mode():
    with pytest.raises(ConfigError) as err:
        from_dict({"experiment": {"attacks": ["lira"]}})
    assert err.value.field == "experiment.attacks[0]"
    cfg = from_dict({"experiment": {"mode": "sample_wise", "attacks": ["lira", "up"]}})
    assert cfg.ood_classes == 0


def test_unknown_method_names_index():
    with pytest.raises(ConfigError) as err:
        from_dict({"experiment": {"methods": ["retrain", "salun"]}})
    assert err.value.field == "experiment.methods[1]"


def test_orth_layers_must_index_hidden_layer():
    with pytest.raises(ConfigError) as err:
        from_dict({"unlearn": {"our": {"orth_layers": [0, 3]}}})
    assert err.value.field == "unlearn.our.orth_layers[1]"


def test_landscape_trial_bounded_by_trial_count():
    with pytest.raises(ConfigError) as err:
        from_dict({"experiment": {"trial_count": 2}, "landscape": {"trial": 2}})
    assert err.value.field == "landscape.trial"


def test_integer_accepted_for_float_field():
    cfg = from_dict({"train": {"lr": 1}})
    assert cfg["train"]["lr"] == 1.0 and isinstance(cfg["train"]["lr"], float)


def test_random_delta_threshold_resolved_from_model():
    cfg = from_dict({"unlearn": {"our": {"delta_threshold": "random"}}})
    arch = cfg.architecture(0)
    uc = cfg.unlearn_config("our", 3, arch)
    assert uc.delta_threshold > 0
    assert cfg.unlearn_config("our", 3, arch).delta_threshold == uc.delta_threshold


def test_defaults_not_mutated_by_merge():
    before = DEFAULTS["train"]["epochs"]
    from_dict({"train": {"epochs": before + 7}})
    assert DEFAULTS["train"]["epochs"] == before


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_config(tmp_path / "absent.toml")
    assert err.value.field == "--config"


def test_malformed_toml(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[train\nepochs = 3\n")
    with pytest.raises(InvalidInputError):
        load_config(path)


def test_overrides_applied(tmp_path):
    cfg = load_config(CONFIGS / "smoke.toml", master_seed=42, output_dir=str(tmp_path))
    assert cfg.master_seed == 42
    assert str(cfg.output_dir) == str(tmp_path)
    assert load_config(CONFIGS / "smoke.toml", master_seed=None).master_seed == 0


def test_csv_source_requires_paths():
    with pytest.raises(ConfigError) as err:
        from_dict({"data": {"source": "csv"}})
    assert err.value.field == "data.csv_train"
