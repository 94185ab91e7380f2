import json

import pytest

from harness.config import ConfigError, RunConfig, load_run_config, read_config_file, save_run_config


def test_family_defaults_apply():
    sinusoid = load_run_config(overrides={"task": "sinusoid"})
    assert (sinusoid.shot, sinusoid.hidden, sinusoid.inner_lr) == (10, [40, 40], 0.01)
    synth = load_run_config(overrides={"task": "synthcls"})
    assert (synth.way, synth.shot, synth.query, synth.hidden, synth.inner_lr) == (5, 1, 15, [64, 64], 0.1)


def test_layers_override_in_order(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"task": "synthcls", "shot": 5, "seed": 3}))
    cfg = load_run_config(path, {"seed": 8, "mode": None})
    assert cfg.shot == 5
    assert cfg.seed == 8
    assert cfg.mode == "maml"


def test_toml_config(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('task = "synthcls"\nmode = "weightgen"\nhidden = [32, 32]\nthreshold = 1.2\n')
    cfg = load_run_config(path)
    assert cfg.mode == "weightgen"
    assert cfg.hidden == [32, 32]
    assert cfg.to_meta_config("cross_entropy").weight_config.threshold == 1.2


def test_comma_separated_lists():
    cfg = load_run_config(overrides={"alphas": "0.001,0.01", "hidden": "20,20"})
    assert cfg.alphas == [0.001, 0.01]
    assert cfg.hidden == [20, 20]


def test_unknown_keys_are_rejected(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"learning_rate": 0.1}))
    with pytest.raises(ConfigError):
        read_config_file(path)
    with pytest.raises(ConfigError):
        load_run_config(overrides={"beta": 0.1})


def test_nested_tables_are_rejected(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("[pool]\ncapacity = 3\n")
    with pytest.raises(ConfigError):
        read_config_file(path)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "absent.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError):
        read_config_file(broken)


@pytest.mark.parametrize("changes", [
    {"task": "omniglot"},
    {"task": "dataset:"},
    {"mode": "adaptive"},
    {"order": 3},
    {"meta_batch": 0},
    {"iterations": -1},
    {"task": "synthcls", "way": 1},
    {"inner_lr": 0.0},
    {"alphas": []},
])
def test_invalid_settings(changes):
    with pytest.raises(ConfigError):
        load_run_config(overrides=changes)


def test_maml_mode_maps_to_uniform_combination():
    meta = load_run_config().to_meta_config("mse")
    assert meta.mode == "uniform"
    assert meta.order == "second"
    assert meta.way == 1
    assert load_run_config(overrides={"order": 1}).to_meta_config("mse").order == "first"


def test_dataset_task_path():
    cfg = RunConfig(task="dataset:/data/mini").validate()
    assert cfg.task_family == "dataset"
    assert str(cfg.dataset_path) == "/data/mini"
    assert cfg.is_classification


def test_saved_config_reloads_identically(tmp_path):
    cfg = load_run_config(overrides={"task": "synthcls", "mode": "uncertainty", "seed": 4})
    path = save_run_config(cfg, tmp_path / "config.json")
    assert load_run_config(path) == cfg
