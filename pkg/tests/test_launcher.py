"""
Tests for the command-line launcher
"""

import pytest

import launcher


def test_flags_map_to_config_keys():
    args = launcher.build_parser().parse_args(
        ["train", "--inner-lr", "0.05", "--meta-batch", "8", "--order", "1", "--task", "synthcls"])
    cfg = launcher.resolve_config(args)
    assert cfg.inner_lr == 0.05
    assert cfg.meta_batch == 8
    assert cfg.order == 1
    assert cfg.way == 5


def test_sweep_lists_parse():
    args = launcher.build_parser().parse_args(["sweep-lr", "--alphas", "0.001,0.1"])
    assert launcher.resolve_config(args).alphas == [0.001, 0.1]


def test_bundled_configs_resolve():
    for name in ("sinusoid.json", "synthcls.json", "synthcls_5shot.toml"):
        args = launcher.build_parser().parse_args(["train", "--config", str(launcher.ROOT / "config" / name)])
        launcher.resolve_config(args)


def test_bad_config_exits_with_usage_code(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"mode": "adaptive"}')
    assert launcher.main(["train", "--config", str(path), "--out", str(tmp_path / "run")]) == 2


def test_unknown_mode_flag_is_rejected():
    with pytest.raises(SystemExit):
        launcher.main(["train", "--mode", "adaptive"])


def test_train_end_to_end(tmp_path):
    out = tmp_path / "run"
    config = tmp_path / "small.toml"
    config.write_text("hidden = [8]\neval_tasks = 2\neval_inner_steps = 2\nmonitor_tasks = 0\n")
    code = launcher.main(["train", "--config", str(config), "--iterations", "0", "--out", str(out)])
    assert code == 0
    assert (out / "metrics.csv").exists()
    assert launcher.main(["plot", str(out / "adaptation.csv"), "--kind", "adaptation_curve"]) == 0
    assert (out / "adaptation_adaptation_curve.svg").exists()
