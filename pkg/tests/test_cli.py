from pathlib import Path

import pytest

from gsgat import cli


def write_config(tmp_path, out_dir) -> Path:
    path = tmp_path / "exp.cfg"
    path.write_text(f"""
env.scenario = gather
env.grid_size = 9
env.num_agents = 3
env.num_food = 4
env.view_size = 3
env.max_steps = 20
train.feature_dim = 8
train.num_heads = 2
train.head_dim = 4
train.gat_layers = 1
train.batch_size = 4
train.buffer_capacity = 200
train.episodes = 3
train.train_start_episode = 1
train.epsilon_decay_start_episode = 1
train.sinkhorn_iters = 8
run.algorithms = GAT
run.seeds = 1
run.output_dir = {out_dir}
""")
    return path


def test_train_plot_eval_pipeline(tmp_path, capsys):
    out_dir = tmp_path / "runs"
    cfg_path = write_config(tmp_path, out_dir)
    assert cli.main(["train", "--config", str(cfg_path)]) == cli.EXIT_OK
    metrics = out_dir / "GAT" / "seed1" / "metrics.csv"
    assert metrics.exists()
    assert (out_dir / "summary.csv").exists()

    plots_dir = tmp_path / "figs"
    assert cli.main(["plot", "--in", str(out_dir), "--out", str(plots_dir)]) == cli.EXIT_OK
    assert list(plots_dir.glob("*.svg"))

    ckpt = out_dir / "GAT" / "seed1" / "checkpoint.bin"
    assert cli.main(["eval", "--checkpoint", str(ckpt), "--episodes", "2"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "episode 1:" in out and "over 2 episodes" in out


def test_train_out_flag_overrides_config(tmp_path):
    cfg_path = write_config(tmp_path, tmp_path / "ignored")
    override = tmp_path / "elsewhere"
    assert cli.main(["train", "--config", str(cfg_path), "--out", str(override)]) == cli.EXIT_OK
    assert (override / "GAT" / "seed1" / "metrics.csv").exists()
    assert not (tmp_path / "ignored").exists()


def test_output_root_env_var(tmp_path, monkeypatch):
    cfg_path = tmp_path / "exp.cfg"
    cfg_path.write_text(write_config(tmp_path, "rel_runs").read_text()
                        .replace(str(tmp_path / "rel_runs"), "rel_runs"))
    monkeypatch.setenv("GSGAT_OUTPUT_ROOT", str(tmp_path / "rooted"))
    assert cli.main(["train", "--config", str(cfg_path)]) == cli.EXIT_OK
    assert (tmp_path / "rooted" / "rel_runs" / "GAT" / "seed1" / "metrics.csv").exists()


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("env.scenario = gather\ntrain.alpha = -1\ntrain.beta = 2\n")
    assert cli.main(["train", "--config", str(bad)]) == cli.EXIT_CONFIG_ERROR
    assert "config error" in capsys.readouterr().err
    assert cli.main(["train", "--config", str(tmp_path / "missing.cfg")]) \
        == cli.EXIT_CONFIG_ERROR


def test_plot_missing_dir_is_config_error(tmp_path):
    assert cli.main(["plot", "--in", str(tmp_path / "nope")]) == cli.EXIT_CONFIG_ERROR


def test_plot_empty_dir_is_run_failure(tmp_path):
    assert cli.main(["plot", "--in", str(tmp_path)]) == cli.EXIT_RUN_FAILURE


def test_eval_rejects_bad_checkpoint(tmp_path):
    bogus = tmp_path / "bogus.ckpt"
    bogus.write_bytes(b"not a checkpoint")
    assert cli.main(["eval", "--checkpoint", str(bogus)]) == cli.EXIT_CONFIG_ERROR


def test_verify_help_options():
    with pytest.raises(SystemExit) as exc:
        cli.main(["verify", "--level", "medium"])
    assert exc.value.code == 2  # argparse usage error
