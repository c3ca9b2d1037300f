import csv

import numpy as np
import pytest

from gsgat import gridworld as gw
from gsgat.config import ExperimentConfig, RunConfig
from gsgat.harness import (
    CSV_COLUMNS,
    discover_runs,
    final_window_mean,
    read_metrics_csv,
    run_dir_for,
    run_matrix,
    run_single,
    summarize,
)
from gsgat.plots import emit_plots
from gsgat.training import TrainConfig, load_checkpoint


@pytest.fixture(scope="module")
def matrix_dir(tmp_path_factory):
    """A small completed 2-algorithm x 2-seed matrix, shared across tests."""
    root = tmp_path_factory.mktemp("matrix")
    cfg = ExperimentConfig(
        env=gw.EnvConfig(scenario=gw.GATHER, grid_size=9, num_agents=3,
                         num_food=4, view_size=3, max_steps=30, seed=2),
        train=TrainConfig(feature_dim=8, num_heads=2, head_dim=4, gat_layers=1,
                          batch_size=4, buffer_capacity=200, episodes=6,
                          train_start_episode=2, target_sync_period=40,
                          sinkhorn_iters=8, epsilon_decay_start_episode=2),
        run=RunConfig(algorithms=["GAT", "GS-GAT"], seeds=[1, 2],
                      output_dir=str(root)),
    )
    status = run_matrix(cfg, root, jobs=1, log=lambda *_: None)
    return root, cfg, status


def test_matrix_layout_and_exit_status(matrix_dir):
    root, cfg, status = matrix_dir
    assert status == 0
    for algorithm in cfg.run.algorithms:
        for seed in cfg.run.seeds:
            run_dir = run_dir_for(root, algorithm, seed)
            assert (run_dir / "metrics.csv").exists()
            assert (run_dir / "checkpoint.bin").exists()
    assert (root / "summary.csv").exists()
    assert (root / "config.txt").exists()


def test_csv_schema_and_row_count(matrix_dir):
    root, cfg, _ = matrix_dir
    path = run_dir_for(root, "GAT", 1) / "metrics.csv"
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    assert header == list(CSV_COLUMNS)
    assert len(rows) == cfg.train.episodes
    assert [int(r[2]) for r in rows] == list(range(1, cfg.train.episodes + 1))
    # gather rows leave the battle-only kill column empty
    assert all(r[8] == "" for r in rows)
    assert all(r[0] == "GAT" and r[1] == "1" for r in rows)


def test_checkpoint_carries_config_snapshot(matrix_dir):
    root, cfg, _ = matrix_dir
    header, _ = load_checkpoint(run_dir_for(root, "GS-GAT", 2) / "checkpoint.bin")
    snapshot = header["extra"]["config"]
    assert snapshot["algorithm"] == "GS-GAT"
    assert snapshot["seed"] == 2
    assert snapshot["env"]["grid_size"] == 9
    assert snapshot["train"]["seed"] == 2


def test_read_metrics_roundtrip(matrix_dir):
    root, cfg, _ = matrix_dir
    series = read_metrics_csv(run_dir_for(root, "GAT", 2) / "metrics.csv")
    assert series.algorithm == "GAT"
    assert series.seed == 2
    assert len(series.mean_rewards) == cfg.train.episodes
    assert series.kill == [None] * cfg.train.episodes


def test_summary_recomputed_from_csv(matrix_dir):
    root, cfg, _ = matrix_dir
    rows = summarize(root)
    assert [r["algorithm"] for r in rows] == ["GAT", "GS-GAT"]
    for row in rows:
        runs = [s for s in discover_runs(root) if s.algorithm == row["algorithm"]]
        expected = float(np.mean([final_window_mean(s) for s in runs]))
        assert row["meanReward"] == pytest.approx(expected)
        assert row["seeds"] == [1, 2]
    # the written summary parses back to the same numbers
    with open(root / "summary.csv", newline="") as fh:
        written = list(csv.DictReader(fh))
    for mem, disk in zip(rows, written):
        assert disk["algorithm"] == mem["algorithm"]
        assert float(disk["meanReward"]) == mem["meanReward"]


def test_plots_emitted(matrix_dir):
    root, _, _ = matrix_dir
    names = {p.name for p in root.glob("*.svg")}
    assert "learning_curves_gather.svg" in names
    assert "ablation_gat_vs_gs-gat.svg" in names


def test_plot_single_seed_band_collapses(matrix_dir, tmp_path):
    root, _, _ = matrix_dir
    only = tmp_path / "single"
    (only / "GAT" / "seed1").mkdir(parents=True)
    src = run_dir_for(root, "GAT", 1) / "metrics.csv"
    (only / "GAT" / "seed1" / "metrics.csv").write_text(src.read_text())
    written = emit_plots(only, log=lambda *_: None)
    assert len(written) == 1  # overview only; no pair present


def test_plot_empty_dir_warns_and_skips(tmp_path):
    messages = []
    written = emit_plots(tmp_path, log=messages.append)
    assert written == []
    assert any("nothing plotted" in m for m in messages)


def test_matrix_continues_after_run_failure(tmp_path, monkeypatch):
    from gsgat import harness

    real_run_single = harness.run_single

    def flaky_run_single(cfg, algorithm, seed, root):
        if algorithm == "GCN":
            raise RuntimeError("synthetic failure")
        return real_run_single(cfg, algorithm, seed, root)

    monkeypatch.setattr(harness, "run_single", flaky_run_single)
    cfg = ExperimentConfig(
        env=gw.EnvConfig(scenario=gw.GATHER, grid_size=9, num_agents=3,
                         num_food=4, view_size=3, max_steps=20, seed=2),
        train=TrainConfig(feature_dim=8, num_heads=2, head_dim=4, gat_layers=1,
                          batch_size=4, buffer_capacity=200, episodes=2,
                          train_start_episode=1, epsilon_decay_start_episode=1),
        run=RunConfig(algorithms=["GCN", "GAT"], seeds=[1], output_dir=str(tmp_path)),
    )
    status = run_matrix(cfg, tmp_path, jobs=1, log=lambda *_: None)
    assert status == 1
    error_text = (run_dir_for(tmp_path, "GCN", 1) / "error.txt").read_text()
    assert "synthetic failure" in error_text
    assert (run_dir_for(tmp_path, "GAT", 1) / "metrics.csv").exists()


def test_parallel_jobs_match_serial(tmp_path):
    cfg = ExperimentConfig(
        env=gw.EnvConfig(scenario=gw.GATHER, grid_size=9, num_agents=3,
                         num_food=4, view_size=3, max_steps=20, seed=2),
        train=TrainConfig(feature_dim=8, num_heads=2, head_dim=4, gat_layers=1,
                          batch_size=4, buffer_capacity=200, episodes=3,
                          train_start_episode=1, epsilon_decay_start_episode=1),
        run=RunConfig(algorithms=["GAT"], seeds=[1, 2], output_dir="unused"),
    )
    serial = tmp_path / "serial"
    parallel = tmp_path / "parallel"
    assert run_matrix(cfg, serial, jobs=1, log=lambda *_: None) == 0
    assert run_matrix(cfg, parallel, jobs=2, log=lambda *_: None) == 0
    for seed in (1, 2):
        a = (run_dir_for(serial, "GAT", seed) / "metrics.csv").read_text()
        b = (run_dir_for(parallel, "GAT", seed) / "metrics.csv").read_text()
        # identical apart from wall-clock values
        strip = lambda text: [",".join(line.split(",")[:-1])
                              for line in text.splitlines()]
        assert strip(a) == strip(b)
