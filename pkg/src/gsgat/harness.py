"""Experiment-matrix execution and metrics persistence.

Each (algorithm, seed) pair owns a run directory with a streamed metrics.csv
(one row per episode, flushed as written, so a killed run loses at most the
episode in flight) and a final checkpoint. After all runs the summary table
is recomputed from the CSV files themselves, never from in-memory state, and
the learning-curve figures are rendered next to it.
"""

from __future__ import annotations

import csv
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import gridworld as gw
from .config import ExperimentConfig, save_config
from .training import EpisodeRecord, run_training, save_checkpoint

CSV_COLUMNS = ("algorithm", "seed", "episode", "meanReward", "epsilon", "loss",
               "live", "death", "kill", "wallClockMs")

SUMMARY_COLUMNS = ("algorithm", "seeds", "meanReward", "rewardMin", "rewardMax",
                   "live", "death", "kill", "ratio", "ratioIsInfinite")

FINAL_WINDOW = 20  # episodes averaged for the per-run headline reward


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def metrics_row(algorithm: str, seed: int, rec: EpisodeRecord,
                scenario: str) -> list[str]:
    kill = rec.kill if scenario == gw.BATTLE else None
    return [algorithm, str(seed), str(rec.episode), _fmt(rec.mean_reward),
            _fmt(rec.epsilon), _fmt(rec.loss), str(rec.live), str(rec.death),
            _fmt(kill), str(rec.wall_ms)]


def run_dir_for(root: Path, algorithm: str, seed: int) -> Path:
    return Path(root) / algorithm / f"seed{seed}"


def run_single(cfg: ExperimentConfig, algorithm: str, seed: int,
               root: Path) -> Path:
    """One training run streaming its per-episode rows to metrics.csv."""
    run_dir = run_dir_for(root, algorithm, seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    train_cfg = replace(cfg.train, seed=seed)
    csv_path = run_dir / "metrics.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        fh.flush()

        def on_episode(rec: EpisodeRecord) -> None:
            writer.writerow(metrics_row(algorithm, seed, rec, cfg.env.scenario))
            fh.flush()

        _, nets = run_training(cfg.env, train_cfg, algorithm, on_episode)
    save_checkpoint(run_dir / "checkpoint.bin", nets.local, algorithm,
                    extra={"config": _config_snapshot(cfg, algorithm, seed)})
    return csv_path


def _config_snapshot(cfg: ExperimentConfig, algorithm: str, seed: int) -> dict:
    env = {k: v for k, v in vars(cfg.env).items() if k != "reward_table"}
    env["reward_table"] = dict(cfg.env.reward_table)
    train = dict(vars(replace(cfg.train, seed=seed)))
    return {"env": env, "train": train, "algorithm": algorithm, "seed": seed}


def _matrix_worker(args) -> tuple[str, int, str | None]:
    cfg, algorithm, seed, root = args
    try:
        run_single(cfg, algorithm, seed, root)
        return algorithm, seed, None
    except Exception:
        return algorithm, seed, traceback.format_exc()


def run_matrix(cfg: ExperimentConfig, root: Path, jobs: int = 1,
               log=print) -> int:
    """Run every (algorithm, seed) cell; 0 when all succeeded, 1 otherwise.

    A failing run is recorded in its directory and the rest continue. The
    summary and plots cover whatever completed.
    """
    cfg.validate()
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    save_config(cfg, root / "config.txt")
    cells = [(cfg, a, s, root) for a in cfg.run.algorithms for s in cfg.run.seeds]
    failures: list[tuple[str, int]] = []

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_matrix_worker, cells))
    else:
        results = [_matrix_worker(c) for c in cells]

    for algorithm, seed, err in results:
        if err is None:
            log(f"run {algorithm} seed {seed}: ok")
        else:
            failures.append((algorithm, seed))
            run_dir = run_dir_for(root, algorithm, seed)
            run_dir.mkdir(parents=True, exist_ok=True)
            (run_dir / "error.txt").write_text(err)
            log(f"run {algorithm} seed {seed}: FAILED (see {run_dir / 'error.txt'})")

    summary = summarize(root)
    write_summary(summary, root / "summary.csv")
    log(f"summary: {root / 'summary.csv'}")
    from .plots import emit_plots  # deferred: pulls in matplotlib
    for p in emit_plots(root, log=log):
        log(f"figure: {p}")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# Reading results back
# ---------------------------------------------------------------------------


@dataclass
class RunSeries:
    algorithm: str
    seed: int
    episodes: list[int]
    mean_rewards: list[float]
    live: list[int]
    death: list[int]
    kill: list[int | None]


def read_metrics_csv(path) -> RunSeries:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(CSV_COLUMNS):
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return RunSeries(
        algorithm=rows[0]["algorithm"],
        seed=int(rows[0]["seed"]),
        episodes=[int(r["episode"]) for r in rows],
        mean_rewards=[float(r["meanReward"]) for r in rows],
        live=[int(r["live"]) for r in rows],
        death=[int(r["death"]) for r in rows],
        kill=[int(r["kill"]) if r["kill"] else None for r in rows],
    )


def discover_runs(root) -> list[RunSeries]:
    series = []
    for path in sorted(Path(root).glob("**/metrics.csv")):
        try:
            series.append(read_metrics_csv(path))
        except ValueError:
            continue  # skip empty or foreign CSVs
    return series


def final_window_mean(series: RunSeries, window: int = FINAL_WINDOW) -> float:
    tail = series.mean_rewards[-window:]
    return float(np.mean(tail))


def summarize(root) -> list[dict]:
    """Aggregate per-algorithm rows in the structure of the results tables.

    Per run: the mean reward over the final window and the final episode's
    team counts. Across seeds: mean reward with its min/max band, mean counts,
    and the survivors-to-deaths (gather) or kills-to-deaths (battle) ratio of
    the mean counts.
    """
    by_algorithm: dict[str, list[RunSeries]] = {}
    for s in discover_runs(root):
        by_algorithm.setdefault(s.algorithm, []).append(s)
    rows = []
    for algorithm in sorted(by_algorithm):
        runs = sorted(by_algorithm[algorithm], key=lambda s: s.seed)
        rewards = [final_window_mean(s) for s in runs]
        live = float(np.mean([s.live[-1] for s in runs]))
        death = float(np.mean([s.death[-1] for s in runs]))
        kills = [s.kill[-1] for s in runs if s.kill[-1] is not None]
        kill = float(np.mean(kills)) if kills else None
        numerator = kill if kill is not None else live
        infinite = death == 0.0
        ratio = numerator if infinite else numerator / death
        rows.append({
            "algorithm": algorithm,
            "seeds": [s.seed for s in runs],
            "meanReward": float(np.mean(rewards)),
            "rewardMin": float(np.min(rewards)),
            "rewardMax": float(np.max(rewards)),
            "live": live,
            "death": death,
            "kill": kill,
            "ratio": ratio,
            "ratioIsInfinite": infinite,
        })
    return rows


def write_summary(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for r in rows:
            writer.writerow([
                r["algorithm"], " ".join(str(s) for s in r["seeds"]),
                _fmt(r["meanReward"]), _fmt(r["rewardMin"]), _fmt(r["rewardMax"]),
                _fmt(r["live"]), _fmt(r["death"]), _fmt(r["kill"]),
                _fmt(r["ratio"]), "true" if r["ratioIsInfinite"] else "false",
            ])
