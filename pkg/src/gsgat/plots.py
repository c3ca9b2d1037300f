"""Static learning-curve figures rendered from the metrics CSVs.

One chart overlays every algorithm found under the directory: the mean
reward per episode across seeds as a line, with the min/max envelope shaded.
Each baseline/GS pair present additionally gets its own two-curve ablation
chart. Output is SVG, written next to the CSVs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .harness import RunSeries, discover_runs

PALETTE = {
    "GCN": "tab:orange",
    "GS-GCN": "tab:red",
    "GAT": "tab:blue",
    "GS-GAT": "tab:green",
}


def _warn(log, message: str) -> None:
    log(f"warning: {message}")


def _bands(runs: list[RunSeries]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-episode mean/min/max across seeds, truncated to the shortest run."""
    n = min(len(r.mean_rewards) for r in runs)
    stack = np.array([r.mean_rewards[:n] for r in runs])
    episodes = np.array(runs[0].episodes[:n])
    return episodes, stack.mean(axis=0), stack.min(axis=0), stack.max(axis=0)


def _draw(ax, runs: list[RunSeries], label: str) -> None:
    episodes, mean, lo, hi = _bands(runs)
    color = PALETTE.get(label)
    ax.fill_between(episodes, lo, hi, alpha=0.2, color=color, linewidth=0)
    ax.plot(episodes, mean, label=f"{label} ({len(runs)} seeds)", color=color)


def _scenario_label(root: Path) -> str | None:
    cfg = root / "config.txt"
    if cfg.exists():
        for line in cfg.read_text().splitlines():
            if line.startswith("env.scenario"):
                return line.split("=", 1)[1].strip()
    return None


def emit_plots(csv_dir, out_dir=None, log=print) -> list[Path]:
    """Render the overview chart plus one chart per baseline/GS pair."""
    csv_dir = Path(csv_dir)
    out_dir = Path(out_dir) if out_dir else csv_dir
    by_algorithm: dict[str, list[RunSeries]] = {}
    for s in discover_runs(csv_dir):
        by_algorithm.setdefault(s.algorithm, []).append(s)
    if not by_algorithm:
        _warn(log, f"no usable metrics.csv under {csv_dir}; nothing plotted")
        return []
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario = _scenario_label(csv_dir)
    title_suffix = f" ({scenario})" if scenario else ""
    written: list[Path] = []

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for algorithm in sorted(by_algorithm):
        _draw(ax, by_algorithm[algorithm], algorithm)
    ax.set_xlabel("episode")
    ax.set_ylabel("mean reward")
    ax.set_title(f"Learning curves{title_suffix}")
    ax.legend()
    fig.tight_layout()
    name = f"learning_curves_{scenario}.svg" if scenario else "learning_curves.svg"
    path = out_dir / name
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    for base in ("GCN", "GAT"):
        pair = f"GS-{base}"
        if base in by_algorithm and pair in by_algorithm:
            fig, ax = plt.subplots(figsize=(7, 4.5))
            _draw(ax, by_algorithm[base], base)
            _draw(ax, by_algorithm[pair], pair)
            ax.set_xlabel("episode")
            ax.set_ylabel("mean reward")
            ax.set_title(f"{pair} vs {base}{title_suffix}")
            ax.legend()
            fig.tight_layout()
            path = out_dir / f"ablation_{base.lower()}_vs_{pair.lower()}.svg"
            fig.savefig(path)
            plt.close(fig)
            written.append(path)
    return written
