"""Experiment configuration: flat `section.key = value` text files.

Three sections: env.* (scenario and world parameters, with reward overrides
under env.reward.*), train.* (every training and architecture knob), and
run.* (the algorithm x seed matrix and output location). Unknown keys are
rejected with their line number; a minimal file needs only env.scenario.
Files written by `save_config` round-trip through `load_config` unchanged.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .gridworld import EnvConfig, SCENARIOS
from .training import ALGORITHMS, TrainConfig


class ConfigError(ValueError):
    """Malformed or invalid experiment configuration."""


@dataclass
class RunConfig:
    algorithms: list[str] = field(default_factory=lambda: ["GAT", "GS-GAT"])
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    output_dir: str = "runs"

    def validate(self) -> None:
        if not self.algorithms:
            raise ConfigError("run.algorithms must list at least one algorithm")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {a!r}; expected one of {ALGORITHMS}")
        if len(set(self.algorithms)) != len(self.algorithms):
            raise ConfigError("run.algorithms contains duplicates")
        if not self.seeds:
            raise ConfigError("run.seeds must list at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("run.seeds contains duplicates")
        if not self.output_dir:
            raise ConfigError("run.output_dir must not be empty")


@dataclass
class ExperimentConfig:
    env: EnvConfig
    train: TrainConfig
    run: RunConfig

    def validate(self) -> None:
        self.env.validate()
        self.train.validate()
        self.run.validate()


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    raise ValueError(f"expected true or false, got {text!r}")


def _parse_str_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _parse_int_list(text: str) -> list[int]:
    return [int(part) for part in _parse_str_list(text)]


_ENV_PARSERS = {
    "scenario": str,
    "grid_size": int,
    "num_agents": int,
    "num_food": int,
    "view_size": int,
    "max_steps": int,
    "seed": int,
}

_TRAIN_PARSERS = {
    "gamma": float, "alpha": float, "beta": float, "gs_loss_weight": float,
    "learning_rate": float, "batch_size": int, "buffer_capacity": int,
    "target_sync_period": int, "episodes": int, "train_start_episode": int,
    "epsilon_start": float, "epsilon_floor": float,
    "epsilon_decay_per_episode": float, "epsilon_decay_start_episode": int,
    "loss_mode": str, "seed": int, "normalize_blend": _parse_bool,
    "feature_dim": int, "num_heads": int, "head_dim": int, "gat_layers": int,
    "nonlinearity": str, "attention_scaled": _parse_bool,
    "gcn_order": int, "gcn_shift": str, "neighbor_count": int,
    "temperature": float, "sinkhorn_iters": int, "noise_scale": float,
    "optimizer": str, "momentum": float,
}

_RUN_PARSERS = {
    "algorithms": _parse_str_list,
    "seeds": _parse_int_list,
    "output_dir": str,
}


def load_config(path) -> ExperimentConfig:
    """Parse and validate an experiment file, applying scenario defaults."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw: dict[str, tuple[int, str]] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r} "
                              f"(first set on line {raw[key][0]})")
        raw[key] = (lineno, value)

    if "env.scenario" not in raw:
        raise ConfigError(f"{path}: missing required key env.scenario")
    scenario = raw["env.scenario"][1]
    if scenario not in SCENARIOS:
        lineno = raw["env.scenario"][0]
        raise ConfigError(f"{path}:{lineno}: unknown scenario {scenario!r}")

    env = EnvConfig.defaults(scenario)
    train = TrainConfig()
    run = RunConfig()
    rewards: dict[str, float] = {}

    for key, (lineno, value) in raw.items():
        if key == "env.scenario":
            continue
        section, _, name = key.partition(".")
        try:
            if section == "env" and name.startswith("reward."):
                rewards[name[len("reward."):]] = float(value)
            elif section == "env" and name in _ENV_PARSERS:
                setattr(env, name, _ENV_PARSERS[name](value))
            elif section == "train" and name in _TRAIN_PARSERS:
                setattr(train, name, _TRAIN_PARSERS[name](value))
            elif section == "run" and name in _RUN_PARSERS:
                setattr(run, name, _RUN_PARSERS[name](value))
            else:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc

    env = replace(env, reward_table=rewards)
    cfg = ExperimentConfig(env=env, train=train, run=run)
    try:
        cfg.validate()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ", ".join(str(x) for x in v)
    return str(v)


def save_config(cfg: ExperimentConfig, path) -> None:
    """Write the canonical flat form; loading it back reproduces `cfg`."""
    lines = [f"env.scenario = {cfg.env.scenario}"]
    for name in sorted(_ENV_PARSERS):
        if name == "scenario":
            continue
        lines.append(f"env.{name} = {_format_value(getattr(cfg.env, name))}")
    for name in sorted(cfg.env.reward_table):
        lines.append(f"env.reward.{name} = {_format_value(cfg.env.reward_table[name])}")
    for name in sorted(_TRAIN_PARSERS):
        lines.append(f"train.{name} = {_format_value(getattr(cfg.train, name))}")
    for name in sorted(_RUN_PARSERS):
        lines.append(f"run.{name} = {_format_value(getattr(cfg.run, name))}")
    Path(path).write_text("\n".join(lines) + "\n")


def output_root(cfg: ExperimentConfig, override: str | None = None) -> Path:
    """Resolve the output directory: flag > GSGAT_OUTPUT_ROOT env var > cwd."""
    if override:
        return Path(override)
    base = os.environ.get("GSGAT_OUTPUT_ROOT")
    out = Path(cfg.run.output_dir)
    if base and not out.is_absolute():
        return Path(base) / out
    return out
