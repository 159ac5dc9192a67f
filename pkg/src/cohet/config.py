"""Run configuration: documented key=value sections, defaults for everything.

The format is INI-like: ``[section]`` headers, ``key = value`` lines,
``#``/``;`` comments.  Unknown sections or keys are rejected with the
offending line number; so are type and constraint violations.  An empty
file yields the all-defaults configuration.  ``render_config`` produces a
canonical echo that re-parses to an identical RunConfig (floats are
written with repr, which round-trips exactly).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .envs import SCENARIOS, ScenarioSpec
from .policy import ModelDims
from .trainer import ALGO_MODES, AlgoSettings, PPOConfig


class ConfigError(ValueError):
    """Invalid configuration file content."""


@dataclass
class RunBlock:
    """Run orchestration: seeds, budget, parallel lanes, output."""

    seeds: tuple[int, ...] = (0,)
    iterations: int = 300
    n_envs: int = 4
    out_dir: str = "runs"
    checkpoint_interval: int = 50

    def __post_init__(self):
        if len(self.seeds) < 1:
            raise ValueError("seeds must contain at least one entry")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.n_envs < 1:
            raise ValueError("n_envs must be >= 1")
        if self.checkpoint_interval < 1:
            raise ValueError("checkpoint_interval must be >= 1")


@dataclass
class RunConfig:
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    algo: AlgoSettings = field(default_factory=AlgoSettings)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    model: ModelDims = field(default_factory=ModelDims)
    run: RunBlock = field(default_factory=RunBlock)


# value parsers -------------------------------------------------------------

def _p_int(s: str) -> int:
    return int(s)


def _p_float(s: str) -> float:
    return float(s)


def _p_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _p_str(s: str) -> str:
    return s.strip()


def _p_pair(s: str) -> tuple[float, float]:
    parts = [p.strip() for p in s.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated numbers, got {s!r}")
    return (float(parts[0]), float(parts[1]))


def _p_int_list(s: str) -> tuple[int, ...]:
    parts = [p.strip() for p in s.split(",") if p.strip()]
    if not parts:
        raise ValueError("expected at least one integer")
    return tuple(int(p) for p in parts)


# (section, key) -> (dataclass field name, parser)
_SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "scenario": {
        "name": ("scenario", _p_str),
        "n_agents": ("n_agents", _p_int),
        "world_half_extent": ("world_half_extent", _p_float),
        "horizon": ("horizon", _p_int),
        "dt": ("dt", _p_float),
        "drag": ("drag", _p_float),
        "sparse": ("sparse_rewards", _p_bool),
        "occupancy_bonus": ("occupancy_bonus", _p_float),
        "collision_penalty": ("collision_penalty", _p_float),
        "velocity_bonus": ("velocity_bonus", _p_float),
        "distance_penalty": ("distance_penalty", _p_float),
        "n_obstacles": ("n_obstacles", _p_int),
        "body_radius_range": ("body_radius_range", _p_pair),
        "max_speed_range": ("max_speed_range", _p_pair),
        "max_force_range": ("max_force_range", _p_pair),
        "obs_radius_range": ("obs_radius_range", _p_pair),
        "obstacle_radius_range": ("obstacle_radius_range", _p_pair),
    },
    "algo": {
        "mode": ("mode", _p_str),
        "beta": ("beta", _p_float),
        "intrinsic_norm": ("intrinsic_norm", _p_str),
        "backprop_through_comm": ("backprop_through_comm", _p_bool),
        "aggregation": ("aggregation", _p_str),
        "dynamics_minibatch": ("dynamics_minibatch", _p_int),
        "dynamics_updates_per_step": ("dynamics_updates_per_step", _p_float),
        "dynamics_replay_capacity": ("dynamics_replay_capacity", _p_int),
        "dynamics_lr": ("dynamics_lr", _p_float),
    },
    "ppo": {
        "gamma": ("gamma", _p_float),
        "gae_lambda": ("gae_lambda", _p_float),
        "clip_epsilon": ("clip_epsilon", _p_float),
        "epochs": ("epochs", _p_int),
        "minibatch_size": ("minibatch_size", _p_int),
        "value_coef": ("value_coef", _p_float),
        "entropy_coef": ("entropy_coef", _p_float),
        "learning_rate": ("learning_rate", _p_float),
        "train_batch_size": ("train_batch_size", _p_int),
    },
    "model": {
        "embed_dim": ("embed_dim", _p_int),
        "hidden_dim": ("hidden_dim", _p_int),
        "hidden_layers": ("hidden_layers", _p_int),
        "gnn_dim": ("gnn_dim", _p_int),
        "init_log_std": ("init_log_std", _p_float),
    },
    "run": {
        "seeds": ("seeds", _p_int_list),
        "iterations": ("iterations", _p_int),
        "n_envs": ("n_envs", _p_int),
        "out_dir": ("out_dir", _p_str),
        "checkpoint_interval": ("checkpoint_interval", _p_int),
    },
}

_SECTION_TYPES = {
    "scenario": ScenarioSpec,
    "algo": AlgoSettings,
    "ppo": PPOConfig,
    "model": ModelDims,
    "run": RunBlock,
}

# config keys whose name differs from the dataclass field they set
_FIELD_TO_KEY = {
    ("scenario", "scenario"): "name",
    ("scenario", "sparse_rewards"): "sparse",
}


def parse_config(path) -> RunConfig:
    """Parse and validate a config file; every field defaults when absent."""
    text = Path(path).read_text()
    return parse_config_text(text, source=str(path))


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    values: dict[str, dict[str, object]] = {s: {} for s in _SCHEMA}
    key_lines: dict[tuple[str, str], int] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(
                    f"{source}:{lineno}: unknown section [{section}] "
                    f"(expected one of {sorted(_SCHEMA)})"
                )
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        if section is None:
            raise ConfigError(f"{source}:{lineno}: key outside any [section]")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.split("#", 1)[0].split(";", 1)[0].strip()
        if key not in _SCHEMA[section]:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r} in section [{section}]")
        field_name, parser = _SCHEMA[section][key]
        try:
            values[section][field_name] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: invalid value for {key!r}: {exc}") from None
        key_lines[(section, field_name)] = lineno

    blocks = {}
    for section, cls in _SECTION_TYPES.items():
        try:
            blocks[section] = cls(**values[section])
        except ValueError as exc:
            raise ConfigError(_locate_constraint_error(section, values[section],
                                                       key_lines, str(exc), source)) from None
    return RunConfig(scenario=blocks["scenario"], algo=blocks["algo"],
                     ppo=blocks["ppo"], model=blocks["model"], run=blocks["run"])


def _locate_constraint_error(section, section_values, key_lines, message, source) -> str:
    """Best-effort line attribution for a constraint violation."""
    for field_name in section_values:
        key = _FIELD_TO_KEY.get((section, field_name), field_name)
        if field_name in message or key in message:
            line = key_lines.get((section, field_name))
            if line is not None:
                return f"{source}:{line}: invalid {key!r} in [{section}]: {message}"
    return f"{source}: invalid [{section}] block: {message}"


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    return str(v)


def render_config(cfg: RunConfig) -> str:
    """Canonical echo of a config; re-parses to an identical RunConfig."""
    lines = []
    blocks = {"scenario": cfg.scenario, "algo": cfg.algo, "ppo": cfg.ppo,
              "model": cfg.model, "run": cfg.run}
    for section, schema in _SCHEMA.items():
        lines.append(f"[{section}]")
        block = blocks[section]
        for key, (field_name, _) in schema.items():
            lines.append(f"{key} = {_fmt_value(getattr(block, field_name))}")
        lines.append("")
    return "\n".join(lines)


def apply_overrides(cfg: RunConfig, algo: str | None = None, scenario: str | None = None,
                    seed: int | None = None, iterations: int | None = None,
                    out_dir: str | None = None) -> RunConfig:
    """CLI flag overrides; re-validates the touched blocks."""
    if algo is not None:
        mode = algo.replace("-", "_")
        if mode not in ALGO_MODES:
            raise ConfigError(f"--algo {algo!r}: expected one of {ALGO_MODES}")
        cfg = dataclasses.replace(cfg, algo=dataclasses.replace(cfg.algo, mode=mode))
    if scenario is not None:
        if scenario not in SCENARIOS:
            raise ConfigError(f"--scenario {scenario!r}: expected one of {SCENARIOS}")
        cfg = dataclasses.replace(cfg, scenario=dataclasses.replace(cfg.scenario, scenario=scenario))
    if seed is not None:
        cfg = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, seeds=(int(seed),)))
    if iterations is not None:
        cfg = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, iterations=int(iterations)))
    if out_dir is not None:
        cfg = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, out_dir=out_dir))
    return cfg
