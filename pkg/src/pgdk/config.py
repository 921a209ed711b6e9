"""Training configuration, per-task presets and the flat ``key = value`` file format.

A config file is a list of ``key = value`` lines; ``#`` starts a comment.
Unknown keys are rejected. Network specs are written as comma-separated
``activation:width`` items, e.g. ``relu:400,relu:300,linear:8``.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path

TASKS = ("pendulum", "vehicle", "lti")


@dataclass
class TrainConfig:
    task: str = "pendulum"
    episodes: int = 150
    horizon: int = 200
    batch_size: int = 120
    capacity: int = 1_000_000
    gamma: float = 0.99
    lr_lift: float = 1e-3
    lr_critic: float = 1e-3
    lr_actor: float = 1e-4
    ridge_lambda: float = 1e-6
    semi_gradient: bool = True
    # fit the Koopman model on successors with angles unwrapped next to the current state
    unwrap_angles: bool = True
    value_scale: float = 1.0  # critic output multiplier, V = value_scale * net(x)
    # exploration: sigma(episode) = max(sigma_floor, sigma0 * sigma_decay**episode)
    sigma0: float = 1.0
    sigma_decay: float = 0.97
    sigma_floor: float = 0.0
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    ou_dt: float = 1.0
    lift_layers: str = "relu:400,relu:300,linear:8"
    critic_layers: str = "relu:400,relu:300,linear:1"
    actor_layers: str = "relu:400,relu:300,tanh:1"
    seed: int = 0
    eval_every: int = 10
    eval_episodes: int = 10
    vehicle_dt: float = 0.05

    def validate(self) -> "TrainConfig":
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        positive = ("horizon", "batch_size", "capacity", "eval_episodes")
        for name in positive:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.episodes < 0 or self.eval_every < 0:
            raise ValueError("episodes and eval_every must be non-negative")
        if self.batch_size > self.capacity:
            raise ValueError("batch_size cannot exceed the memory capacity")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not self.value_scale > 0.0:
            raise ValueError("value_scale must be positive")
        if min(self.lr_lift, self.lr_critic, self.lr_actor, self.ridge_lambda) < 0:
            raise ValueError("step sizes and ridge lambda must be non-negative")
        if not 0.0 < self.sigma_decay <= 1.0 or self.sigma0 < 0 or self.sigma_floor < 0:
            raise ValueError("invalid exploration schedule")
        if self.vehicle_dt <= 0:
            raise ValueError("vehicle_dt must be positive")
        return self

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes).validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**coerce(d)).validate()


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def coerce(raw: dict) -> dict:
    out = {}
    for key, value in raw.items():
        key = key.strip().replace("-", "_")
        if key not in _FIELD_TYPES:
            raise KeyError(f"unknown config key {key!r}")
        kind = _FIELD_TYPES[key]
        if not isinstance(value, str):
            out[key] = value
        elif kind == "bool":
            out[key] = value.strip().lower() in ("1", "true", "yes", "on")
        elif kind == "int":
            out[key] = int(float(value))
        elif kind == "float":
            out[key] = float(value)
        else:
            out[key] = value.strip()
    return out


# Network sizes and batch sizes are fixed per task. Critic output scales, gamma
# and the LTI episode count were tuned on one core.
PRESETS: dict[str, dict] = {
    "pendulum": dict(
        task="pendulum", episodes=100, batch_size=120, value_scale=100.0,
        lift_layers="relu:400,relu:300,linear:8",
        critic_layers="relu:400,relu:300,linear:1",
        actor_layers="relu:400,relu:300,tanh:1",
    ),
    "vehicle": dict(
        task="vehicle", episodes=300, batch_size=120, gamma=0.98,
        lift_layers="relu:200,silu:100,linear:16",
        critic_layers="relu:200,relu:100,linear:1",
        actor_layers="relu:200,relu:100,tanh:2",
    ),
    "lti": dict(
        task="lti", episodes=30, batch_size=50, gamma=0.95, value_scale=10.0,
        lift_layers="relu:400,relu:300,linear:4",
        critic_layers="relu:400,relu:300,linear:1",
        actor_layers="relu:400,relu:300,tanh:1",
    ),
}


def preset(task: str, **overrides) -> TrainConfig:
    if task not in PRESETS:
        raise ValueError(f"no preset for task {task!r}")
    return TrainConfig(**{**PRESETS[task], **overrides}).validate()


def read_config_file(path: str | Path) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    parser.read_string("[config]\n" + Path(path).read_text())
    return coerce(dict(parser["config"]))


def parse_overrides(items: list[str] | None) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not key=value")
        out[key] = value
    return coerce(out)


def load_config(task: str | None = None, path: str | Path | None = None, overrides: dict | None = None) -> TrainConfig:
    """Preset for ``task`` (or the file's task), then the file, then overrides."""
    file_values = read_config_file(path) if path else {}
    task = task or file_values.get("task") or (overrides or {}).get("task") or "pendulum"
    values = {**PRESETS[task], **file_values, **(overrides or {}), "task": task}
    return TrainConfig(**values).validate()


def write_config_file(config: TrainConfig, path: str | Path) -> None:
    lines = [f"{k} = {str(v).lower() if isinstance(v, bool) else v}" for k, v in config.to_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n")
