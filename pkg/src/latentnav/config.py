"""Run configuration: one YAML file covering every component."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .nets import NetConfig
from .observation import CameraConfig
from .rewards import RewardConfig, TerminationConfig
from .scenario import ScenarioConfig
from .sim import SimConfig
from .training import TrainerConfig


@dataclass(frozen=True)
class RunConfig:
    """Everything a training or evaluation run needs, in one object."""

    seed: int = 0
    sim: SimConfig = field(default_factory=SimConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    termination: TerminationConfig = field(default_factory=TerminationConfig)
    nets: NetConfig = field(default_factory=NetConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)


_SECTIONS = {
    "sim": SimConfig,
    "scenario": ScenarioConfig,
    "camera": CameraConfig,
    "reward": RewardConfig,
    "termination": TerminationConfig,
    "nets": NetConfig,
    "trainer": TrainerConfig,
}


def _build_section(cls, data: dict):
    valid = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(valid)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    coerced = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    return cls(**coerced)


def run_config_from_dict(data: dict) -> RunConfig:
    """Build a RunConfig from nested plain dicts; unknown keys are rejected."""
    data = dict(data or {})
    kwargs = {}
    if "seed" in data:
        kwargs["seed"] = int(data.pop("seed"))
    for name, cls in _SECTIONS.items():
        section = data.pop(name, None) or {}
        if not isinstance(section, dict):
            raise ValueError(f"config section {name!r} must be a mapping")
        kwargs[name] = _build_section(cls, section)
    if data:
        raise ValueError(f"unknown config sections: {sorted(data)}")
    return RunConfig(**kwargs)


def load_run_config(path=None) -> RunConfig:
    """Load a YAML run config; None or an empty file gives pure defaults."""
    if path is None:
        return RunConfig()
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return run_config_from_dict(data or {})


def run_config_to_dict(cfg: RunConfig) -> dict:
    out: dict = {"seed": cfg.seed}
    for name in _SECTIONS:
        section = dataclasses.asdict(getattr(cfg, name))
        out[name] = {
            k: list(v) if isinstance(v, tuple) else v for k, v in section.items()
        }
    return out


def save_run_config(cfg: RunConfig, path) -> None:
    """Write the fully resolved configuration as YAML."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        yaml.safe_dump(run_config_to_dict(cfg), fh, sort_keys=True)


def apply_ablation(cfg: RunConfig, name: str) -> RunConfig:
    """Return a copy of the config with one model variant enabled.

    no_nonvisual removes proprioception from both the filter input and the
    reconstruction loss; no_term_predictor drops the terminal-indicator
    likelihood from the model loss and zeroes the terminal weights in the
    actor objective.
    """
    if name in (None, "", "none"):
        return cfg
    if name == "no_nonvisual":
        nets = dataclasses.replace(
            cfg.nets, posterior_uses_nonvisual=False, predict_nonvisual=False
        )
        return dataclasses.replace(cfg, nets=nets)
    if name == "no_term_predictor":
        nets = dataclasses.replace(cfg.nets, predict_termination=False)
        return dataclasses.replace(cfg, nets=nets)
    raise ValueError(f"unknown ablation {name!r}")
