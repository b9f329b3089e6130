"""Run configuration: one YAML file, overridable by CLI flags.

The schema mirrors the dataclasses: top-level keys `artifact`, `out_dir`,
`mode`, `seed`, plus sections `ablations`, `env`, `state`, `train`,
`controller` whose fields match Ablations, EnvConfig, StateConfig,
TrainConfig, and ControllerConfig. Unknown keys are rejected so typos
fail loudly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .controller import ControllerConfig
from .env import EnvConfig
from .errors import ConfigurationError
from .features import StateConfig
from .ppo import TrainConfig
from .train import Ablations, MODES


@dataclass
class RunConfig:
    artifact: str = ""
    out_dir: str = ""
    mode: str = "hagps"
    seed: int = 0
    ablations: Ablations = field(default_factory=Ablations)
    env: EnvConfig = field(default_factory=EnvConfig)
    state: StateConfig = field(default_factory=StateConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode != "hagps" and self.ablations.any_active():
            raise ConfigurationError("ablation flags are only valid with mode=hagps")
        self.train.seed = self.seed

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "ablations": Ablations,
    "env": EnvConfig,
    "state": StateConfig,
    "train": TrainConfig,
    "controller": ControllerConfig,
}
_SCALARS = ("artifact", "out_dir", "mode", "seed")


def _build_section(cls, data: dict, section: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigurationError(f"unknown {section} fields: {sorted(unknown)}")
    return cls(**data)


def run_config_from_dict(raw: dict) -> RunConfig:
    raw = dict(raw or {})
    unknown = set(raw) - set(_SCALARS) - set(_SECTIONS)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {k: raw[k] for k in _SCALARS if k in raw}
    for section, cls in _SECTIONS.items():
        data = raw.get(section) or {}
        if not isinstance(data, dict):
            raise ConfigurationError(f"config section {section!r} must be a mapping")
        kwargs[section] = _build_section(cls, data, section)
    return RunConfig(**kwargs)


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read the YAML file (if given) and apply flag overrides on top.

    Overrides use flat keys for scalars ("seed") and dotted keys for
    section fields ("train.epochs", "controller.split_threshold").
    """
    raw: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh)
        except FileNotFoundError as exc:
            raise ConfigurationError(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
        if loaded is not None:
            if not isinstance(loaded, dict):
                raise ConfigurationError(f"{path} must contain a mapping")
            raw = loaded
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in key:
            section, fieldname = key.split(".", 1)
            raw.setdefault(section, {})
            if not isinstance(raw[section], dict):
                raise ConfigurationError(f"config section {section!r} must be a mapping")
            raw[section][fieldname] = value
        else:
            raw[key] = value
    return run_config_from_dict(raw)
