"""Experiment configuration: a YAML file merged over the packaged defaults."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from .emu import CyclePolicy, LutConfig
from .errors import ConfigError, ReadoutError
from .fnn import TrainConfig
from .iqsim import SimConfig, preset


def _default_dict() -> dict:
    text = resources.files("qreadout").joinpath("default_config.yaml").read_text()
    return yaml.safe_load(text)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class ExperimentConfig:
    raw: dict

    @classmethod
    def load(cls, path: str | Path | None = None, seed: int | None = None) -> "ExperimentConfig":
        d = _default_dict()
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {p}")
            try:
                user = yaml.safe_load(p.read_text()) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{p}: invalid YAML: {exc}") from None
            if not isinstance(user, dict):
                raise ConfigError(f"{p}: top level must be a mapping")
            d = _merge(d, user)
        if seed is not None:
            d["seed"] = int(seed)
        cfg = cls(d)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.sim()
            self.train()
            self.cycle()
            self.lut()
        except (TypeError, ReadoutError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from None
        times = self.raw["sweep"]["readout_times"]
        if not times or any(float(t) <= 0 for t in times):
            raise ConfigError("sweep readout times must be positive")

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def preset_name(self) -> str:
        return self.raw["preset"]

    def sim(self, preset_name: str | None = None) -> SimConfig:
        base = SimConfig.from_dict({**self.raw["sim"], "seed": self.seed})
        return preset(preset_name or self.preset_name, base)

    def train(self) -> TrainConfig:
        return TrainConfig.from_dict({**self.raw["train"], "seed": self.seed})

    def cycle(self) -> CyclePolicy:
        return CyclePolicy.from_dict(self.raw["cycle"])

    def lut(self) -> LutConfig:
        return LutConfig(**self.raw["lut"])

    def __getitem__(self, key):
        return self.raw[key]
