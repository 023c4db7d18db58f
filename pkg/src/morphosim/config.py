"""Pipeline configuration: a YAML tree with strict key checking."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError, MorphosimError
from .registration import RegistrationParams
from .simulation import MODES, SimulationConfig
from .volume import Grid3

DEFAULTS = {
    "seed": 0,
    "modes": list(MODES),
    "simulation": {
        "alpha": 0.5,
        "k": None,
        "g": 0.5,
        "dilation_radius": 3,
        "transport": "identity",
        "interval_tolerance_months": 3.0,
    },
    "registration": RegistrationParams().to_dict(),
    "phantom": {
        "n_subjects": 20,
        "dims": [64, 64, 64],
        "spacing": [2.0, 2.0, 2.0],
        "rate_min": 0.02,
        "rate_max": 0.10,
        "noise_sigma": 0.02,
        "prior_intervals": 2,
    },
    "paths": {
        "cache_dir": None,
    },
}


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be a mapping")
            out[key] = _merge(base[key], value, path + ".")
        else:
            out[key] = value
    return out


def parse_override(text: str) -> dict:
    """Turn ``a.b.c=value`` into a nested dict; the value is parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key.path=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from exc
    node: dict = {}
    cur = node
    parts = key.strip().split(".")
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value
    return node


@dataclass
class PipelineConfig:
    tree: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def load(cls, path=None, overrides=()) -> "PipelineConfig":
        tree = copy.deepcopy(DEFAULTS)
        if path is not None:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
            try:
                loaded = yaml.safe_load(text) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
            if not isinstance(loaded, dict):
                raise ConfigError(f"{path}: top level must be a mapping")
            tree = _merge(tree, loaded)
        for o in overrides:
            tree = _merge(tree, o if isinstance(o, dict) else parse_override(o))
        cfg = cls(tree)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        # building the typed objects runs their own checks
        self.registration()
        self.simulation()
        self.grid()
        modes = self.tree["modes"]
        if not isinstance(modes, list) or not modes or any(m not in MODES for m in modes):
            raise ConfigError(f"modes must be a non-empty list drawn from {MODES}, got {modes!r}")
        if not isinstance(self.tree["seed"], int):
            raise ConfigError("seed must be an integer")
        ph = self.tree["phantom"]
        if not isinstance(ph["n_subjects"], int) or ph["n_subjects"] < 3:
            raise ConfigError("phantom.n_subjects must be an integer >= 3")
        if not 0 <= ph["rate_min"] <= ph["rate_max"] <= 0.3:
            raise ConfigError("phantom rates must satisfy 0 <= rate_min <= rate_max <= 0.3")

    def _build(self, what, factory, **kw):
        try:
            return factory(**kw)
        except (TypeError, MorphosimError, ValueError) as exc:
            raise ConfigError(f"invalid {what} settings: {exc}") from exc

    def registration(self) -> RegistrationParams:
        return self._build("registration", RegistrationParams, **self.tree["registration"])

    def simulation(self) -> SimulationConfig:
        return self._build("simulation", SimulationConfig, registration=self.registration(),
                           **self.tree["simulation"])

    def grid(self) -> Grid3:
        ph = self.tree["phantom"]
        return self._build("phantom grid", Grid3, dims=tuple(ph["dims"]), spacing=tuple(ph["spacing"]))

    @property
    def seed(self) -> int:
        return self.tree["seed"]

    @property
    def modes(self) -> list[str]:
        return list(self.tree["modes"])

    def dump(self) -> str:
        return yaml.safe_dump(self.tree, sort_keys=True, default_flow_style=False)
