"""YAML run configuration shared by every CLI command.

A run is fully described by one ``RunConfig``; ``to_dict`` gives the resolved
tree that is echoed beside outputs, and feeding that echo back in reproduces
the run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .experiments import (
    ACQUISITIONS,
    CURVE_EXPERIMENTS,
    DEFAULT_SEEDS,
    MODEL_NAMES,
    VOTING_DEFAULTS,
    ClassificationSetup,
    RegressionSetup,
)
from .model import ModelConfig, TrainConfig
from .sde import TimeGrid

CONFIG_ECHO = "config.yaml"
GENERATORS = ("voting", "three_node", "planetoid")


class ConfigError(ValueError):
    def __init__(self, field_name: str, msg: str):
        super().__init__(f"config field '{field_name}': {msg}")
        self.field = field_name


def _mapping(d, name: str) -> dict:
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise ConfigError(name, f"expected a mapping, got {type(d).__name__}")
    return dict(d)


def _threshold(v, name: str) -> float:
    if isinstance(v, str) and v.strip().lower() in ("inf", "infinity", ".inf"):
        return math.inf
    try:
        v = float(v)
    except (TypeError, ValueError):
        raise ConfigError(name, f"not a number: {v!r}") from None
    if not v >= 0:
        raise ConfigError(name, "thresholds must be non-negative")
    return v


def _yaml_value(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    if isinstance(v, (list, tuple)):
        return [_yaml_value(x) for x in v]
    if isinstance(v, dict):
        return {k: _yaml_value(x) for k, x in v.items()}
    return v


MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"in_dim", "out_dim", "init_seed"}


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    grid: dict = field(default_factory=lambda: {"t0": 0.0, "t1": 1.0, "steps": 20})
    optimizer: dict = field(default_factory=dict)
    n_samples: int = 50
    seed: int = 0
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    thresholds: list | None = None
    parallel: int = 1
    out: str | None = None
    experiment: dict = field(default_factory=dict)

    # ------------------------------------------------------------ construction

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        d = _mapping(d, "<root>")
        known = {f.name for f in fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigError(k, f"unknown field; valid: {', '.join(sorted(known))}")
        cfg = cls(**{k: v for k, v in d.items() if v is not None or k in ("thresholds", "out")})
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError("--config", f"{path}: file not found")
        try:
            raw = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError("--config", f"{path}: not valid YAML ({exc})") from None
        return cls.from_dict(raw)

    def validate(self) -> None:
        self.model = _mapping(self.model, "model")
        for k in self.model:
            if k not in MODEL_KEYS:
                raise ConfigError(f"model.{k}", f"unknown field; valid: {', '.join(sorted(MODEL_KEYS))}")
        if "kind" in self.model and self.model["kind"] not in MODEL_NAMES:
            raise ConfigError("model.kind", f"unknown kind {self.model['kind']!r}; valid: {', '.join(MODEL_NAMES)}")
        self.data = _mapping(self.data, "data")
        if self.data:
            gen = self.data.get("generator")
            if gen is None:
                raise ConfigError("data.generator", f"required; one of {', '.join(GENERATORS)}")
            if gen not in GENERATORS:
                raise ConfigError("data.generator", f"unknown generator {gen!r}; valid: {', '.join(GENERATORS)}")
            if gen == "planetoid" and "path" not in self.data:
                raise ConfigError("data.path", "required for the planetoid generator")
        self.grid = _mapping(self.grid, "grid")
        try:
            self.time_grid()
        except (TypeError, ValueError) as exc:
            raise ConfigError("grid", str(exc)) from None
        self.optimizer = _mapping(self.optimizer, "optimizer")
        try:
            self.train_config()
        except TypeError as exc:
            raise ConfigError("optimizer", str(exc)) from None
        for name in ("n_samples", "parallel", "seed"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(name, f"expected an integer, got {v!r}")
        if self.n_samples < 1:
            raise ConfigError("n_samples", "must be at least 1")
        if self.parallel < 1:
            raise ConfigError("parallel", "must be at least 1")
        if not isinstance(self.seeds, (list, tuple)) or not self.seeds or not all(isinstance(s, int) for s in self.seeds):
            raise ConfigError("seeds", "expected a non-empty list of integers")
        self.seeds = list(self.seeds)
        if self.thresholds is not None:
            self.thresholds = [_threshold(v, "thresholds") for v in self.thresholds]
        self.experiment = _mapping(self.experiment, "experiment")
        models = self.experiment.get("models")
        if models is not None:
            for m in models:
                if m not in MODEL_NAMES:
                    raise ConfigError("experiment.models", f"unknown model {m!r}; valid: {', '.join(MODEL_NAMES)}")
        for e in self.experiment.get("curves", []) or []:
            if e not in CURVE_EXPERIMENTS:
                raise ConfigError("experiment.curves", f"unknown curve {e!r}; valid: {', '.join(CURVE_EXPERIMENTS)}")
        reg = _mapping(self.experiment.get("regression"), "experiment.regression")
        for m in reg.get("models", []) or []:
            if m not in MODEL_NAMES:
                raise ConfigError("experiment.regression.models", f"unknown model {m!r}; valid: {', '.join(MODEL_NAMES)}")
        for a in _mapping(self.experiment.get("active"), "experiment.active").get("acquisitions", []) or []:
            if a not in ACQUISITIONS:
                raise ConfigError("experiment.active.acquisitions", f"unknown acquisition {a!r}; valid: {', '.join(ACQUISITIONS)}")

    def require(self, *names: str) -> None:
        for name in names:
            node = self
            for part in name.split("."):
                node = node.get(part) if isinstance(node, dict) else getattr(node, part, None)
                if node in (None, {}, []):
                    raise ConfigError(name, "required field is missing")

    # -------------------------------------------------------------- resolution

    def time_grid(self) -> TimeGrid:
        return TimeGrid(float(self.grid.get("t0", 0.0)), float(self.grid.get("t1", 1.0)), self.grid.get("steps", 20))

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.optimizer)

    def model_overrides(self) -> dict:
        return {k: v for k, v in self.model.items() if k != "kind"}

    def classification_setup(self) -> ClassificationSetup:
        data = dict(VOTING_DEFAULTS)
        data.update({k: v for k, v in self.data.items() if k != "generator"})
        ex = self.experiment
        return ClassificationSetup(
            data=data,
            model=self.model_overrides(),
            grid=self.time_grid(),
            optimizer=self.train_config(),
            n_samples=self.n_samples,
            dropout=ex.get("dropout", 0.2),
            ensemble_k=ex.get("ensemble_k", 5),
        )

    def regression_setup(self) -> RegressionSetup:
        base = RegressionSetup()
        d = self.data
        ex = self.experiment
        opt = TrainConfig.from_dict({"epochs": base.optimizer.epochs, **self.optimizer})
        return RegressionSetup(
            n_obs=d.get("n_obs", base.n_obs),
            noise_sd=d.get("noise_sd", base.noise_sd),
            time_scale=d.get("time_scale", base.time_scale),
            # the grid section belongs to classification; horizon follows time_scale
            steps=d.get("steps", base.steps),
            obs_var=d.get("obs_var", base.obs_var),
            model=self.model_overrides(),
            optimizer=opt,
            n_samples=self.n_samples,
            dropout=ex.get("dropout", base.dropout),
            ensemble_k=ex.get("ensemble_k", base.ensemble_k),
        )

    def to_dict(self) -> dict:
        return {f.name: _yaml_value(getattr(self, f.name)) for f in fields(self)}

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=False)

    def echo(self, out_dir) -> Path:
        path = Path(out_dir) / CONFIG_ECHO
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dump())
        return path
