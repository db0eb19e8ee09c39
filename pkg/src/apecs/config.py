"""Experiment configuration: one YAML tree, strictly validated.

Unknown keys are rejected with the offending dotted path so typos fail
loudly instead of silently falling back to defaults.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .operators import ExpertConfig, NoviceConfig
from .sim import Course, VehicleParams, benchmark_course
from .training import GAMMA_MODES, MODEL_KINDS, EvalContext, ExperimentPlan

__all__ = ["ConfigError", "ExperimentConfig", "load_config"]


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending key."""


@dataclass(frozen=True)
class DatasetConfig:
    n_samples: int = 10000


@dataclass(frozen=True)
class CourseConfig:
    name: str = "benchmark_s"
    spacing_m: float = 1.0
    waypoints: list | None = None


@dataclass(frozen=True)
class NetworkConfig:
    hidden_layers: int = 5
    width: int = 9
    constrained_activation: str = "relu"


@dataclass(frozen=True)
class GateConfig:
    kind: str = "clip_softplus"
    B: float = 4.0


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 1000
    learning_rate: float = 5e-4
    lr_final: float = 2e-5
    init_gain: float = 1.6
    lipschitz_bound: float = 20.0


@dataclass(frozen=True)
class EvalConfig:
    max_steps: int = 2000


@dataclass(frozen=True)
class SweepConfig:
    bounds: tuple = (0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0)


def _build(cls, mapping, path: str):
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(mapping).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(mapping) - names
    if unknown:
        raise ConfigError(f"unknown key {path}.{sorted(unknown)[0]}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in mapping:
            continue
        value = mapping[f.name]
        if isinstance(value, list) and isinstance(f.default, tuple):
            value = tuple(value)
        kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{path}: {err}") from err


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 1
    out_dir: str = "runs"
    dt_s: float = 0.1
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    course: CourseConfig = field(default_factory=CourseConfig)
    expert: ExpertConfig = field(default_factory=ExpertConfig)
    novice: NoviceConfig = field(default_factory=NoviceConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def build_course(self) -> Course:
        if self.course.waypoints is not None:
            import numpy as np

            return Course(waypoints=np.asarray(self.course.waypoints, dtype=float))
        if self.course.name != "benchmark_s":
            raise ConfigError(f"course.name: unknown course {self.course.name!r}")
        return benchmark_course(spacing=self.course.spacing_m)

    def plan(self, kind: str, gamma_mode: str) -> ExperimentPlan:
        if kind not in MODEL_KINDS:
            raise ConfigError(f"plan: unknown model kind {kind!r}")
        if gamma_mode not in GAMMA_MODES:
            raise ConfigError(f"plan: unknown gamma mode {gamma_mode!r}")
        return ExperimentPlan(
            kind=kind,
            gamma_mode=gamma_mode,
            epochs=self.training.epochs,
            learning_rate=self.training.learning_rate,
            lr_final=self.training.lr_final,
            seed=self.seed,
            lipschitz_bound=self.training.lipschitz_bound,
            init_gain=self.training.init_gain,
            hidden_layers=self.network.hidden_layers,
            width=self.network.width,
            constrained_activation=self.network.constrained_activation,
            gate_kind=self.gate.kind,
            gate_B=self.gate.B,
        )

    def all_plans(self) -> list[ExperimentPlan]:
        return [self.plan(k, g) for k in MODEL_KINDS for g in GAMMA_MODES]

    def eval_context(self, course: Course | None = None) -> EvalContext:
        return EvalContext(
            course=course if course is not None else self.build_course(),
            vehicle=self.vehicle,
            expert_cfg=self.expert,
            novice_cfg=self.novice,
            dt=self.dt_s,
            max_steps=self.eval.max_steps,
        )

    def echo(self) -> dict:
        """Plain-data copy of the resolved configuration for reports.

        The output directory is a runtime destination, not an experiment
        parameter, so it is omitted: reports from identical experiments are
        identical wherever they are written.
        """

        def as_plain(obj):
            if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
                return {f.name: as_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
            if isinstance(obj, tuple):
                return [as_plain(v) for v in obj]
            return obj

        doc = as_plain(self)
        doc.pop("out_dir")
        return doc


_SECTIONS = {
    "dataset": DatasetConfig,
    "vehicle": VehicleParams,
    "course": CourseConfig,
    "expert": ExpertConfig,
    "novice": NoviceConfig,
    "network": NetworkConfig,
    "gate": GateConfig,
    "training": TrainingConfig,
    "eval": EvalConfig,
    "sweep": SweepConfig,
}
_SCALARS = {"seed": int, "out_dir": str, "dt_s": float}


def config_from_dict(raw: dict) -> ExperimentConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected a mapping")
    unknown = set(raw) - set(_SECTIONS) - set(_SCALARS)
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]}")
    kwargs = {}
    for name, caster in _SCALARS.items():
        if name in raw:
            try:
                kwargs[name] = caster(raw[name])
            except (TypeError, ValueError) as err:
                raise ConfigError(f"{name}: {err}") from err
    for name, cls in _SECTIONS.items():
        if name in raw:
            kwargs[name] = _build(cls, raw[name], name)
    cfg = ExperimentConfig(**kwargs)
    if cfg.dt_s <= 0.0 or not math.isfinite(cfg.dt_s):
        raise ConfigError(f"dt_s: must be a positive number, got {cfg.dt_s}")
    cfg.build_course()  # validate course spec eagerly
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as err:
            raise ConfigError(f"{path}: {err}") from err
    return config_from_dict(raw)
