"""JSON run configuration: schema validation, defaults and conversion to ModelParams."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .model import DiscreteCompensator, LogUtility, ModelError, ModelParams, PowerUtility


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    full_steps: int = 2000
    full_controls: int = 501
    partial_n_t: int = 4000
    partial_n_pi: int = 200
    partial_controls: int = 201
    tol: float = 1e-6


@dataclass(frozen=True)
class SimulationConfig:
    n_paths: int = 100_000
    seed: int = 0
    report_stride: int = 10


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "results"
    time_stride: int = 10


@dataclass(frozen=True)
class ExperimentConfig:
    monte_carlo: bool = True
    benchmark_eval_overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Config:
    model: ModelParams
    solver: SolverConfig
    simulation: SimulationConfig
    output: OutputConfig
    experiment: ExperimentConfig
    raw: dict

    def benchmark_eval_model(self) -> ModelParams:
        """Model used to value the averaged benchmark; equal to ``model`` unless overridden."""
        if not self.experiment.benchmark_eval_overrides:
            return self.model
        block = copy.deepcopy(self.raw["model"])
        block.update(self.experiment.benchmark_eval_overrides)
        return model_from_block(block, "experiment.benchmark_eval_overrides")


def schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("config.schema.json").read_text())


def model_from_block(block: dict, where: str = "model") -> ModelParams:
    try:
        jsonschema.validate({"model": block}, schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"{where}: {exc.message}") from None
    util = block.get("utility", {"kind": "log"})
    try:
        utility = LogUtility() if util["kind"] == "log" else PowerUtility(util["theta"])
        jumps = DiscreteCompensator(block["jumps"]["sizes"], block["jumps"]["intensities"])
        return ModelParams(
            forward=tuple(map(tuple, block["forward"])),
            backward=tuple(map(tuple, block["backward"])),
            jumps=jumps,
            rho=block.get("rho", 0.0),
            utility=utility,
            T=block.get("T", 1.0),
            w0=block.get("w0", 1.0),
            L=block.get("L", 50.0),
            pi0=tuple(block["pi0"]) if "pi0" in block else None,
        )
    except ModelError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(data: dict) -> Config:
    try:
        jsonschema.validate(data, schema())
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {exc.message}") from None
    model = model_from_block(data["model"])
    cfg = Config(
        model=model,
        solver=SolverConfig(**data.get("solver", {})),
        simulation=SimulationConfig(**data.get("simulation", {})),
        output=OutputConfig(**data.get("output", {})),
        experiment=ExperimentConfig(**data.get("experiment", {})),
        raw=copy.deepcopy(data),
    )
    if cfg.experiment.benchmark_eval_overrides:
        cfg.benchmark_eval_model()  # fail now rather than mid-run
    return cfg


def load_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(data)
