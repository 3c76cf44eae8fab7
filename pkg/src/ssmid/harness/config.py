"""Run configuration: a YAML document validated against a strict schema.

Every block rejects unknown keys.  Example (toy model)::

    seed: 0
    outputs: out/toy
    model:
      kind: logistic
      x0: 0.5
    parameters:
      - {name: growth_rate, lower: 0.5, upper: 2.5, truth: 1.5}
      - {name: capacity, lower: 1.0, upper: 4.0, truth: 2.0}
      - {name: input_gain, lower: 0.0, upper: 1.5, truth: 0.5}
    noise: {Q: [1.0e-4], R: [2.5e-3]}
    datasets:
      - {label: train, profile: {kind: uniform, steps: 300, low: 0.0, high: 1.0, seed: 100}}
    scheduler: {eval_budget: 150}

For ``kind: battx`` the parameter block may be omitted (the 18 BattX
parameters with their default search ranges and nominal values are used)
and ``model.battx.capacity_ah`` is required whenever a C-rate profile is
synthesized.
"""

from __future__ import annotations

from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..battx import NOMINAL, PARAM_NAMES, PARAM_UNITS, SEARCH_LOWER, SEARCH_UPPER

__all__ = ["ConfigError", "RunConfig", "load_config", "dump_config", "ValidationError"]


class ConfigError(ValueError):
    """The configuration file is missing, unreadable or fails validation."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# --- model ---------------------------------------------------------------------

class BattXBlock(_Strict):
    N: int = Field(5, ge=2)
    eta: list[float] | None = None
    sigma_ratio: list[float] | None = None
    T_ref: float = Field(298.0, gt=0)
    soc0: float = Field(1.0, ge=0, le=1)
    capacity_ah: float | None = Field(None, gt=0)
    ocv_knots: list[tuple[float, float]] | None = None


class ModelBlock(_Strict):
    kind: Literal["battx", "logistic", "linear"]
    dt: float = Field(1.0, gt=0)
    x0: float = 0.5
    battx: BattXBlock = BattXBlock()


class ParameterEntry(_Strict):
    name: str
    lower: float
    upper: float
    truth: float | None = None
    unit: str = ""

    @model_validator(mode="after")
    def _ordered(self):
        if not self.lower < self.upper:
            raise ValueError(f"parameter {self.name}: lower must be below upper")
        return self


# --- data --------------------------------------------------------------------

class ConstantCRate(_Strict):
    kind: Literal["constant_crate"]
    c_rate: float = Field(ge=0, le=5)
    duration: float = Field(gt=0)
    ambient: float = Field(298.0, gt=0)


class RandomWalkCRate(_Strict):
    kind: Literal["random_walk"]
    c_rate_min: float = Field(0.0, ge=0, le=5)
    c_rate_max: float = Field(5.0, ge=0, le=5)
    duration: float = Field(gt=0)
    ambient: float = Field(298.0, gt=0)
    step_std: float = Field(0.3, ge=0)
    smoothing: int = Field(10, ge=1)
    seed: int | None = None

    @model_validator(mode="after")
    def _ordered(self):
        if self.c_rate_min > self.c_rate_max:
            raise ValueError("c_rate_min must not exceed c_rate_max")
        return self


class UniformInput(_Strict):
    kind: Literal["uniform"]
    steps: int = Field(gt=0)
    low: float = 0.0
    high: float = 1.0
    seed: int | None = None


ProfileSpec = Annotated[Union[ConstantCRate, RandomWalkCRate, UniformInput],
                        Field(discriminator="kind")]


class DatasetEntry(_Strict):
    label: str
    path: str | None = None
    profile: ProfileSpec | None = None
    noiseless: bool = False
    seed: int | None = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.path is None) == (self.profile is None):
            raise ValueError(f"dataset {self.label}: give exactly one of 'path' or 'profile'")
        return self


# --- algorithms ------------------------------------------------------------------

class NoiseBlock(_Strict):
    Q: list[float]
    R: list[float]

    @field_validator("Q", "R")
    @classmethod
    def _nonneg(cls, v):
        if any(x < 0 for x in v):
            raise ValueError("noise variances must be non-negative")
        return v


class UtBlock(_Strict):
    alpha: float = Field(1e-3, gt=0, le=1)
    beta: float = 2.0
    kappa: float = 0.0


class LikelihoodBlock(_Strict):
    method: Literal["uipf", "apf", "deterministic"] = "uipf"
    n_particles: int = Field(100, ge=1)
    alpha_implicit: float = Field(1e-4, gt=0, lt=1)
    ess_fraction: float = Field(0.5, gt=0, le=1)
    jitter: float = Field(1e-10, ge=0)
    init_cov: float = Field(1e-6, ge=0)
    ut: UtBlock = UtBlock()


class AcquisitionBlock(_Strict):
    n_starts: int = Field(32, ge=1)
    n_incumbent_starts: int = Field(4, ge=0)
    n_polish: int | None = Field(8, ge=0)
    polish_evals: int = Field(60, ge=1)
    polish: bool = True


class GpBlock(_Strict):
    kernel: Literal["matern52", "se"] = "matern52"
    noise_floor: float = Field(1e-8, gt=0)
    n_restarts: int = Field(2, ge=0)
    refit_all_until: int = Field(100, ge=0)
    refit_period: int = Field(5, ge=1)
    acquisition: AcquisitionBlock = AcquisitionBlock()


class NelderMeadBlock(_Strict):
    alpha: float = 1.0
    gamma: float = 2.0
    rho: float = 0.5
    sigma: float = 0.5
    improve_tol: float = 1e-9


class SchedulerBlock(_Strict):
    D: int | None = Field(None, ge=2)
    m: int = Field(3, ge=1)
    p: int | None = Field(None, ge=1)
    s: int = Field(10, ge=1)
    d_final: float = Field(1e-3, gt=0)
    eval_budget: int = Field(500, ge=1)
    rebaseline_d0: bool = False


# --- experiments -------------------------------------------------------------------

class ValidationBlock(_Strict):
    datasets: list[DatasetEntry] = []
    estimate: dict[str, float] | None = None
    report: str | None = None


class FilterComparisonBlock(_Strict):
    methods: list[Literal["uipf", "apf"]] = ["uipf", "apf"]
    n_particles: list[int] = [10, 100, 1000]
    replications: int = Field(100, ge=1)


class OptimizerComparisonBlock(_Strict):
    optimizers: list[Literal["accelerated", "plain_bo", "plain_nm"]] = \
        ["accelerated", "plain_bo", "plain_nm"]
    runs: int = Field(10, ge=1)


class RunConfig(_Strict):
    seed: int = 0
    outputs: str = "out"
    model: ModelBlock
    parameters: list[ParameterEntry] | None = None
    noise: NoiseBlock | None = None
    likelihood: LikelihoodBlock = LikelihoodBlock()
    gp: GpBlock = GpBlock()
    nelder_mead: NelderMeadBlock = NelderMeadBlock()
    scheduler: SchedulerBlock = SchedulerBlock()
    optimizer: Literal["accelerated", "plain_bo", "plain_nm"] = "accelerated"
    datasets: list[DatasetEntry] = []
    validation: ValidationBlock = ValidationBlock()
    filter_comparison: FilterComparisonBlock = FilterComparisonBlock()
    optimizer_comparison: OptimizerComparisonBlock = OptimizerComparisonBlock()

    @model_validator(mode="after")
    def _consistent(self):
        if self.model.kind != "battx" and self.parameters is None:
            raise ValueError(f"model kind {self.model.kind!r} needs a 'parameters' block")
        if self.parameters is not None:
            names = [p.name for p in self.parameters]
            if len(set(names)) != len(names):
                raise ValueError("parameter names must be unique")
        labels = [d.label for d in self.datasets + self.validation.datasets]
        if len(set(labels)) != len(labels):
            raise ValueError("dataset labels must be unique")
        battery = {"constant_crate", "random_walk"}
        for d in self.datasets + self.validation.datasets:
            if d.profile is None:
                continue
            if d.profile.kind in battery and self.model.kind != "battx":
                raise ValueError(f"dataset {d.label}: C-rate profiles need the battx model")
            if d.profile.kind == "uniform" and self.model.kind == "battx":
                raise ValueError(f"dataset {d.label}: battx needs a C-rate profile")
            if d.profile.kind in battery and self.model.battx.capacity_ah is None:
                raise ValueError("model.battx.capacity_ah is required to convert C-rates")
        return self

    # derived views ------------------------------------------------------------------

    def parameter_entries(self) -> list[ParameterEntry]:
        if self.parameters is not None:
            return list(self.parameters)
        return [ParameterEntry(name=n, lower=lo, upper=hi, truth=t, unit=u)
                for n, lo, hi, t, u in zip(PARAM_NAMES, SEARCH_LOWER, SEARCH_UPPER, NOMINAL,
                                           PARAM_UNITS)]

    def true_theta(self):
        vals = [p.truth for p in self.parameter_entries()]
        return None if any(v is None for v in vals) else np.array(vals, dtype=float)

    def with_seed(self, seed: int | None) -> "RunConfig":
        return self if seed is None else self.model_copy(update={"seed": int(seed)})


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    return parse_config(data, source=str(path))


def parse_config(data, source: str = "<config>") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def dump_config(cfg: RunConfig) -> str:
    """YAML text that parses back to an equal configuration."""
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
