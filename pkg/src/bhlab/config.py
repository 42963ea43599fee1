"""Run configuration: strict schema, JSON or YAML on disk."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .fock import DEFAULT_MAX_DIM, ModelParams


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelConfig(_Strict):
    n_particles: int = Field(35, ge=1)
    n_sites: int = Field(4, ge=2)
    J: float = 1.0
    U: float = -10.0
    max_dim: int = Field(DEFAULT_MAX_DIM, ge=1)

    def params(self) -> ModelParams:
        return ModelParams(self.n_particles, self.n_sites, self.J, self.U)


class SpectrumConfig(_Strict):
    reflection: bool = True


class CriticalConfig(_Strict):
    n_starts: int = Field(10_000, ge=1)
    gauge_site: int = Field(0, ge=0)
    energy_tol: float = Field(1e-6, gt=0)
    residual_tol: float = Field(1e-10, gt=0)


class ShellConfig(_Strict):
    eps_lo: float = -6.17
    eps_hi: float = -6.13
    n_samples: int = Field(20_000, ge=1)  # sparse bridges split the ring below ~1e4 points
    cluster_gap: float = Field(0.1, gt=0)
    refine: bool = False

    @model_validator(mode="after")
    def _window(self):
        if self.eps_hi <= self.eps_lo:
            raise ValueError("eps_hi must exceed eps_lo")
        return self


class WindowConfig(_Strict):
    width: float = Field(0.4, gt=0)
    overlap: float = Field(0.5, ge=0, lt=1)
    eps_min: float = -7.0
    eps_max: Optional[float] = None
    pad: float = Field(0.4, ge=0)
    degree: int = Field(5, ge=1)
    trim: float = Field(0.02, ge=0, lt=0.5)
    min_spacings: int = Field(100, ge=1)


class ChaosConfig(_Strict):
    energies: list[float] = Field(default_factory=lambda: [-9.9, -8.0, -6.5, -6.0, -5.0, -4.0,
                                                           -3.0, -2.0, -1.0, -0.6])
    n_samples: int = Field(1000, ge=1)
    t_max: float = Field(1e4, gt=0)
    renorm_interval: float = Field(1.0, gt=0)
    threshold: float = Field(0.01, gt=0)
    rtol: float = Field(1e-8, gt=0)
    atol: float = Field(1e-10, gt=0)
    shell_tol: float = Field(1e-4, gt=0)
    refine_below: float = -9.0  # energies under this use shell refinement
    refine_above: float = -0.8
    quantum: bool = True
    window: WindowConfig = WindowConfig()


class TwaConfig(_Strict):
    n_samples: int = Field(2000, ge=2)
    width_mode: Literal["std", "variance"] = "std"
    projection: Literal["radial", "tangent"] = "radial"
    error_k: float = Field(3.0, gt=0)
    rtol: float = Field(1e-10, gt=0)
    atol: float = Field(1e-12, gt=0)


class QuenchConfig(_Strict):
    q: list[float] = [0.306, -0.948, 0.289, -0.01]
    p: list[float] = [-0.58, 0.652, -0.373, 0.151]
    project: bool = True  # rescale (q, p) onto the sphere first
    t_max: float = Field(1000.0, gt=0)
    n_times: int = Field(2001, ge=2)
    spacing: Literal["linear", "log"] = "linear"
    quantum: bool = True
    classical: bool = True
    twa: Optional[TwaConfig] = TwaConfig()
    rtol: float = Field(1e-13, gt=0)
    atol: float = Field(1e-15, gt=0)

    @model_validator(mode="after")
    def _lengths(self):
        if len(self.q) != len(self.p):
            raise ValueError("q and p need equal length")
        return self


class LdosConfig(_Strict):
    q: list[float] = [0.211, 0.393, -0.221, 0.224]
    p: list[float] = [-0.623, -0.022, 0.045, -1.145]
    project: bool = True
    bins: int = Field(60, ge=1)
    twa: Optional[TwaConfig] = TwaConfig()


class QuadrupletConfig(_Strict):
    threshold: float = Field(1e-3, gt=0)
    n_levels: Optional[int] = Field(None, ge=1)


class RunConfig(_Strict):
    model: ModelConfig = ModelConfig()
    seed: int = 0
    output_dir: str = "out"
    format: Literal["csv", "json"] = "csv"
    workers: int = Field(1, ge=1)
    spectrum: SpectrumConfig = SpectrumConfig()
    critical: CriticalConfig = CriticalConfig()
    shell: ShellConfig = ShellConfig()
    chaos: ChaosConfig = ChaosConfig()
    quench: QuenchConfig = QuenchConfig()
    ldos: LdosConfig = LdosConfig()
    quadruplets: QuadrupletConfig = QuadrupletConfig()

    @field_validator("output_dir")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("output_dir must not be empty")
        return v

    @model_validator(mode="after")
    def _model_consistency(self):
        n = self.model.n_sites
        for name in ("quench", "ldos"):
            blk = getattr(self, name)
            if len(blk.q) != n:
                raise ValueError(f"{name}.q has {len(blk.q)} entries, model has {n} sites")
        if self.critical.gauge_site >= n:
            raise ValueError("critical.gauge_site outside the ring")
        return self


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data or {})
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return parse_config(data)


def dump_config(cfg: RunConfig) -> dict:
    return cfg.model_dump(mode="json")
