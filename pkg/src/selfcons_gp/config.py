"""Experiment configuration schema (TOML files, validated with pydantic)."""

from __future__ import annotations

import hashlib
import json
import sys
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .datagen import CnnArch, QuadArch

Experiment = Literal["gp_baseline", "saddle_solve", "ek_sweep", "langevin_sweep",
                     "spectrum_sweep", "phase_retrieval", "diagnostics"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelBlock(_Strict):
    kind: Literal["cnn", "quad"]
    N: int | None = Field(None, ge=1)
    S: int | None = Field(None, ge=1)
    C: int | None = Field(None, ge=1)
    C_values: list[int] | None = None
    d: int | None = Field(None, ge=1)
    M: int | None = Field(None, ge=1)
    sigma_a2: float = Field(1.0, gt=0)
    sigma_w2: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _complete(self):
        if self.kind == "cnn":
            if self.S is None:
                raise ValueError("cnn model needs S")
            if self.C is None and not self.C_values:
                raise ValueError("cnn model needs C or C_values")
        else:
            if self.d is None or self.M is None:
                raise ValueError("quad model needs d and M")
        if self.C_values is not None:
            if not self.C_values or any(c < 1 for c in self.C_values):
                raise ValueError("C_values must be a non-empty list of positive ints")
        return self

    def channel_values(self) -> list[int]:
        return list(self.C_values) if self.C_values else [self.C]

    def cnn_arch(self, C: int | None = None, S: int | None = None, N: int | None = None) -> CnnArch:
        S = S or self.S
        N = N or self.N or S
        return CnnArch(N, S, C or self.C or self.channel_values()[0], self.sigma_a2, self.sigma_w2)

    def quad_arch(self) -> QuadArch:
        return QuadArch(self.d, self.M, self.sigma_w2)


class DataBlock(_Strict):
    n: int | None = Field(None, ge=1)
    pairs: list[tuple[int, int]] | None = None  # (S, n), with N = S
    n_over_d: list[float] | None = None
    n_test: int = Field(100, ge=0)
    measure: Literal["gaussian_unit", "gaussian_1_over_d", "hypersphere"] = "gaussian_unit"
    radius: float = Field(1.0, gt=0)
    n_datasets: int = Field(1, ge=1)
    teacher_normalize: bool = True

    @model_validator(mode="after")
    def _sizes(self):
        if self.n is None and not self.pairs and not self.n_over_d:
            raise ValueError("data needs n, pairs or n_over_d")
        if self.pairs is not None and any(s < 1 or n < 1 for s, n in self.pairs):
            raise ValueError("pairs entries must be positive")
        if self.n_over_d is not None and any(r <= 0 for r in self.n_over_d):
            raise ValueError("n_over_d entries must be positive")
        return self


class SolverBlock(_Strict):
    sigma2: float = Field(1.0, gt=0)
    method: Literal["newton_krylov", "newton", "damped_fixed_point"] = "newton_krylov"
    tol: float = Field(1e-10, gt=0)
    max_iter: int = Field(200, ge=1)
    annealing: bool = True
    anneal_start: float = Field(1.0, gt=0)
    anneal_stages: int = Field(12, ge=1)
    damping: float = Field(0.5, gt=0, le=1)
    cnn_mode: Literal["resummed", "series"] = "resummed"
    q_source: Literal["empirical", "analytic", "unit"] = "empirical"


class LangevinBlock(_Strict):
    steps: int = Field(20000, ge=2)
    eps: float = Field(2e-3, gt=0)
    eta: float | None = Field(None, gt=0)
    burn_in: int | None = Field(None, ge=0)
    thin: int = Field(20, ge=1)
    n_seeds: int = Field(8, ge=1)
    init: Literal["prior", "cold"] = "prior"
    rao_blackwell: bool = False


class DiagnosticsBlock(_Strict):
    simple_min: float = Field(10.0, gt=0)
    correction_max: float = Field(0.1, gt=0)


class ExperimentConfig(_Strict):
    experiment: Experiment
    seed: int = Field(0, ge=0)
    output_dir: str = "results"
    model: ModelBlock
    data: DataBlock
    solver: SolverBlock = SolverBlock()
    langevin: LangevinBlock = LangevinBlock()
    diagnostics: DiagnosticsBlock = DiagnosticsBlock()

    @model_validator(mode="after")
    def _fits_experiment(self):
        exp, kind = self.experiment, self.model.kind
        if exp in ("ek_sweep", "langevin_sweep", "spectrum_sweep") and kind != "cnn":
            raise ValueError(f"{exp} is defined for the cnn model only")
        if exp == "phase_retrieval" and (kind != "quad" or not self.data.n_over_d):
            raise ValueError("phase_retrieval needs the quad model and data.n_over_d")
        if self.data.n_over_d and kind != "quad":
            raise ValueError("n_over_d is only meaningful for the quad model")
        return self

    def config_hash(self) -> str:
        blob = json.dumps(self.model_dump(mode="json", exclude={"output_dir"}), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return ExperimentConfig.model_validate(raw)
