"""Schema of scenario files consumed by the command line interface."""

import json
import math
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, field_validator, model_validator


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelConfig(_Strict):
    name: Literal["uniaxial", "patch2d"] = "uniaxial"
    mu: PositiveFloat = 100.0
    lam: float = 150.0
    k1: PositiveFloat = 20.0
    sigma0: PositiveFloat = 1.0
    dim: Literal[2, 3] = 3
    nx: PositiveInt = 4
    ny: PositiveInt = 2

    def parameters(self):
        p = {"mu": self.mu, "lam": self.lam, "k1": self.k1, "sigma0": self.sigma0}
        if self.name == "uniaxial":
            p["dim"] = self.dim
        else:
            p.update(nx=self.nx, ny=self.ny)
        return p


class LoadConfig(_Strict):
    waveform: Literal["ramp", "triangle", "cycle"] = "cycle"
    amplitude: float = 3.0
    T: PositiveFloat = 1.0
    N: PositiveInt = 64

    @field_validator("amplitude")
    @classmethod
    def _finite(cls, v):
        if not math.isfinite(v):
            raise ValueError("amplitude must be finite")
        return v


Exponent = Union[Literal[1, 2], Literal["inf"]]


class Options(_Strict):
    # solver
    solver_tol: PositiveFloat = 1e-10
    max_newton: PositiveInt = 200
    check_tol: PositiveFloat = 1e-9
    # refinement studies
    steps: List[PositiveInt] = Field(default_factory=lambda: [8, 16, 32, 64, 128, 256, 512])
    reference_steps: PositiveInt = 1024
    rate_threshold: float = 0.45
    h1_slack: float = Field(0.05, ge=0)
    h1_ratio: PositiveFloat = 0.1
    lambda_ratio: PositiveFloat = 0.2
    # evi checks
    pairs: PositiveInt = 500
    exponents: List[Exponent] = Field(default_factory=lambda: [1, 2, "inf"])
    equivalence_tol: PositiveFloat = 1e-8
    # control
    objective: Literal["psi1", "psi2", "psi3"] = "psi2"
    target: Union[float, List[float], List[List[float]]] = 0.0
    nu: PositiveFloat = 1e-7
    admissible: Literal["U1", "U2"] = "U2"
    rho: Optional[float] = Field(None, ge=0)
    tol: PositiveFloat = 1e-6
    max_iter: PositiveInt = 100
    fd_step: PositiveFloat = 1e-6
    approximation_steps: List[PositiveInt] = Field(default_factory=list)

    @model_validator(mode="after")
    def _rho_for_u1(self):
        if self.admissible == "U1" and self.rho is None:
            raise ValueError("admissible set U1 needs rho >= 0")
        return self

    def exponent_values(self):
        return [math.inf if p == "inf" else int(p) for p in self.exponents]


class ScenarioConfig(_Strict):
    model: ModelConfig = Field(default_factory=ModelConfig)
    load: LoadConfig = Field(default_factory=LoadConfig)
    experiment: Literal["forward", "converge", "evi-check", "control"] = "forward"
    options: Options = Field(default_factory=Options)
    output_dir: str = "out"
    seed: int = 0

    @model_validator(mode="after")
    def _consistent(self):
        if self.model.name == "patch2d" and 2 * self.model.nx * self.model.ny > 32:
            raise ValueError("patch2d supports at most 32 elements (2*nx*ny <= 32)")
        d = 3 if self.model.name == "uniaxial" and self.model.dim == 3 else 2
        if d * self.model.lam + 2 * self.model.mu <= 0:
            raise ValueError("bulk modulus must be positive (d*lam + 2*mu > 0)")
        return self


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return ScenarioConfig.model_validate(data)
