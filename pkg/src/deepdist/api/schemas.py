"""Request and response bodies for the HTTP service."""
from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

Estimator = Literal["eigenvector", "cfn", "logdet"]
Method = Literal["deep", "naive"]


class ModelSpec(BaseModel):
    """A preset name with parameters, or a full model config file."""

    preset: str = "cfn"
    params: list[float] = Field(default_factory=list)
    config: Optional[str] = None


class DeepParams(BaseModel):
    Delta: float = 0.05
    f: float = 0.25
    g: float = 0.25
    alpha: float = 1.5
    W: float = 6.0
    D: Optional[float] = None
    gamma: float = 3.0
    quartet_budget: Optional[int] = None


class SimulateRequest(BaseModel):
    model: ModelSpec = Field(default_factory=ModelSpec)
    family: Literal["homogeneous", "random"] = "homogeneous"
    n: int = Field(16, ge=1)
    k: int = Field(1000, ge=1)
    Delta: float = 0.05
    f: float = 0.25
    g: float = 0.25
    seed: int = 0
    format: Literal["native", "fasta"] = "native"


class SimulateResponse(BaseModel):
    alignment: str
    tree: str
    model: str


class DistancesRequest(BaseModel):
    alignment: str
    format: Literal["native", "fasta"] = "native"
    model: ModelSpec = Field(default_factory=ModelSpec)
    estimator: Estimator = "eigenvector"


class DistancesResponse(BaseModel):
    matrix: str
    n: int
    infinite_pairs: int


class ReconstructRequest(BaseModel):
    matrix: str
    config: DeepParams = Field(default_factory=DeepParams)
    method: Method = "deep"


class ReconstructResponse(BaseModel):
    success: bool
    tree: Optional[str] = None
    log: str
    failure_level: Optional[int] = None
    failure_reason: Optional[str] = None


class SweepRequest(BaseModel):
    config: str
    timing: bool = True


class SweepResponse(BaseModel):
    csv: str
    k90: dict[str, dict[str, Optional[int]]]
    flags: list[str]


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str


class VerifyResponse(BaseModel):
    passed: bool
    checks: list[CheckResult]
