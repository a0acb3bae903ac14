from __future__ import annotations

from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, confloat, conint, field_validator, model_validator

from src.beam_dynamics import NonlinearitySpec, Scheme
from src.bnf_engine import GateMode
from src.weighted_spaces import WeightKind

SCHEMA_VERSION = 1

Mass = confloat(ge=1.0, le=2.0)


class ExperimentKind(str, Enum):
    divisor_audit = "divisor_audit"
    mass_scan = "mass_scan"
    bnf = "bnf"
    lifespan = "lifespan"
    fit = "fit"
    predict_times = "predict_times"


class RunStatus(str, Enum):
    ok = "ok"
    partial = "partial"
    error = "error"


class ExperimentConfig(BaseModel):
    """Validated parameters for one experiment; every default ends up in the run record."""

    model_config = ConfigDict(extra="forbid", use_enum_values=False)

    kind: ExperimentKind
    seed: conint(ge=0) = 0
    out: Optional[str] = Field(None, description="Output directory for the record and CSV files.")
    override_gates: bool = False

    # frequencies and lattice
    M: conint(ge=1, le=64) = 4
    m: Mass = 1.37
    m_values: Optional[List[Mass]] = None
    mass_points: conint(ge=2) = 11
    gamma: confloat(gt=0.0, lt=1.0) = 1e-2
    max_l1: conint(ge=1) = 4
    reduced_tau: bool = False
    samples: conint(ge=1000) = 10000

    # weights
    weight_kind: WeightKind = WeightKind.subexp
    s: confloat(ge=0.0) = 1.0
    p: confloat(gt=0.5) = 2.0
    q: confloat(gt=1.0, le=2.0) = 2.0

    # normal form
    K: conint(ge=1, le=6) = 2
    r0: confloat(gt=0.0) = 1e-4
    r_bar: confloat(gt=0.0) = 1e-2
    gate: GateMode = GateMode.empirical
    buffer: Optional[conint(ge=0)] = None
    hamiltonian: Optional[str] = Field(None, description="Path to R0 in the text exchange format; replaces the nonlinearity.")

    # beam dynamics
    nonlinearity: str = "3:1.0"
    R: confloat(gt=0.0) = 1.0
    deltas: List[confloat(gt=0.0)] = Field(default_factory=lambda: [0.05, 0.02, 0.01])
    dt: confloat(gt=0.0) = 1e-2
    horizon: confloat(gt=0.0) = 100.0
    scheme: Scheme = Scheme.strang
    active_modes: conint(ge=0) = 1
    sample_every: Optional[conint(ge=1)] = None

    # exponent fit
    series_delta: Optional[List[confloat(gt=0.0)]] = None
    series_T: Optional[List[confloat(gt=0.0)]] = None
    series_censored: Optional[List[bool]] = None

    # predicted times
    delta: confloat(gt=0.0) = 1e-3
    c: Optional[confloat(gt=0.0)] = None
    abs_C: Optional[confloat(gt=0.0)] = None
    F_R: Optional[confloat(gt=0.0)] = None
    C1: confloat(gt=0.0) = 1.0
    C2: confloat(gt=0.0) = 1.0
    C3: confloat(gt=0.0) = 1.0

    @field_validator("nonlinearity")
    @classmethod
    def _check_nonlinearity(cls, value: str) -> str:
        NonlinearitySpec.parse(value)
        return value

    @model_validator(mode="after")
    def _check_consistency(self) -> "ExperimentConfig":
        if self.active_modes > self.M:
            raise ValueError(f"active_modes={self.active_modes} exceeds M={self.M}")
        if self.hamiltonian is not None and self.kind is not ExperimentKind.bnf:
            raise ValueError("a loaded hamiltonian is only used by bnf experiments")
        if self.kind is ExperimentKind.fit:
            if not self.series_delta or not self.series_T:
                raise ValueError("fit experiments need series_delta and series_T")
            if len(self.series_delta) != len(self.series_T):
                raise ValueError("series_delta and series_T must have equal length")
            if self.series_censored is not None and len(self.series_censored) != len(self.series_delta):
                raise ValueError("series_censored must match series_delta in length")
        return self

    def nonlinearity_spec(self) -> NonlinearitySpec:
        return NonlinearitySpec.parse(self.nonlinearity, R=self.R)


class RunError(BaseModel):
    type: str
    message: str
    exit_code: int
    internal: bool = False


class RunRecord(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    schema_version: int = Field(SCHEMA_VERSION, alias="schema")
    kind: ExperimentKind
    status: RunStatus
    config: Dict[str, Any]
    config_hash: str
    input_digest: str
    payload_digest: str
    started_at: str
    finished_at: str
    tool_version: str
    payload: Dict[str, Any] = Field(default_factory=dict)
    artifacts: Dict[str, str] = Field(default_factory=dict)
    error: Optional[RunError] = None

    @property
    def exit_code(self) -> int:
        return self.error.exit_code if self.error is not None else 0


class PredictTimesRequest(BaseModel):
    delta: confloat(gt=0.0)
    R: confloat(gt=0.0) = 1.0
    F_R: confloat(gt=0.0) = 1.0
    gamma: confloat(gt=0.0, lt=1.0) = 0.5
    c: confloat(gt=0.0) = 1.0
    p: confloat(gt=1.0) = 2.0
    s: confloat(gt=0.0) = 1.0
    q: confloat(gt=1.0, le=2.0) = 2.0
    C1: confloat(gt=0.0) = 1.0
    C2: confloat(gt=0.0) = 1.0
    C3: confloat(gt=0.0) = 1.0


class PredictTimesResponse(BaseModel):
    delta: float
    log_T_subexp: Optional[float] = None
    log_T_sobolev: Optional[float] = None
    log_T_coro: Optional[float] = None
    p_of_delta: Optional[float] = None
    log_thresholds: Dict[str, float]
    threshold_violations: Dict[str, str]
