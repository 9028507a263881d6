import math
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class GridSpec(BaseModel):
    """Model for the periodic square box [-L/2, L/2)^2 sampled with n points per side"""
    model_config = ConfigDict(frozen=True)

    box_length: float = Field(gt=0)
    points_per_side: int

    @field_validator("points_per_side")
    @classmethod
    def _even_and_large_enough(cls, n: int) -> int:
        if n < 8 or n % 2:
            raise ValueError(f"points_per_side must be even and >= 8, got {n}")
        return n

    @property
    def spacing(self) -> float:
        return self.box_length / self.points_per_side

    @property
    def k_max(self) -> float:
        """Nyquist frequency pi*n/L."""
        return math.pi * self.points_per_side / self.box_length

    @property
    def shape(self):
        return (self.points_per_side, self.points_per_side)

    def label(self) -> str:
        return f"n{self.points_per_side}_L{self.box_length:g}"


class NormKind(str, Enum):
    LEBESGUE = "lebesgue"
    SOBOLEV_W1P = "sobolev_w1p"
    SOBOLEV_HS = "sobolev_hs"
    BESOV = "besov"
    HOLDER = "holder"


class NormSpec(BaseModel):
    """Model for a weighted function-space norm: regularity alpha, exponents p and q, weight <x>^mu"""
    model_config = ConfigDict(frozen=True)

    kind: NormKind = NormKind.BESOV
    alpha: float = 0.0
    p: float = 2.0
    q: float = 2.0
    mu: float = 0.0

    @field_validator("p", "q")
    @classmethod
    def _exponent_range(cls, value: float) -> float:
        if math.isnan(value) or value < 1:
            raise ValueError(f"integrability/summability exponent must lie in [1, inf], got {value}")
        return value

    def resolved(self) -> "NormSpec":
        """Rewrite the sobolev_hs and holder aliases as the Besov spec they stand for."""
        if self.kind is NormKind.SOBOLEV_HS:
            return NormSpec(kind=NormKind.BESOV, alpha=self.alpha, p=2.0, q=2.0, mu=self.mu)
        if self.kind is NormKind.HOLDER:
            return NormSpec(kind=NormKind.BESOV, alpha=self.alpha, p=math.inf, q=math.inf, mu=self.mu)
        return self

    def label(self) -> str:
        def fmt(x: float) -> str:
            return "inf" if math.isinf(x) else f"{x:g}"
        if self.kind is NormKind.LEBESGUE:
            return f"L^{fmt(self.p)}_{{{self.mu:g}}}"
        if self.kind is NormKind.SOBOLEV_W1P:
            return f"W^{{1,{fmt(self.p)}}}_{{{self.mu:g}}}"
        if self.kind is NormKind.SOBOLEV_HS:
            return f"H^{{{self.alpha:g}}}_{{{self.mu:g}}}"
        if self.kind is NormKind.HOLDER:
            return f"C^{{{self.alpha:g}}}_{{{self.mu:g}}}"
        return f"B^{{{self.alpha:g}}}_{{{fmt(self.p)},{fmt(self.q)},{self.mu:g}}}"


class MollifierSpec(BaseModel):
    """Model for the scaled bump rho_eps(x) = eps^-2 rho(x/eps), rho = Z exp(-1/(1-|x|^2))"""
    model_config = ConfigDict(frozen=True)

    epsilon: float

    @field_validator("epsilon")
    @classmethod
    def _open_unit_half(cls, eps: float) -> float:
        if not 0 < eps < 0.5:
            raise ValueError(f"epsilon must lie in (0, 1/2), got {eps}")
        return eps


class Scheme(str, Enum):
    STRANG_PRIMITIVE = "strang_primitive"
    DIRECT_V_RK4 = "direct_v_rk4"
    DENSE_ORACLE = "dense_oracle"


class SimConfig(BaseModel):
    """Model for a single trajectory: grid, noise scale, nonlinearity and time stepping"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    grid_n: int = 512
    box_L: float = Field(default=8.0, gt=0)
    eps: float = 0.125
    p: float = Field(default=2.0, ge=1)
    lam: float = Field(default=1.0, ge=0)
    dt: float = Field(default=1e-3, gt=0)
    T: float = Field(default=1.0, gt=0)
    seed: int = 0
    stream: int = Field(default=0, ge=0)
    scheme: Scheme = Scheme.STRANG_PRIMITIVE
    snapshot_every: int = Field(default=10, ge=1)
    renormalize: bool = True
    dealias: bool = False
    datum_width: float = Field(default=1.0, gt=0)

    @field_validator("eps")
    @classmethod
    def _eps_range(cls, eps: float) -> float:
        if not 0 < eps < 0.5:
            raise ValueError(f"eps must lie in (0, 1/2), got {eps}")
        return eps

    @model_validator(mode="after")
    def _grid_valid(self) -> "SimConfig":
        GridSpec(box_length=self.box_L, points_per_side=self.grid_n)
        return self

    @property
    def grid(self) -> GridSpec:
        return GridSpec(box_length=self.box_L, points_per_side=self.grid_n)

    @property
    def steps(self) -> int:
        return max(1, int(round(self.T / self.dt)))


class ManifestEntry(BaseModel):
    """Model for one completed task: the config that produced it and the files it wrote"""
    task_id: str
    kind: str
    config: Dict[str, object] = Field(default_factory=dict)
    files: Dict[str, str] = Field(default_factory=dict)
    extras: Dict[str, object] = Field(default_factory=dict)
    steps: int = 0
    wall_seconds: float = 0.0
    created_at: str = ""


class RunManifest(BaseModel):
    """Model for the provenance record of a command invocation"""
    version: str
    command: str
    config: Dict[str, object] = Field(default_factory=dict)
    seeds: Dict[str, int] = Field(default_factory=dict)
    entries: List[ManifestEntry] = Field(default_factory=list)


class ConvergenceReport(BaseModel):
    """Model for pairwise sup-in-time gaps along an epsilon ladder"""
    ladder: List[float]
    norm_label: str
    times: List[float]
    gaps: List[float]
    l2_gaps: List[float]
    rate: Optional[float] = None
    cadence_sensitivity: float = 0.0
    step_dts: List[float] = Field(default_factory=list)
    step_error: float = 0.0
    xi_hash: str = ""
    passed: bool = False


class RenormalizationReport(BaseModel):
    """Model for phase-corrected versus uncorrected ladders"""
    ladder: List[float]
    c_eps: List[float]
    norm_label: str
    corrected_gaps: List[float]
    uncorrected_gaps: List[float]
    initial_mismatch: float
    passed: bool = False


class StochasticReport(BaseModel):
    """Model for the Monte Carlo verification of the noise bounds"""
    eps_list: List[float]
    realizations: int
    seed: int
    r: float
    delta: float
    alpha: float
    a: float
    c_eps: List[float]
    c_eps_mc: List[float]
    c_eps_mc_se: List[float]
    wick_mean: List[float]
    wick_se: List[float]
    grad_ratio: List[float]
    wick_lr_ratio: List[float]
    wick_gaps: List[float]
    y_gaps: List[float]
    potential_gaps: List[float]
    exp_gaps: List[float]
    exp_sup_median: float
    exp_sup_max: float
    rates: Dict[str, Optional[float]] = Field(default_factory=dict)
    c_eps_slope: Optional[float] = None
    c_eps_r2: Optional[float] = None
    passed: bool = False


class AuditReport(BaseModel):
    """Model for the modified-energy identity audit"""
    lam: float
    p: float
    dt: float
    times: List[float]
    residuals: List[float]
    max_residual: float
    initial_energy: float
    coarse_max_residual: Optional[float] = None
    order: Optional[float] = None
    passed: bool = False


class CorpusReport(BaseModel):
    """Model for an inequality witness measured over a seeded random corpus"""
    name: str
    seed: int
    size: int
    points_per_side: int
    values: List[float]
    minimum: float
    maximum: float
    median: float
