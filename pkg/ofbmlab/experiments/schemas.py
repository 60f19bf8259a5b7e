"""
Pydantic schemas for experiment configuration, JSON documents and reports.

Defines data structures for:
- Configuration: QuadratureConfig, SpectralConfig, ExperimentConfig
- Documents: TableEntry, TableDocument, ModelDocument
- Reports: ConditionHReport, VerificationReport, SuiteReport, ConvergeRow
"""

import hashlib
import json
from pathlib import Path
from typing import Any, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from ofbmlab.utils.constants import (
    BUILTIN_FUNCTIONALS,
    DEFAULT_N_GRID,
    DEFAULT_N_LIST,
    DEFAULT_TIGHTNESS_PAIRS,
    LAW_TIMES,
    QUAD_GAUSS_POINTS,
    QUAD_LOG_PANELS,
    QUAD_MAX_REFINEMENTS,
    QUAD_PANEL_WIDTH,
    QUAD_TOLERANCE,
    QUAD_X_HIGH,
    QUAD_X_LOW,
)
from ofbmlab.utils.settings import settings


def _square(values: List[float], dim: int, name: str) -> List[float]:
    if len(values) != dim * dim:
        raise ValueError(f"{name} must hold dim*dim = {dim * dim} row-major entries, got {len(values)}")
    if not all(np.isfinite(values)):
        raise ValueError(f"{name} has non-finite entries")
    return values


class QuadratureConfig(BaseModel):
    """
    Panels of the OFBM covariance integral.

    Geometric panels cover (x_low, 1], Gauss-Legendre panels of width
    ``panel_width`` cover [1, x_high]; both ends get analytic corrections.
    """
    x_low: float = Field(default=QUAD_X_LOW, gt=0.0, lt=1.0)
    x_high: float = Field(default=QUAD_X_HIGH, gt=1.0)
    panel_width: float = Field(default=QUAD_PANEL_WIDTH, gt=0.0)
    gauss_points: int = Field(default=QUAD_GAUSS_POINTS, ge=2, le=128)
    log_panels: int = Field(default=QUAD_LOG_PANELS, ge=1)
    tol: float = Field(default=QUAD_TOLERANCE, gt=0.0)
    max_refinements: int = Field(default=QUAD_MAX_REFINEMENTS, ge=0, le=8)


class SpectralConfig(BaseModel):
    """Real spectral form (A1, A2, D) of the target OFBM, row-major; D defaults to the experiment's D."""
    A1: Optional[List[float]] = None
    A2: Optional[List[float]] = None
    D: Optional[List[float]] = None
    n_freq: int = Field(default=settings.N_FREQ, ge=2)
    x_max: float = Field(default=settings.X_MAX, gt=0.0)


class ExperimentConfig(BaseModel):
    """
    One experiment, read from a JSON document; CLI flags override fields.

    Attributes:
        dim (int): Dimension d.
        D (list): Exponent, row-major.
        Gamma (list, optional): r(0) of the oFGN model, row-major; identity when omitted.
        family (str): Correlation model family.
        model_path (str, optional): JSON correlation model used instead of (D, Gamma, family).
        functional (str): Builtin functional name or path to a coefficient table.
        N_list (list): Sample sizes of the convergence sweep.
        replicates (int): Monte Carlo replicates per N.
        seed (int): Master seed.
        out (str): Output directory.
    """
    dim: int = Field(default=2, ge=1, le=16)
    D: List[float]
    Gamma: Optional[List[float]] = None
    family: Literal["ofgn", "white", "table"] = "ofgn"
    model_path: Optional[str] = None
    long_memory: bool = True
    functional: str = "identity"
    m: Optional[int] = Field(default=None, ge=1)
    N_list: List[int] = Field(default_factory=lambda: list(DEFAULT_N_LIST))
    N_grid: List[int] = Field(default_factory=lambda: list(DEFAULT_N_GRID))
    condition_m: int = Field(default=1, ge=1)
    replicates: int = Field(default=200, ge=1)
    times: Optional[List[float]] = None
    law_times: List[float] = Field(default_factory=lambda: list(LAW_TIMES))
    seed: int = Field(default=0, ge=0, lt=2**64)
    out: str = "results"
    band: Literal["full", "head_m", "tail_m"] = "full"
    method: Literal["auto", "circulant", "cholesky"] = "auto"
    alpha: float = Field(default=2.0, ge=1.0)
    tightness_pairs: List[tuple[float, float]] = Field(default_factory=lambda: list(DEFAULT_TIGHTNESS_PAIRS))
    spectral: SpectralConfig = Field(default_factory=SpectralConfig)
    quadrature: QuadratureConfig = Field(default_factory=QuadratureConfig)
    permutations: int = Field(default=settings.PERMUTATIONS, ge=1)
    significance: float = Field(default=settings.SIGNIFICANCE, gt=0.0, lt=1.0)

    @field_validator("N_list", "N_grid")
    @classmethod
    def increasing_sizes(cls, v: List[int]) -> List[int]:
        if not v or any(n < 1 for n in v) or sorted(set(v)) != list(v):
            raise ValueError("sample sizes must be a non-empty strictly increasing list of positive integers")
        return v

    @field_validator("times", "law_times")
    @classmethod
    def unit_interval(cls, v: Optional[List[float]]) -> Optional[List[float]]:
        if v is not None and any(not 0.0 <= t <= 1.0 for t in v):
            raise ValueError("times must lie in [0, 1]")
        return v

    @model_validator(mode="after")
    def consistent_shapes(self) -> "ExperimentConfig":
        _square(self.D, self.dim, "D")
        if self.Gamma is not None:
            _square(self.Gamma, self.dim, "Gamma")
        for name in ("A1", "A2", "D"):
            value = getattr(self.spectral, name)
            if value is not None:
                _square(value, self.dim, f"spectral.{name}")
        if self.model_path is not None and not Path(self.model_path).exists():
            raise ValueError(f"model file {self.model_path} does not exist")
        if self.functional not in BUILTIN_FUNCTIONALS and not Path(self.functional).exists():
            raise ValueError(f"functional {self.functional!r} is neither a builtin nor an existing file")
        return self

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON dump, output directory excluded."""
        canonical = json.dumps(self.model_dump(mode="json", exclude={"out"}), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class TableEntry(BaseModel):
    L: List[int]
    slot: int = Field(ge=1)
    value: float

    @field_validator("L")
    @classmethod
    def nonnegative(cls, v: List[int]) -> List[int]:
        if any(l < 0 for l in v):
            raise ValueError("multi-index entries must be nonnegative")
        return v


class TableDocument(BaseModel):
    """JSON form of a Hermite coefficient table; slots are 1-based."""
    dim: int = Field(ge=1)
    max_order: int = Field(ge=0)
    entries: List[TableEntry]

    @model_validator(mode="after")
    def entries_fit(self) -> "TableDocument":
        for entry in self.entries:
            if len(entry.L) != self.dim or entry.slot > self.dim:
                raise ValueError(f"entry {entry.L} / slot {entry.slot} does not fit dim {self.dim}")
            if sum(entry.L) > self.max_order:
                raise ValueError(f"entry {entry.L} exceeds max_order {self.max_order}")
        return self


class ModelDocument(BaseModel):
    """JSON form of a correlation model."""
    dim: int = Field(ge=1)
    D: List[float]
    Gamma: List[float]
    family: Literal["ofgn", "white", "table"] = "ofgn"
    lags: Optional[List[List[float]]] = None

    @model_validator(mode="after")
    def square_blocks(self) -> "ModelDocument":
        _square(self.D, self.dim, "D")
        _square(self.Gamma, self.dim, "Gamma")
        for block in self.lags or []:
            _square(block, self.dim, "lag block")
        if self.family == "table" and not self.lags:
            raise ValueError("table models need explicit lags")
        return self


class ConditionHReport(BaseModel):
    """Finite-N diagnostics of Condition H(m, D) for one correlation model."""
    m: int
    N_grid: List[int]
    slack_factor: float = Field(description="Ratios may grow by at most this factor over the grid")
    sum_bound_ratios: List[float]
    passes_sum_bound: bool
    tail_norms: List[float] = Field(description="Last lag norms of the decay window")
    passes_decay: bool
    asymptotic_errors: List[float] = Field(description="Relative Frobenius error of the double sum per N")
    passes_exact_asymptotic: bool
    proxy_note: str = "sum bound tested as a bounded-ratio proxy with a fixed slack factor on a finite N grid"

    @property
    def passed(self) -> bool:
        return self.passes_sum_bound and self.passes_decay


class VerificationReport(BaseModel):
    """
    Outcome of one statistical check.

    ``passed`` follows the check's own rule: statistic <= threshold for
    distance-like checks, inclusion in a confidence band otherwise.
    """
    test: str
    statistic: float
    threshold: float
    passed: bool
    standard_error: Optional[float] = None
    replicates: int = 0
    config_hash: str = ""
    details: dict[str, Any] = Field(default_factory=dict)
    note: Optional[str] = None


class SuiteReport(BaseModel):
    command: str
    config_hash: str
    passed: bool
    reports: List[VerificationReport] = Field(default_factory=list)


class ConvergeRow(BaseModel):
    """One row of the ``converge`` CSV."""
    N: int
    cov_frob_rel_err: float
    tail_ratio: float
    energy_stat: float
    energy_pvalue: float
    wall_seconds: Optional[float] = None
