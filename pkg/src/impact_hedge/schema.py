"""Core error types, configuration models and config-file loading."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Literal

import jsonschema
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator


class ImpactHedgeError(RuntimeError):
    """Raised for pricing, hedging and configuration errors."""


class DomainViolation(ImpactHedgeError):
    """A coefficient was evaluated at a gamma outside the model domain."""


class LengthMismatch(ImpactHedgeError):
    """An array does not match the grid it is paired with."""


class SingularSystem(ImpactHedgeError):
    """A tridiagonal system has a vanishing pivot."""


class UnsortedInput(ImpactHedgeError):
    """Abscissae are not strictly increasing."""


class NonFiniteGamma(ImpactHedgeError):
    """The gamma bound is infinite where a finite bound is required."""


class PolicyNonConvergence(ImpactHedgeError):
    """Howard iteration did not reach the policy tolerance."""

    def __init__(self, step: int, residual: float) -> None:
        super().__init__(
            f"Policy iteration did not converge at time step {step} "
            f"(last update {residual:.3e})"
        )
        self.step = step
        self.residual = residual


class CflViolation(ImpactHedgeError):
    """The explicit scheme time step exceeds its stability bound."""


class HypothesisViolation(ImpactHedgeError):
    """A study was run on a model outside its stated hypotheses."""


class ConfigIoError(ImpactHedgeError):
    """A config file could not be read or parsed."""


class UsageError(ImpactHedgeError):
    """Command-line usage error."""


class SchemaIssue(BaseModel):
    """A single config validation problem located by JSON pointer."""

    model_config = ConfigDict(frozen=True)

    path: str
    message: str


class SchemaError(ImpactHedgeError):
    """Raised when a config document fails validation."""

    def __init__(self, issues: list[SchemaIssue]) -> None:
        lines = "; ".join(f"{issue.path}: {issue.message}" for issue in issues)
        super().__init__(f"Invalid config: {lines}")
        self.issues = issues


# ---------------------------------------------------------------------------
# Model, grid and payoff configuration
# ---------------------------------------------------------------------------

class SurfaceTable(BaseModel):
    """Tabulated (t, x) surface, bilinearly interpolated."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    t: list[float] = Field(..., min_length=1)
    x: list[float] = Field(..., min_length=2)
    values: list[list[float]] = Field(..., min_length=1)

    @model_validator(mode="after")
    def _validate_shape(self) -> SurfaceTable:
        if len(self.values) != len(self.t):
            raise ValueError(
                f"values has {len(self.values)} rows, expected one per t ({len(self.t)})"
            )
        for row in self.values:
            if len(row) != len(self.x):
                raise ValueError(
                    f"values row has {len(row)} entries, expected one per x ({len(self.x)})"
                )
        if any(b <= a for a, b in zip(self.t, self.t[1:])):
            raise ValueError("t must be strictly increasing")
        if any(b <= a for a, b in zip(self.x, self.x[1:])):
            raise ValueError("x must be strictly increasing")
        return self


class CurveTable(BaseModel):
    """Tabulated x-curve, linearly interpolated."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    x: list[float] = Field(..., min_length=2)
    values: list[float] = Field(..., min_length=2)

    @model_validator(mode="after")
    def _validate_shape(self) -> CurveTable:
        if len(self.values) != len(self.x):
            raise ValueError("x and values must have the same length")
        if any(b <= a for a, b in zip(self.x, self.x[1:])):
            raise ValueError("x must be strictly increasing")
        return self


class ModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    model: Literal["bolozo"] = "bolozo"
    sigma0: float = Field(default=0.2, gt=0.0)
    sigma0_table: SurfaceTable | None = None
    f: float = Field(default=0.1, ge=0.0)
    f_table: CurveTable | None = None
    vol_scaling: Literal["absolute", "proportional"] = "proportional"
    epsilon: float = Field(default=1.0, gt=0.0)
    drift: float = 0.0

    @model_validator(mode="after")
    def _validate_tables(self) -> ModelConfig:
        if self.sigma0_table is not None:
            if any(v <= 0.0 for row in self.sigma0_table.values for v in row):
                raise ValueError("sigma0_table values must be positive")
        if self.f_table is not None:
            if any(v < 0.0 for v in self.f_table.values):
                raise ValueError("f_table values must be non-negative")
        return self


class GridConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    x_min: float = 40.0
    x_max: float = 250.0
    n_space: int = Field(default=801, ge=3)
    t_start: float = 0.0
    t_end: float = 1.0
    n_time: int = Field(default=400, ge=1)

    @model_validator(mode="after")
    def _validate_box(self) -> GridConfig:
        if self.x_min >= self.x_max:
            raise ValueError(f"x_min ({self.x_min}) must be below x_max ({self.x_max})")
        if self.t_start >= self.t_end:
            raise ValueError(f"t_start ({self.t_start}) must be below t_end ({self.t_end})")
        return self


PayoffKind = Literal["call", "put", "call_spread", "digital", "table"]


class PayoffConfig(BaseModel):
    """Terminal payoff description (lower-semicontinuous, linear growth)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: PayoffKind = "call"
    strike: float | None = 100.0
    strike_low: float | None = None
    strike_high: float | None = None
    xs: list[float] | None = None
    ys: list[float] | None = None

    @model_validator(mode="after")
    def _validate_parameters(self) -> PayoffConfig:
        if self.kind in ("call", "put", "digital") and self.strike is None:
            raise ValueError(f"payoff kind '{self.kind}' requires 'strike'")
        if self.kind == "call_spread":
            if self.strike_low is None or self.strike_high is None:
                raise ValueError("payoff kind 'call_spread' requires 'strike_low' and 'strike_high'")
            if self.strike_low >= self.strike_high:
                raise ValueError("call_spread requires strike_low < strike_high")
        if self.kind == "table":
            if not self.xs or not self.ys or len(self.xs) != len(self.ys) or len(self.xs) < 2:
                raise ValueError("payoff kind 'table' requires xs and ys of equal length >= 2")
            if any(b <= a for a, b in zip(self.xs, self.xs[1:])):
                raise ValueError("table payoff xs must be strictly increasing")
        return self


class SolverOptions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    scheme: Literal["implicit", "explicit"] = "implicit"
    control_mode: Literal["exact", "discrete"] = "exact"
    n_controls: int = Field(default=257, ge=2)
    tol_policy: float = Field(default=1e-10, gt=0.0)
    max_policy_iterations: int = Field(default=50, ge=1)
    delta_cap_ratio: float = Field(default=1e-3, gt=0.0, lt=1.0)
    fenchel_grid_size: int = Field(default=4096, ge=16)
    z_span: float = Field(default=1e3, gt=0.0)


class McOptions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_paths: int = Field(default=100_000, ge=1)
    n_steps: int = Field(default=400, ge=1)
    seed: int = Field(default=20240601, ge=0, lt=2**64)
    block_size: int = Field(default=4096, ge=1)


class RootConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    model: ModelConfig = Field(default_factory=ModelConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    payoff: PayoffConfig = Field(default_factory=PayoffConfig)
    solver: SolverOptions = Field(default_factory=SolverOptions)
    mc: McOptions = Field(default_factory=McOptions)
    spot: float = 100.0
    output_dir: str = "out"
    seed: int = Field(default=20240601, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _validate_spot(self) -> RootConfig:
        if not self.grid.x_min < self.spot < self.grid.x_max:
            raise ValueError(
                f"spot ({self.spot}) must lie strictly inside [{self.grid.x_min}, {self.grid.x_max}]"
            )
        return self


StudyKind = Literal["expansion", "variance_identity", "consistency_matrix", "hedge_order"]


class StudyConfig(BaseModel):
    """A cross-validation study: one kind plus every budget and seed it needs."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    study: StudyKind
    config: RootConfig = Field(default_factory=RootConfig)
    eps_list: list[float] = Field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    variance_paths: int = Field(default=200_000, ge=1)
    dual_paths: int = Field(default=100_000, ge=1)
    hedge_paths: int = Field(default=10_000, ge=1)
    hedge_steps_list: list[int] = Field(default_factory=lambda: [200, 800])
    seeds: list[int] = Field(default_factory=lambda: [11, 12, 13])
    report_path: str = "study_report.json"
    table_path: str | None = None

    @model_validator(mode="after")
    def _validate_lists(self) -> StudyConfig:
        if any(eps <= 0.0 for eps in self.eps_list):
            raise ValueError("eps_list entries must be positive")
        if any(b >= a for a, b in zip(self.eps_list, self.eps_list[1:])):
            raise ValueError("eps_list must be strictly descending")
        if not self.seeds:
            raise ValueError("seeds must be explicit and non-empty")
        if any(n < 1 for n in self.hedge_steps_list):
            raise ValueError("hedge_steps_list entries must be positive")
        return self


# ---------------------------------------------------------------------------
# Config loading
# ---------------------------------------------------------------------------

def load_config_document(path: Path | str) -> dict[str, Any]:
    """Read a JSON or YAML config document into a mapping."""
    source = Path(path)
    try:
        raw_text = source.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigIoError(f"Cannot read config {source}: {exc}") from exc
    try:
        raw = yaml.safe_load(raw_text)
    except yaml.YAMLError as exc:
        raise ConfigIoError(f"Config {source} does not parse: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigIoError(f"Config root must be a mapping: {source}")
    return raw


def _pointer(parts: Any) -> str:
    tokens = [str(part) for part in parts]
    return "/" + "/".join(tokens) if tokens else "/"


def _schema_issues(raw: dict[str, Any], model: type[BaseModel]) -> list[SchemaIssue]:
    validator = jsonschema.Draft202012Validator(model.model_json_schema())
    issues = [
        SchemaIssue(path=_pointer(error.absolute_path), message=error.message)
        for error in validator.iter_errors(raw)
    ]
    return sorted(issues, key=lambda issue: (issue.path, issue.message))


def _validate(raw: dict[str, Any], model: type[BaseModel]) -> Any:
    issues = _schema_issues(raw, model)
    if issues:
        raise SchemaError(issues)
    try:
        return model.model_validate(raw)
    except ValidationError as exc:
        cross_field = [
            SchemaIssue(
                path=_pointer(part for part in error["loc"] if not str(part).startswith("function-")),
                message=error["msg"],
            )
            for error in exc.errors()
        ]
        raise SchemaError(cross_field) from exc


def validate_config(raw: dict[str, Any]) -> RootConfig:
    """Validate a raw config mapping; unknown keys are rejected."""
    return _validate(raw, RootConfig)


def validate_study_config(raw: dict[str, Any]) -> StudyConfig:
    return _validate(raw, StudyConfig)


def parse_config(path: Path | str) -> RootConfig:
    """Load and validate a root config file."""
    return validate_config(load_config_document(path))


def parse_study_config(path: Path | str) -> StudyConfig:
    return validate_study_config(load_config_document(path))


def default_config() -> RootConfig:
    """Root config with every default filled in."""
    return RootConfig()
