"""Public API for impact-hedge."""

from impact_hedge.dual import (
    ControlSpec,
    ContactReport,
    DualSweepTable,
    PathBatch,
    contact_diagnostic,
    dual_sweep,
    dual_value,
    simulate_controlled_paths,
)
from impact_hedge.events import JsonlEmitter, JsonlEventLog, NullEmitter, SolverEventEmitter
from impact_hedge.experiments import StudyCell, StudyReport, run_study
from impact_hedge.facelift import FaceliftResult, PayoffSpec, face_lift, face_lift_eps, payoff_values
from impact_hedge.hedge import (
    HedgeReport,
    StrategySpec,
    asymptotic_hedge,
    exact_hedge,
    hedge_surface,
    simulate_impact_dynamics,
)
from impact_hedge.model import (
    BoLoZoModel,
    CallableImpactModel,
    ImpactCurve,
    ImpactModel,
    VolSurface,
    build_model,
    check_assumptions,
)
from impact_hedge.numerics import SpaceTimeGrid, TriDiagSystem, solve_tridiag, upper_concave_envelope
from impact_hedge.pde import (
    ExpansionTable,
    HowardStep,
    PdeSolution,
    delta_v_feynman_kac,
    expansion_tangent_mc,
    howard_step,
    impact_free_price,
    price_expansion,
    residual,
    solve_delta_v,
    solve_hjb,
    solve_linear_v0,
)
from impact_hedge.reporting import canonical_json, config_hash
from impact_hedge.sampling import McResult
from impact_hedge.schema import (
    CflViolation,
    ConfigIoError,
    DomainViolation,
    GridConfig,
    HypothesisViolation,
    ImpactHedgeError,
    LengthMismatch,
    McOptions,
    ModelConfig,
    NonFiniteGamma,
    PayoffConfig,
    PolicyNonConvergence,
    RootConfig,
    SchemaError,
    SingularSystem,
    SolverOptions,
    StudyConfig,
    UnsortedInput,
    UsageError,
    default_config,
    parse_config,
    parse_study_config,
)

__all__ = [
    # Configuration
    "GridConfig",
    "McOptions",
    "ModelConfig",
    "PayoffConfig",
    "RootConfig",
    "SolverOptions",
    "StudyConfig",
    "default_config",
    "parse_config",
    "parse_study_config",
    # Errors
    "CflViolation",
    "ConfigIoError",
    "DomainViolation",
    "HypothesisViolation",
    "ImpactHedgeError",
    "LengthMismatch",
    "NonFiniteGamma",
    "PolicyNonConvergence",
    "SchemaError",
    "SingularSystem",
    "UnsortedInput",
    "UsageError",
    # Models
    "BoLoZoModel",
    "CallableImpactModel",
    "ImpactCurve",
    "ImpactModel",
    "VolSurface",
    "build_model",
    "check_assumptions",
    # Numerics
    "SpaceTimeGrid",
    "TriDiagSystem",
    "solve_tridiag",
    "upper_concave_envelope",
    # Pricing
    "ExpansionTable",
    "FaceliftResult",
    "HowardStep",
    "PayoffSpec",
    "PdeSolution",
    "delta_v_feynman_kac",
    "expansion_tangent_mc",
    "face_lift",
    "face_lift_eps",
    "howard_step",
    "impact_free_price",
    "payoff_values",
    "price_expansion",
    "residual",
    "solve_delta_v",
    "solve_hjb",
    "solve_linear_v0",
    # Dual and hedging
    "ContactReport",
    "ControlSpec",
    "DualSweepTable",
    "HedgeReport",
    "McResult",
    "PathBatch",
    "StrategySpec",
    "asymptotic_hedge",
    "contact_diagnostic",
    "dual_sweep",
    "dual_value",
    "exact_hedge",
    "hedge_surface",
    "simulate_controlled_paths",
    "simulate_impact_dynamics",
    # Studies and output
    "StudyCell",
    "StudyReport",
    "canonical_json",
    "config_hash",
    "run_study",
    # Events
    "JsonlEmitter",
    "JsonlEventLog",
    "NullEmitter",
    "SolverEventEmitter",
]
