"""Monte Carlo evaluation of the penalized-volatility dual representation.

For a bounded volatility control s, the additive dynamics
X = x + int s dW give the lower bound
E[g_hat(X_T) - int bar F*(t, X_t, s_t^2) dt] on the super-hedging price,
with equality at the Markov control read off the PDE solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict

from impact_hedge.events import SolverEventEmitter
from impact_hedge.model import ImpactModel, check_assumptions
from impact_hedge.numerics import InterpolationStats, SpaceTimeGrid, SurfaceInterpolator, interp_linear
from impact_hedge.pde import PdeSolution
from impact_hedge.sampling import McResult, block_normals, mean_and_stderr, run_blocks
from impact_hedge.schema import HypothesisViolation, LengthMismatch

FloatArray = NDArray[np.float64]

CONTACT_TOL = 1e-9


@dataclass(frozen=True)
class ControlSpec:
    """Non-negative bounded volatility control, Markov in (t, x)."""

    kind: Literal["markov", "constant", "table"]
    s_max: float
    value: float = 0.0
    grid: SpaceTimeGrid | None = None
    surface: FloatArray | None = None
    label: str = ""

    def __post_init__(self) -> None:
        if not self.s_max >= 0.0 or math.isinf(self.s_max):
            raise ValueError(f"s_max must be finite and non-negative, got {self.s_max}")
        if self.kind == "constant" and not 0.0 <= self.value <= self.s_max:
            raise ValueError(f"constant control {self.value} outside [0, {self.s_max}]")
        if self.kind != "constant" and (self.grid is None or self.surface is None):
            raise ValueError(f"{self.kind} control needs a grid and a surface")

    @classmethod
    def constant(cls, s: float) -> ControlSpec:
        return cls(kind="constant", s_max=s, value=s, label=f"const:{s:g}")

    @classmethod
    def markov_from_pde(cls, solution: PdeSolution, s_max: float | None = None) -> ControlSpec:
        """Feedback control read off a solve; the terminal row is the last solved step."""
        field = solution.control_field.copy()
        field[-1] = field[-2]
        bound = float(np.max(field[np.isfinite(field)])) if s_max is None else s_max
        return cls(kind="markov", s_max=bound, grid=solution.grid, surface=field, label="optimal")

    @classmethod
    def table(cls, grid: SpaceTimeGrid, surface: ArrayLike, label: str = "table") -> ControlSpec:
        values = np.asarray(surface, dtype=float)
        if values.shape != (grid.n_time + 1, grid.n_space):
            raise LengthMismatch(f"control table has shape {values.shape}")
        return cls(kind="table", s_max=float(np.max(values)), grid=grid, surface=values, label=label)

    def lookup(self, stats: InterpolationStats) -> SurfaceInterpolator | None:
        if self.kind == "constant":
            return None
        return SurfaceInterpolator(self.grid, self.surface, stats)


class PathBatch(BaseModel):
    """Terminal states and path statistics of a controlled simulation."""

    model_config = ConfigDict(frozen=True)

    terminal: list[float]
    penalty: list[float]
    control_mean: list[float]
    n_steps: int
    seed: int
    clamp_fraction: float


def _penalty(model: ImpactModel, t: float, x: FloatArray, s: FloatArray) -> FloatArray:
    if model.has_closed_form:
        return np.asarray(model.fenchel_star(t, x, s), dtype=float)
    return np.array([float(model.fenchel_star(t, float(xi), float(si))) for xi, si in zip(x, s)])


def _simulate(
    control: ControlSpec,
    grid: SpaceTimeGrid,
    x0: float,
    n_paths: int,
    seed: int,
    n_steps: int,
    block_size: int,
    model: ImpactModel | None,
    emitter: SolverEventEmitter | None,
    kind: str,
) -> dict[str, FloatArray]:
    dt = grid.maturity / n_steps
    sqrt_dt = math.sqrt(dt)

    def _block(block: int, count: int) -> dict[str, FloatArray]:
        stats = InterpolationStats()
        lookup = control.lookup(stats)
        normals = block_normals(seed, block, n_steps, count)
        x = np.full(count, float(x0))
        penalty = np.zeros(count)
        control_sum = np.zeros(count)
        for k in range(n_steps):
            t = grid.t_start + k * dt
            # left point: the control is predictable
            s = np.full(count, control.value) if lookup is None else lookup(t, x)
            s = np.clip(s, 0.0, control.s_max)
            control_sum += s
            if model is not None:
                penalty += _penalty(model, t, x, s) * dt
            x = x + s * sqrt_dt * normals[k]
        return {
            "terminal": x,
            "penalty": penalty,
            "control_mean": control_sum / n_steps,
            "clamped": np.array([stats.clamped], dtype=float),
            "queries": np.array([stats.queries], dtype=float),
        }

    return run_blocks(_block, n_paths, block_size, kind=kind, emitter=emitter)


def _clamp_fraction(out: dict[str, FloatArray]) -> float:
    queries = float(np.sum(out["queries"]))
    return float(np.sum(out["clamped"])) / queries if queries else 0.0


def simulate_controlled_paths(
    control: ControlSpec,
    grid: SpaceTimeGrid,
    x0: float,
    n_paths: int,
    seed: int,
    *,
    n_steps: int | None = None,
    block_size: int = 4096,
    model: ImpactModel | None = None,
    emitter: SolverEventEmitter | None = None,
) -> PathBatch:
    """Euler paths of X = x0 + int s dW; penalties accrue when a model is given."""
    steps = n_steps or grid.n_time
    out = _simulate(control, grid, x0, n_paths, seed, steps, block_size, model, emitter, "controlled_paths")
    return PathBatch(
        terminal=out["terminal"].tolist(),
        penalty=out["penalty"].tolist(),
        control_mean=out["control_mean"].tolist(),
        n_steps=steps,
        seed=seed,
        clamp_fraction=_clamp_fraction(out),
    )


def _require_convex(model: ImpactModel, grid: SpaceTimeGrid) -> None:
    if model.has_closed_form:
        return
    if not check_assumptions(model, grid, max_time_slices=3).convex:
        raise HypothesisViolation("dual representation needs a convex generator bar F")


def dual_value(
    control: ControlSpec,
    payoff_values: ArrayLike,
    model: ImpactModel,
    grid: SpaceTimeGrid,
    x0: float,
    n_paths: int,
    seed: int,
    *,
    raw_payoff: ArrayLike | None = None,
    n_steps: int | None = None,
    block_size: int = 4096,
    emitter: SolverEventEmitter | None = None,
) -> McResult:
    """Estimate E[payoff(X_T) - sum bar F*(t_i, X_i, s_i^2) dt] under ``control``.

    With ``raw_payoff`` (g on the grid) the result also carries the contact
    fraction P(g_hat(X_T) > g(X_T)) and the mean lift E[g_hat - g].
    """
    _require_convex(model, grid)
    terminal_values = np.asarray(payoff_values, dtype=float)
    if terminal_values.shape != (grid.n_space,):
        raise LengthMismatch(f"payoff values have shape {terminal_values.shape}")
    steps = n_steps or grid.n_time
    out = _simulate(control, grid, x0, n_paths, seed, steps, block_size, model, emitter, "dual_value")

    stats = InterpolationStats()
    x_terminal = out["terminal"]
    payoff_at_t = np.asarray(interp_linear(grid, terminal_values, x_terminal, stats), dtype=float)
    samples = payoff_at_t - out["penalty"]
    unbounded = not bool(np.all(np.isfinite(samples)))
    if unbounded:
        estimate, stderr = -math.inf, math.inf
    else:
        estimate, stderr = mean_and_stderr(samples)

    contact_fraction = lift_gap = lift_gap_stderr = 0.0
    if raw_payoff is not None:
        raw_at_t = np.asarray(interp_linear(grid, np.asarray(raw_payoff, dtype=float), x_terminal), dtype=float)
        lift = payoff_at_t - raw_at_t
        contact_fraction = float(np.mean(lift > CONTACT_TOL * (1.0 + np.abs(raw_at_t))))
        lift_gap, lift_gap_stderr = mean_and_stderr(lift)

    finite_penalty = out["penalty"][np.isfinite(out["penalty"])]
    queries = float(np.sum(out["queries"])) + stats.queries
    clamp = (float(np.sum(out["clamped"])) + stats.clamped) / queries if queries else 0.0
    return McResult(
        estimate=estimate,
        stderr=stderr,
        n_paths=n_paths,
        n_steps=steps,
        seed=seed,
        penalty_mean=float(np.mean(finite_penalty)) if finite_penalty.size else math.inf,
        contact_fraction=contact_fraction,
        lift_gap=lift_gap,
        lift_gap_stderr=lift_gap_stderr,
        unbounded_penalty=unbounded,
        clamp_fraction=clamp,
        label=control.label,
    )


class DualSweepRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: str
    estimate: float
    stderr: float
    gap_to_pde: float | None


class DualSweepTable(BaseModel):
    model_config = ConfigDict(frozen=True)

    rows: list[DualSweepRow]
    best_label: str
    best_estimate: float
    pde_price: float | None


def dual_sweep(
    controls: list[ControlSpec],
    payoff_values: ArrayLike,
    model: ImpactModel,
    grid: SpaceTimeGrid,
    x0: float,
    n_paths: int,
    seed: int,
    *,
    pde_price: float | None = None,
    n_steps: int | None = None,
    block_size: int = 4096,
    emitter: SolverEventEmitter | None = None,
) -> DualSweepTable:
    """Evaluate a control family on common random numbers; report the best."""
    if not controls:
        raise ValueError("dual_sweep needs at least one control")
    rows = []
    for control in controls:
        result = dual_value(control, payoff_values, model, grid, x0, n_paths, seed,
                            n_steps=n_steps, block_size=block_size, emitter=emitter)
        rows.append(DualSweepRow(
            label=control.label,
            estimate=result.estimate,
            stderr=result.stderr,
            gap_to_pde=None if pde_price is None else pde_price - result.estimate,
        ))
    best = max(rows, key=lambda row: row.estimate)
    return DualSweepTable(rows=rows, best_label=best.label, best_estimate=best.estimate, pde_price=pde_price)


class ContactReport(BaseModel):
    """Mass the terminal law puts where the face-lift is strict."""

    model_config = ConfigDict(frozen=True)

    contact_fraction: float
    lift_gap: float
    lift_gap_stderr: float
    flagged: bool
    message: str


def contact_diagnostic(result: McResult, *, tolerance: float = 0.05) -> ContactReport:
    """Flag results whose terminal law charges {g_hat > g} beyond ``tolerance``."""
    flagged = result.contact_fraction > tolerance
    message = (
        f"{result.contact_fraction:.2%} of paths end where g_hat > g (mean lift {result.lift_gap:.3e}); "
        + ("control looks suboptimal" if flagged else "consistent with an optimal control")
    )
    return ContactReport(
        contact_fraction=result.contact_fraction,
        lift_gap=result.lift_gap,
        lift_gap_stderr=result.lift_gap_stderr,
        flagged=flagged,
        message=message,
    )
