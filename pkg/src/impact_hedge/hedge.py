"""Pathwise replication under impacted dynamics.

A strategy (y, b, gamma) moves the price, the position and the wealth as

    dX = mu dt + sigma(t, X, gamma) dW
    dY = b dt + gamma dX
    dV = F(t, X, gamma) dt + Y dX

Strategies are read off a value surface u: y = u_x, gamma = u_xx and
b = (d_t + 1/2 sigma(., gamma)^2 d_xx) u_x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from impact_hedge.events import HedgeCompleted, NullEmitter, SolverEventEmitter
from impact_hedge.facelift import PayoffSpec, face_lift
from impact_hedge.model import ImpactModel
from impact_hedge.numerics import InterpolationStats, SpaceTimeGrid, SurfaceInterpolator, first_diff, interp_linear, second_diff
from impact_hedge.pde import solve_delta_v, solve_hjb, solve_linear_v0
from impact_hedge.sampling import block_normals, run_blocks
from impact_hedge.schema import LengthMismatch, SolverOptions

FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class StrategySpec:
    """Feedback strategy tabulated on a time-space grid.

    The terminal row of ``gamma`` repeats the last solved slice, so lookups
    just before maturity never see the face-lift's boundary curvature.
    """

    grid: SpaceTimeGrid
    delta: FloatArray
    gamma: FloatArray
    trade_rate: FloatArray
    source: str = "exact"

    def __post_init__(self) -> None:
        expected = (self.grid.n_time + 1, self.grid.n_space)
        for name in ("delta", "gamma", "trade_rate"):
            if getattr(self, name).shape != expected:
                raise LengthMismatch(f"{name} has shape {getattr(self, name).shape}, expected {expected}")

    @classmethod
    def zero(cls, grid: SpaceTimeGrid) -> StrategySpec:
        empty = np.zeros((grid.n_time + 1, grid.n_space))
        return cls(grid, empty, empty.copy(), empty.copy(), source="zero")

    @classmethod
    def from_surface(
        cls,
        model: ImpactModel,
        values: FloatArray,
        grid: SpaceTimeGrid,
        *,
        delta_cap_ratio: float = 1e-3,
        source: str = "exact",
    ) -> StrategySpec:
        delta = first_diff(values, grid)
        gamma = second_diff(values, grid)
        gamma[-1] = gamma[-2]
        t = grid.t[:, None]
        bound = np.asarray(model.bar_gamma(t, grid.x[None, :]), dtype=float)
        capped = np.where(np.isfinite(bound), np.minimum(gamma, bound * (1.0 - delta_cap_ratio)), gamma)
        vol = np.asarray(model.sigma(t, grid.x[None, :], capped, strict=False), dtype=float)
        delta_time = np.empty_like(delta)
        delta_time[:-1] = np.diff(delta, axis=0) / grid.dt
        delta_time[-1] = delta_time[-2]
        trade_rate = delta_time + 0.5 * vol**2 * first_diff(gamma, grid)
        return cls(grid, delta, gamma, trade_rate, source=source)

    def y0(self, x0: float) -> float:
        return float(interp_linear(self.grid, self.delta[0], x0))


@dataclass(frozen=True)
class HedgeReport:
    """Replication errors V_T - g_hat(X_T) per path and their statistics."""

    strategy: str
    n_paths: int
    n_steps: int
    seed: int
    initial_capital: float
    terminal_errors: FloatArray
    terminal_wealth: FloatArray
    domain_escapes: int
    grid_escapes: int
    delta_gap_mean: float

    @property
    def sup_error(self) -> float:
        return float(np.max(np.abs(self.terminal_errors)))

    @property
    def mean_error(self) -> float:
        return float(np.mean(self.terminal_errors))

    @property
    def std_error(self) -> float:
        return float(np.std(self.terminal_errors, ddof=1)) if self.n_paths > 1 else 0.0

    @property
    def stderr(self) -> float:
        return self.std_error / math.sqrt(self.n_paths)

    @property
    def grid_escape_fraction(self) -> float:
        return self.grid_escapes / self.n_paths

    def summary(self) -> dict[str, float | int | str]:
        return {
            "strategy": self.strategy,
            "n_paths": self.n_paths,
            "n_steps": self.n_steps,
            "seed": self.seed,
            "initial_capital": self.initial_capital,
            "sup_error": self.sup_error,
            "mean_error": self.mean_error,
            "std_error": self.std_error,
            "stderr": self.stderr,
            "domain_escapes": self.domain_escapes,
            "grid_escapes": self.grid_escapes,
            "delta_gap_mean": self.delta_gap_mean,
        }


def simulate_impact_dynamics(
    model: ImpactModel,
    strategy: StrategySpec,
    x0: float,
    v0_capital: float,
    grid: SpaceTimeGrid,
    terminal: FloatArray,
    n_paths: int,
    seed: int,
    *,
    n_steps: int | None = None,
    block_size: int = 4096,
    delta_cap_ratio: float = 1e-3,
    capital_shift: float = 0.0,
    emitter: SolverEventEmitter | None = None,
) -> HedgeReport:
    """Euler simulation of (X, Y, V) under ``strategy``; errors against ``terminal``.

    ``capital_shift`` is added once the errors are formed, so a shifted run
    differs from the plain one by the shift up to a single rounding.

    A path whose gamma reaches bar_gamma - delta_cap/2 is counted as a domain
    escape and continues with gamma clipped there. Paths leaving the grid are
    counted and read the strategy at the nearest edge.
    """
    sink = emitter or NullEmitter()
    steps = n_steps or grid.n_time
    dt = grid.maturity / steps
    sqrt_dt = math.sqrt(dt)
    terminal_values = np.asarray(terminal, dtype=float)
    if terminal_values.shape != (grid.n_space,):
        raise LengthMismatch(f"terminal has shape {terminal_values.shape}, expected ({grid.n_space},)")

    def _block(block: int, count: int) -> dict[str, FloatArray]:
        stats = InterpolationStats()
        delta = SurfaceInterpolator(strategy.grid, strategy.delta, stats)
        gamma_at = SurfaceInterpolator(strategy.grid, strategy.gamma, stats)
        trade = SurfaceInterpolator(strategy.grid, strategy.trade_rate, stats)
        normals = block_normals(seed, block, steps, count)
        x = np.full(count, float(x0))
        y = np.full(count, strategy.y0(x0))
        gains = np.zeros(count)
        escaped_domain = np.zeros(count, dtype=bool)
        escaped_grid = np.zeros(count, dtype=bool)
        delta_gap = np.zeros(count)
        for k in range(steps):
            t = grid.t_start + k * dt
            gamma = gamma_at(t, x)
            bound = np.asarray(model.bar_gamma(t, x), dtype=float)
            limit = np.where(np.isfinite(bound), bound * (1.0 - 0.5 * delta_cap_ratio), math.inf)
            outside = gamma >= limit
            escaped_domain |= outside
            gamma = np.where(outside, bound * (1.0 - delta_cap_ratio), gamma)
            b = trade(t, x)
            vol = np.asarray(model.sigma(t, x, gamma, strict=False), dtype=float)
            drift = np.asarray(model.drift(t, x, gamma, b), dtype=float)
            cost = np.asarray(model.big_f(t, x, gamma, strict=False), dtype=float)
            delta_gap = np.maximum(delta_gap, np.abs(y - delta(t, x)))
            dx = drift * dt + vol * sqrt_dt * normals[k]
            gains = gains + cost * dt + y * dx
            y = y + b * dt + gamma * dx
            x = x + dx
            escaped_grid |= (x < grid.x_min) | (x > grid.x_max)
        target = np.asarray(interp_linear(grid, terminal_values, x), dtype=float)
        return {
            "gains_minus_target": gains - target,
            "gains": gains,
            "domain": escaped_domain.astype(float),
            "grid": escaped_grid.astype(float),
            "delta_gap": delta_gap,
        }

    out = run_blocks(_block, n_paths, block_size, kind=f"hedge_{strategy.source}", emitter=sink)
    report = HedgeReport(
        strategy=strategy.source,
        n_paths=n_paths,
        n_steps=steps,
        seed=seed,
        initial_capital=float(v0_capital) + capital_shift,
        terminal_errors=(v0_capital + out["gains_minus_target"]) + capital_shift,
        terminal_wealth=(v0_capital + out["gains"]) + capital_shift,
        domain_escapes=int(np.sum(out["domain"])),
        grid_escapes=int(np.sum(out["grid"])),
        delta_gap_mean=float(np.mean(out["delta_gap"])),
    )
    sink.emit_hedge_completed(HedgeCompleted(
        strategy=report.strategy,
        n_paths=n_paths,
        n_steps=steps,
        mean_error=report.mean_error,
        sup_error=report.sup_error,
        domain_escapes=report.domain_escapes,
        grid_escapes=report.grid_escapes,
    ))
    return report


def hedge_surface(
    model: ImpactModel,
    values: FloatArray,
    grid: SpaceTimeGrid,
    terminal: FloatArray,
    capital: float,
    n_paths: int,
    n_steps: int,
    seed: int,
    *,
    x0: float,
    source: str,
    delta_cap_ratio: float = 1e-3,
    capital_shift: float = 0.0,
    block_size: int = 4096,
    emitter: SolverEventEmitter | None = None,
) -> HedgeReport:
    """Follow the strategy read off ``values`` from ``capital`` and score it against ``terminal``."""
    strategy = StrategySpec.from_surface(model, values, grid, delta_cap_ratio=delta_cap_ratio, source=source)
    return simulate_impact_dynamics(
        model, strategy, x0, capital, grid, terminal, n_paths, seed,
        n_steps=n_steps, block_size=block_size, delta_cap_ratio=delta_cap_ratio,
        capital_shift=capital_shift, emitter=emitter,
    )


def exact_hedge(
    model: ImpactModel,
    payoff: PayoffSpec,
    grid: SpaceTimeGrid,
    n_paths: int,
    n_steps: int,
    seed: int,
    *,
    x0: float,
    options: SolverOptions | None = None,
    capital_shift: float = 0.0,
    block_size: int = 4096,
    emitter: SolverEventEmitter | None = None,
) -> HedgeReport:
    """Replicate the face-lifted payoff from the super-hedging price v(0, x0)."""
    opts = options or SolverOptions()
    terminal = face_lift(payoff, model, grid).g_hat_values
    solution = solve_hjb(model, terminal, grid, opts, emitter=emitter)
    return hedge_surface(
        model, solution.values, grid, terminal, solution.price_at(x0), n_paths, n_steps, seed,
        x0=x0, source="exact", delta_cap_ratio=opts.delta_cap_ratio, capital_shift=capital_shift,
        block_size=block_size, emitter=emitter,
    )


def asymptotic_hedge(
    model: ImpactModel,
    payoff: PayoffSpec,
    grid: SpaceTimeGrid,
    eps: float,
    n_paths: int,
    n_steps: int,
    seed: int,
    *,
    x0: float,
    delta_cap_ratio: float = 1e-3,
    block_size: int = 4096,
    emitter: SolverEventEmitter | None = None,
) -> HedgeReport:
    """Hedge under the eps-scaled model with the strategy of w = v0 + eps * delta_v.

    Starts from capital v0(0, x0) + eps * delta_v(0, x0). The target is the
    face-lift under the unscaled model, which meets the looser bound of every
    scaled model with eps <= 1.
    """
    if eps < 0.0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    terminal = face_lift(payoff, model, grid).g_hat_values
    v0 = solve_linear_v0(model, terminal, grid, emitter=emitter)
    delta_v = solve_delta_v(model, v0, emitter=emitter)
    return hedge_surface(
        model.scaled(eps), v0.values + eps * delta_v.values, grid, terminal,
        v0.price_at(x0) + eps * delta_v.price_at(x0), n_paths, n_steps, seed,
        x0=x0, source=f"asymptotic:{eps:g}", delta_cap_ratio=delta_cap_ratio,
        block_size=block_size, emitter=emitter,
    )
