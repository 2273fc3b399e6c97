"""Backward solvers for the gamma-constrained pricing equation and its expansion.

``solve_hjb`` marches the fully nonlinear equation backward with implicit
Euler steps, each step solved by Howard policy iteration on the Fenchel
form sup_s (1/2 s^2 D2v - bar F*(s^2)). ``solve_linear_v0`` and
``solve_delta_v`` give the zeroth-order price and its first-order
correction in the small-impact expansion.

Boundary rows of every solve keep the terminal value: D2v = 0 there, and
bar F(., 0) = 0 makes the generator vanish.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict
from scipy.stats import norm

from impact_hedge.events import NullEmitter, PolicyStepSolved, SolveCompleted, SolverEventEmitter
from impact_hedge.facelift import PayoffSpec, face_lift
from impact_hedge.model import BoLoZoModel, ImpactModel, check_assumptions
from impact_hedge.numerics import (
    InterpolationStats,
    SpaceTimeGrid,
    SurfaceInterpolator,
    TriDiagSystem,
    first_diff,
    interp_linear,
    second_diff,
    solve_tridiag,
)
from impact_hedge.sampling import McResult, block_normals, mean_and_stderr, run_blocks
from impact_hedge.schema import (
    CflViolation,
    HypothesisViolation,
    LengthMismatch,
    PolicyNonConvergence,
    SolverOptions,
)
from impact_hedge.workers import map_ordered

FloatArray = NDArray[np.float64]

CONTROL_FLOOR_RATIO = 0.25


# ---------------------------------------------------------------------------
# Solution container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PdeSolution:
    """Value surface on the grid with its derivative and control fields.

    Row ``n`` of every surface is the slice at ``grid.t[n]``. The terminal
    row of ``control_field`` repeats the last solved step: at maturity the
    face-lift sits on the gamma bound, where the argmax is the cap.
    """

    grid: SpaceTimeGrid
    values: FloatArray
    dx_values: FloatArray
    dxx_values: FloatArray
    control_field: FloatArray
    residual_field: FloatArray
    solver: str
    iterations: NDArray[np.int64]
    options: SolverOptions = field(default_factory=SolverOptions)
    gamma_margin: float = -math.inf
    capped_nodes: int = 0

    def price_at(self, x: float, step: int = 0) -> float:
        return float(interp_linear(self.grid, self.values[step], x))

    @property
    def residual_sup(self) -> float:
        return float(np.max(np.abs(self.residual_field)))

    @property
    def total_iterations(self) -> int:
        return int(np.sum(self.iterations))

    def surface(self, name: Literal["values", "dx_values", "dxx_values", "control_field"],
                stats: InterpolationStats | None = None) -> SurfaceInterpolator:
        return SurfaceInterpolator(self.grid, getattr(self, name), stats or InterpolationStats())


def _finish(
    grid: SpaceTimeGrid,
    values: FloatArray,
    control: FloatArray,
    residual_field: FloatArray,
    solver: str,
    iterations: NDArray[np.int64],
    options: SolverOptions,
    gamma_margin: float = -math.inf,
    capped_nodes: int = 0,
) -> PdeSolution:
    return PdeSolution(
        grid=grid,
        values=values,
        dx_values=first_diff(values, grid),
        dxx_values=second_diff(values, grid),
        control_field=control,
        residual_field=residual_field,
        solver=solver,
        iterations=iterations,
        options=options,
        gamma_margin=gamma_margin,
        capped_nodes=capped_nodes,
    )


def _check_terminal(terminal: ArrayLike, grid: SpaceTimeGrid) -> FloatArray:
    values = np.asarray(terminal, dtype=float)
    if values.shape != (grid.n_space,):
        raise LengthMismatch(f"terminal has shape {values.shape}, expected ({grid.n_space},)")
    return values


def _diffusion_system(coefficient: FloatArray, rhs: FloatArray, grid: SpaceTimeGrid,
                      boundary: FloatArray) -> TriDiagSystem:
    """(I - dt * coefficient * D2) v = rhs inside, v = boundary at the two edges."""
    a = coefficient * grid.dt / grid.dx**2
    lower = -a.copy()
    upper = -a.copy()
    diag = 1.0 + 2.0 * a
    b = rhs.copy()
    for edge in (0, -1):
        lower[edge] = 0.0
        upper[edge] = 0.0
        diag[edge] = 1.0
        b[edge] = boundary[edge]
    return TriDiagSystem(lower, diag, upper, b)


# ---------------------------------------------------------------------------
# Control sets and policy improvement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ControlSet:
    """Admissible volatilities per node at one time slice.

    ``levels``/``penalty`` hold the discrete set and bar F* on it; they are
    empty in exact mode, where the argmax is closed form.
    """

    lower: FloatArray
    upper: FloatArray
    pinned: NDArray[np.bool_]
    gamma: FloatArray
    levels: FloatArray | None = None
    penalty: FloatArray | None = None


def build_control_set(
    model: ImpactModel,
    t: float,
    x: FloatArray,
    options: SolverOptions,
    *,
    discrete: bool,
) -> ControlSet:
    """Controls spanning [sigma_o / 4, sigma_o / delta_cap_ratio] at each node.

    The upper end is the impacted volatility at z = bar_gamma - delta_cap for
    the linear-impact model. Nodes with vanishing impact are pinned to sigma_o.
    """
    reference = np.asarray(model.base_vol(t, x), dtype=float)
    gamma = np.asarray(model.bar_gamma(t, x), dtype=float)
    pinned = np.isinf(gamma) & model.has_closed_form
    lower = np.where(pinned, reference, CONTROL_FLOOR_RATIO * reference)
    upper = np.where(pinned, reference, reference / options.delta_cap_ratio)
    if not discrete:
        return ControlSet(lower, upper, pinned, gamma)

    base = np.union1d(
        np.geomspace(CONTROL_FLOOR_RATIO, 1.0 / options.delta_cap_ratio, options.n_controls), [1.0]
    )
    levels = np.where(pinned[:, None], reference[:, None], reference[:, None] * base[None, :])
    if model.has_closed_form:
        penalty = np.asarray(model.fenchel_star(t, x[:, None], levels), dtype=float)
    else:
        penalty = np.vstack([
            np.asarray(model.numeric_fenchel_star(
                t, float(xi), row,
                grid_size=options.fenchel_grid_size,
                z_span=options.z_span,
                delta_cap_ratio=options.delta_cap_ratio,
                refine=False,
            ), dtype=float)
            for xi, row in zip(x, levels)
        ])
    return ControlSet(lower, upper, pinned, gamma, levels, penalty)


def improve_policy(
    model: ImpactModel,
    t: float,
    x: FloatArray,
    z: FloatArray,
    controls: ControlSet,
) -> tuple[FloatArray, FloatArray, FloatArray]:
    """Pointwise argmax of 1/2 s^2 z - bar F*(s^2): (s, penalty, Hamiltonian).

    Ties in the discrete set go to the smallest s.
    """
    if controls.levels is None:
        with np.errstate(invalid="ignore"):
            s_star = np.asarray(model.optimal_vol(t, x, z, strict=False), dtype=float)
        s_star = np.where(np.isnan(s_star), controls.upper, s_star)
        s = np.clip(s_star, controls.lower, controls.upper)
        penalty = np.asarray(model.fenchel_star(t, x, s), dtype=float)
        return s, penalty, 0.5 * s**2 * z - penalty

    objective = 0.5 * controls.levels**2 * z[:, None] - controls.penalty
    best = np.argmax(objective, axis=1)
    rows = np.arange(x.size)
    return controls.levels[rows, best], controls.penalty[rows, best], objective[rows, best]


class _ControlCache:
    """Reuses the control set across steps when coefficients do not move in time."""

    def __init__(self, model: ImpactModel, x: FloatArray, options: SolverOptions, discrete: bool) -> None:
        self._model = model
        self._x = x
        self._options = options
        self._discrete = discrete
        self._cached: ControlSet | None = None

    def at(self, t: float) -> ControlSet:
        if self._cached is not None and self._model.time_homogeneous:
            return self._cached
        self._cached = build_control_set(self._model, t, self._x, self._options, discrete=self._discrete)
        return self._cached


def _uses_discrete_controls(model: ImpactModel, options: SolverOptions) -> bool:
    return options.control_mode == "discrete" or not model.has_closed_form


def _capped_bound(gamma: FloatArray, options: SolverOptions) -> FloatArray:
    return np.where(np.isfinite(gamma), gamma - options.delta_cap_ratio * np.abs(gamma), math.inf)


def _gamma_margin(model: ImpactModel, grid: SpaceTimeGrid, values: FloatArray, options: SolverOptions) -> float:
    """max over non-terminal interior nodes of D2v - (bar_gamma - delta_cap)."""
    dxx = second_diff(values, grid)
    margin = -math.inf
    for n, t in enumerate(grid.t[:-1]):
        bound = _capped_bound(np.asarray(model.bar_gamma(t, grid.x), dtype=float), options)
        finite = np.isfinite(bound[1:-1])
        if np.any(finite):
            margin = max(margin, float(np.max((dxx[n, 1:-1] - bound[1:-1])[finite])))
    return margin


# ---------------------------------------------------------------------------
# Fully nonlinear solve
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HowardStep:
    """One implicit step solved by policy iteration."""

    values: FloatArray
    control: FloatArray
    iterations: int
    update: float
    residuals: list[float]


def _step_residual(v_new: FloatArray, v_next: FloatArray, hamiltonian: FloatArray, dt: float) -> float:
    return float(np.max(np.abs((v_new - v_next)[1:-1] / dt - hamiltonian[1:-1])))


def howard_step(
    model: ImpactModel,
    t: float,
    v_next: FloatArray,
    grid: SpaceTimeGrid,
    controls: ControlSet,
    options: SolverOptions,
    *,
    step: int = 0,
) -> HowardStep:
    """Solve v - dt sup_s(1/2 s^2 D2v - bar F*(s^2)) = v_next by policy iteration.

    ``residuals`` holds the sup-norm defect of the nonlinear step equation
    after each policy solve.
    """
    x = grid.x
    v_current = v_next
    s, penalty, _ = improve_policy(model, t, x, second_diff(v_next, grid), controls)
    update = math.inf
    residuals: list[float] = []
    for iteration in range(1, options.max_policy_iterations + 1):
        system = _diffusion_system(0.5 * s**2, v_next - grid.dt * penalty, grid, v_next)
        v_new = solve_tridiag(system)
        update = float(np.max(np.abs(v_new - v_current)))
        s, penalty, hamiltonian = improve_policy(model, t, x, second_diff(v_new, grid), controls)
        residuals.append(_step_residual(v_new, v_next, hamiltonian, grid.dt))
        v_current = v_new
        if update <= options.tol_policy * (1.0 + float(np.max(np.abs(v_new)))):
            return HowardStep(v_current, s, iteration, update, residuals)
    raise PolicyNonConvergence(step, update)


def solve_hjb(
    model: ImpactModel,
    terminal: ArrayLike,
    grid: SpaceTimeGrid,
    options: SolverOptions | None = None,
    *,
    emitter: SolverEventEmitter | None = None,
) -> PdeSolution:
    """Solve min{-v_t - bar F(D2v), bar_gamma - D2v} = 0 backward from ``terminal``.

    ``terminal`` should already satisfy the discrete gamma bound (face-lift
    it first). Generic models with a non-convex generator go to the explicit
    monotone scheme.
    """
    opts = options or SolverOptions()
    sink = emitter or NullEmitter()
    g_hat = _check_terminal(terminal, grid)

    scheme = opts.scheme
    if scheme == "implicit" and not model.has_closed_form:
        if not check_assumptions(model, grid, max_time_slices=3).convex:
            scheme = "explicit"
    if scheme == "explicit":
        return _solve_explicit(model, g_hat, grid, opts, sink)

    x = grid.x
    n_steps = grid.n_time
    values = np.empty((n_steps + 1, grid.n_space))
    control = np.empty_like(values)
    iterations = np.zeros(n_steps, dtype=np.int64)
    values[-1] = g_hat

    cache = _ControlCache(model, x, opts, _uses_discrete_controls(model, opts))

    capped_total = 0
    for n in range(n_steps - 1, -1, -1):
        t = grid.t[n]
        controls = cache.at(t)
        solved = howard_step(model, t, values[n + 1], grid, controls, opts, step=n)
        s = solved.control
        values[n] = solved.values
        control[n] = s
        iterations[n] = solved.iterations
        capped = int(np.count_nonzero((s[1:-1] >= controls.upper[1:-1]) & ~controls.pinned[1:-1]))
        capped_total += capped
        sink.emit_policy_step_solved(
            PolicyStepSolved(step=n, iterations=solved.iterations, update_norm=solved.update, capped_nodes=capped)
        )
    control[-1] = control[-2]

    provisional = _finish(grid, values, control, np.zeros_like(values), "hjb", iterations, opts)
    solution = _finish(
        grid, values, control, residual(provisional, model, opts), "hjb", iterations, opts,
        gamma_margin=_gamma_margin(model, grid, values, opts), capped_nodes=capped_total,
    )
    sink.emit_solve_completed(SolveCompleted(
        solver="hjb",
        iterations=solution.total_iterations,
        residual_sup=solution.residual_sup,
        gamma_margin=solution.gamma_margin if math.isfinite(solution.gamma_margin) else None,
    ))
    return solution


def _solve_explicit(
    model: ImpactModel,
    g_hat: FloatArray,
    grid: SpaceTimeGrid,
    opts: SolverOptions,
    sink: SolverEventEmitter,
) -> PdeSolution:
    """Explicit monotone stepping with bar F evaluated at min(D2v, bar_gamma - delta_cap)."""
    x = grid.x
    values = np.empty((grid.n_time + 1, grid.n_space))
    control = np.empty_like(values)
    values[-1] = g_hat
    for n in range(grid.n_time, -1, -1):
        t = grid.t[n]
        cap = _capped_bound(np.asarray(model.bar_gamma(t, x), dtype=float), opts)
        z = np.minimum(second_diff(values[n], grid), cap)
        control[n] = np.asarray(model.optimal_vol(t, x, z, strict=False), dtype=float)
        if n == 0:
            break
        t_prev = grid.t[n - 1]
        cap_prev = _capped_bound(np.asarray(model.bar_gamma(t_prev, x), dtype=float), opts)
        z_prev = np.minimum(second_diff(values[n], grid), cap_prev)
        slope = np.asarray(model.dz_bar_f(t_prev, x, z_prev, strict=False), dtype=float)
        courant = 2.0 * grid.dt * float(np.max(slope[1:-1])) / grid.dx**2
        if courant > 1.0 + 1e-12:
            raise CflViolation(
                f"explicit step {n - 1} has Courant number {courant:.3f} > 1; "
                f"use at least {math.ceil(grid.n_time * courant)} time steps"
            )
        generator = np.asarray(model.bar_f(t_prev, x, z_prev, strict=False), dtype=float)
        step = values[n].copy()
        step[1:-1] += grid.dt * generator[1:-1]
        values[n - 1] = step

    control[-1] = control[-2]
    iterations = np.ones(grid.n_time, dtype=np.int64)
    residual_field = np.zeros_like(values)
    residual_field[:-1, 1:-1] = _explicit_defect(model, grid, values, opts)
    solution = _finish(
        grid, values, control, residual_field, "hjb_explicit", iterations, opts,
        gamma_margin=_gamma_margin(model, grid, values, opts),
    )
    sink.emit_solve_completed(SolveCompleted(
        solver="hjb_explicit",
        iterations=grid.n_time,
        residual_sup=solution.residual_sup,
        gamma_margin=solution.gamma_margin if math.isfinite(solution.gamma_margin) else None,
    ))
    return solution


def _explicit_defect(model: ImpactModel, grid: SpaceTimeGrid, values: FloatArray, opts: SolverOptions) -> FloatArray:
    out = np.empty((grid.n_time, grid.n_space - 2))
    for n in range(grid.n_time):
        t = grid.t[n]
        cap = _capped_bound(np.asarray(model.bar_gamma(t, grid.x), dtype=float), opts)
        z = np.minimum(second_diff(values[n + 1], grid), cap)
        generator = np.asarray(model.bar_f(t, grid.x, z, strict=False), dtype=float)
        time_derivative = (values[n + 1] - values[n]) / grid.dt
        out[n] = (-time_derivative - generator)[1:-1]
    return out


def residual(solution: PdeSolution, model: ImpactModel, options: SolverOptions | None = None) -> FloatArray:
    """Discrete defect min{-D_t v - bar F(D2v), bar_gamma - delta_cap - D2v}.

    bar F is the Fenchel supremum over the solver's control range, so capped
    nodes are judged against the capped equation. Terminal and boundary
    entries are zero.
    """
    opts = options or solution.options
    grid = solution.grid
    x = grid.x
    out = np.zeros_like(solution.values)
    cache = _ControlCache(model, x, opts, _uses_discrete_controls(model, opts))
    for n in range(grid.n_time):
        t = grid.t[n]
        z = second_diff(solution.values[n], grid)
        controls = cache.at(t)
        _, _, hamiltonian = improve_policy(model, t, x, z, controls)
        time_derivative = (solution.values[n + 1] - solution.values[n]) / grid.dt
        with np.errstate(invalid="ignore"):
            defect = np.minimum(-time_derivative - hamiltonian, _capped_bound(controls.gamma, opts) - z)
        out[n, 1:-1] = defect[1:-1]
    return out


# ---------------------------------------------------------------------------
# Linear solves of the small-impact expansion
# ---------------------------------------------------------------------------

def _zeroth_diffusion(model: ImpactModel, t: float, x: ArrayLike) -> FloatArray:
    """d_z bar F(t, x, 0), the diffusion coefficient of the impact-free equation."""
    return np.maximum(np.asarray(model.dz_bar_f(t, x, 0.0, strict=False), dtype=float), 0.0)


def solve_linear_v0(
    model: ImpactModel,
    terminal: ArrayLike,
    grid: SpaceTimeGrid,
    *,
    emitter: SolverEventEmitter | None = None,
) -> PdeSolution:
    """v0_t + d_z bar F_0 v0_xx = 0 with v0(T) = terminal."""
    sink = emitter or NullEmitter()
    g_hat = _check_terminal(terminal, grid)
    x = grid.x
    values = np.empty((grid.n_time + 1, grid.n_space))
    control = np.empty_like(values)
    residual_field = np.zeros_like(values)
    values[-1] = g_hat
    control[-1] = np.sqrt(2.0 * _zeroth_diffusion(model, grid.t_end, x))
    for n in range(grid.n_time - 1, -1, -1):
        a = _zeroth_diffusion(model, grid.t[n], x)
        values[n] = solve_tridiag(_diffusion_system(a, values[n + 1], grid, values[n + 1]))
        control[n] = np.sqrt(2.0 * a)
        defect = (values[n] - values[n + 1]) / grid.dt - a * second_diff(values[n], grid)
        residual_field[n, 1:-1] = defect[1:-1]

    solution = _finish(grid, values, control, residual_field, "linear_v0",
                       np.ones(grid.n_time, dtype=np.int64), SolverOptions())
    sink.emit_solve_completed(SolveCompleted(
        solver="linear_v0", iterations=grid.n_time, residual_sup=solution.residual_sup,
    ))
    return solution


def solve_delta_v(
    model: ImpactModel,
    v0: PdeSolution,
    grid: SpaceTimeGrid | None = None,
    *,
    emitter: SolverEventEmitter | None = None,
) -> PdeSolution:
    """First-order correction: dv_t + d_z bar F_0 dv_xx + 1/2 d2_z bar F_0 (v0_xx)^2 = 0, dv(T) = 0."""
    sink = emitter or NullEmitter()
    if grid is not None and grid != v0.grid:
        raise LengthMismatch("delta-v grid differs from the grid of v0")
    grid = v0.grid
    x = grid.x
    values = np.zeros((grid.n_time + 1, grid.n_space))
    residual_field = np.zeros_like(values)
    control = np.empty_like(values)
    control[-1] = np.sqrt(2.0 * _zeroth_diffusion(model, grid.t_end, x))
    for n in range(grid.n_time - 1, -1, -1):
        t = grid.t[n]
        a = _zeroth_diffusion(model, t, x)
        source = 0.5 * np.asarray(model.d2z_bar_f0(t, x), dtype=float) * v0.dxx_values[n] ** 2
        rhs = values[n + 1] + grid.dt * source
        values[n] = solve_tridiag(_diffusion_system(a, rhs, grid, values[n + 1]))
        control[n] = np.sqrt(2.0 * a)
        defect = (values[n] - values[n + 1]) / grid.dt - a * second_diff(values[n], grid) - source
        residual_field[n, 1:-1] = defect[1:-1]

    solution = _finish(grid, values, control, residual_field, "delta_v",
                       np.ones(grid.n_time, dtype=np.int64), SolverOptions())
    sink.emit_solve_completed(SolveCompleted(
        solver="delta_v", iterations=grid.n_time, residual_sup=solution.residual_sup,
    ))
    return solution


# ---------------------------------------------------------------------------
# Expansion table
# ---------------------------------------------------------------------------

class ExpansionRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    eps: float
    full_price: float
    v0_price: float
    delta_v_price: float
    expansion_price: float
    gap: float


class ExpansionTable(BaseModel):
    """Full price against v0 + eps * delta_v at the spot, per eps."""

    model_config = ConfigDict(frozen=True)

    spot: float
    rows: list[ExpansionRow]
    slope: float | None
    halving_ratios: list[float]


def fitted_slope(eps: ArrayLike, gaps: ArrayLike) -> float | None:
    """Least-squares slope of log gap against log eps over positive pairs."""
    e = np.asarray(eps, dtype=float)
    g = np.asarray(gaps, dtype=float)
    keep = (e > 0.0) & (g > 0.0)
    if np.count_nonzero(keep) < 2:
        return None
    return float(np.polyfit(np.log(e[keep]), np.log(g[keep]), 1)[0])


def halving_ratios(eps: list[float], gaps: list[float]) -> list[float]:
    """gap(eps/2) / gap(eps) for consecutive entries that halve eps."""
    ratios = []
    for (e1, g1), (e2, g2) in zip(zip(eps, gaps), zip(eps[1:], gaps[1:])):
        if math.isclose(e2, 0.5 * e1, rel_tol=1e-9) and g1 > 0.0:
            ratios.append(g2 / g1)
    return ratios


def price_expansion(
    model: ImpactModel,
    grid: SpaceTimeGrid,
    payoff: PayoffSpec,
    eps_list: list[float],
    options: SolverOptions | None = None,
    *,
    spot: float,
    emitter: SolverEventEmitter | None = None,
) -> ExpansionTable:
    """Compare full solves of the eps-scaled model with the first-order expansion.

    Every eps uses the face-lift under the unscaled model as terminal
    condition; it satisfies the looser bound of each scaled model with eps <= 1.
    """
    if any(eps < 0.0 for eps in eps_list):
        raise ValueError("eps_list entries must be non-negative")
    terminal = face_lift(payoff, model, grid).g_hat_values
    v0 = solve_linear_v0(model, terminal, grid, emitter=emitter)
    delta_v = solve_delta_v(model, v0, emitter=emitter)
    v0_price = v0.price_at(spot)
    dv_price = delta_v.price_at(spot)

    def _full(eps: float) -> float:
        if eps == 0.0:
            return v0_price
        return solve_hjb(model.scaled(eps), terminal, grid, options, emitter=emitter).price_at(spot)

    full_prices = map_ordered(_full, eps_list)
    rows = [
        ExpansionRow(
            eps=eps,
            full_price=full,
            v0_price=v0_price,
            delta_v_price=dv_price,
            expansion_price=v0_price + eps * dv_price,
            gap=abs(full - v0_price - eps * dv_price),
        )
        for eps, full in zip(eps_list, full_prices)
    ]
    gaps = [row.gap for row in rows]
    return ExpansionTable(
        spot=spot,
        rows=rows,
        slope=fitted_slope(eps_list, gaps),
        halving_ratios=halving_ratios(list(eps_list), gaps),
    )


# ---------------------------------------------------------------------------
# Monte Carlo representations of delta_v
# ---------------------------------------------------------------------------

def delta_v_feynman_kac(
    model: ImpactModel,
    v0: PdeSolution,
    x0: float,
    n_paths: int,
    seed: int,
    *,
    block_size: int = 4096,
    emitter: SolverEventEmitter | None = None,
) -> McResult:
    """E[1/2 int d2_z bar F_0 (v0_xx)^2 ds] along the impact-free diffusion.

    Uses the PDE time grid and left-point sums, matching the implicit source.
    """
    grid = v0.grid
    n_steps = grid.n_time
    sqrt_dt = math.sqrt(grid.dt)

    def _simulate(block: int, count: int) -> dict[str, FloatArray]:
        stats = InterpolationStats()
        curvature = v0.surface("dxx_values", stats)
        normals = block_normals(seed, block, n_steps, count)
        x = np.full(count, float(x0))
        accumulated = np.zeros(count)
        for k in range(n_steps):
            t = grid.t[k]
            gamma = curvature(t, x)
            accumulated += 0.5 * np.asarray(model.d2z_bar_f0(t, x), dtype=float) * gamma**2 * grid.dt
            x = x + np.sqrt(2.0 * _zeroth_diffusion(model, t, x)) * sqrt_dt * normals[k]
        return {"samples": accumulated, "clamped": np.array([stats.clamped], dtype=float),
                "queries": np.array([stats.queries], dtype=float)}

    out = run_blocks(_simulate, n_paths, block_size, kind="delta_v_feynman_kac", emitter=emitter)
    estimate, stderr = mean_and_stderr(out["samples"])
    queries = float(np.sum(out["queries"]))
    return McResult(
        estimate=estimate, stderr=stderr, n_paths=n_paths, n_steps=n_steps, seed=seed,
        clamp_fraction=float(np.sum(out["clamped"])) / queries if queries else 0.0,
        label="delta_v_feynman_kac",
    )


def expansion_tangent_mc(
    model: ImpactModel,
    v0: PdeSolution,
    terminal: ArrayLike,
    x0: float,
    n_paths: int,
    seed: int,
    *,
    block_size: int = 4096,
    emitter: SolverEventEmitter | None = None,
) -> McResult:
    """delta_v(0, x0) as 1/2 E[g_hat'(X_T) Y_T] with Y the tangent process.

    dY = (d_x d_z bar F_0 Y + d2_z bar F_0 v0_xx) / sqrt(2 d_z bar F_0) dW,
    driven by the same Brownian motion as X.
    """
    grid = v0.grid
    n_steps = grid.n_time
    sqrt_dt = math.sqrt(grid.dt)
    slope_terminal = first_diff(_check_terminal(terminal, grid), grid)

    def _simulate(block: int, count: int) -> dict[str, FloatArray]:
        stats = InterpolationStats()
        curvature = v0.surface("dxx_values", stats)
        normals = block_normals(seed, block, n_steps, count)
        x = np.full(count, float(x0))
        y = np.zeros(count)
        for k in range(n_steps):
            t = grid.t[k]
            a = _zeroth_diffusion(model, t, x)
            h = 1e-4 * np.maximum(1.0, np.abs(x))
            a_x = (_zeroth_diffusion(model, t, x + h) - _zeroth_diffusion(model, t, x - h)) / (2.0 * h)
            lam2 = np.asarray(model.d2z_bar_f0(t, x), dtype=float)
            root = np.sqrt(2.0 * a)
            with np.errstate(divide="ignore", invalid="ignore"):
                tangent_vol = np.where(root > 0.0, (a_x * y + lam2 * curvature(t, x)) / root, 0.0)
            dw = sqrt_dt * normals[k]
            x, y = x + root * dw, y + tangent_vol * dw
        slope = np.asarray(interp_linear(grid, slope_terminal, x, stats), dtype=float)
        return {"samples": 0.5 * slope * y, "clamped": np.array([stats.clamped], dtype=float),
                "queries": np.array([stats.queries], dtype=float)}

    out = run_blocks(_simulate, n_paths, block_size, kind="expansion_tangent_mc", emitter=emitter)
    estimate, stderr = mean_and_stderr(out["samples"])
    queries = float(np.sum(out["queries"]))
    return McResult(
        estimate=estimate, stderr=stderr, n_paths=n_paths, n_steps=n_steps, seed=seed,
        clamp_fraction=float(np.sum(out["clamped"])) / queries if queries else 0.0,
        label="expansion_tangent_mc",
    )


# ---------------------------------------------------------------------------
# Impact-free closed forms
# ---------------------------------------------------------------------------

def black_scholes_price(kind: Literal["call", "put"], spot: float, strike: float,
                        sigma: float, maturity: float) -> float:
    """Zero-rate Black-Scholes price."""
    if sigma * maturity <= 0.0:
        intrinsic = spot - strike if kind == "call" else strike - spot
        return max(intrinsic, 0.0)
    width = sigma * math.sqrt(maturity)
    d1 = (math.log(spot / strike) + 0.5 * width**2) / width
    d2 = d1 - width
    if kind == "call":
        return float(spot * norm.cdf(d1) - strike * norm.cdf(d2))
    return float(strike * norm.cdf(-d2) - spot * norm.cdf(-d1))


def bachelier_price(kind: Literal["call", "put"], spot: float, strike: float,
                    sigma: float, maturity: float) -> float:
    """Zero-rate Bachelier price with absolute volatility ``sigma``."""
    width = sigma * math.sqrt(maturity)
    moneyness = spot - strike if kind == "call" else strike - spot
    if width <= 0.0:
        return max(moneyness, 0.0)
    d = moneyness / width
    return float(moneyness * norm.cdf(d) + width * norm.pdf(d))


def impact_free_price(payoff: PayoffSpec, model: BoLoZoModel, spot: float, maturity: float) -> float:
    """Closed-form impact-free price of a call or put under a constant base volatility."""
    if payoff.kind not in ("call", "put"):
        raise HypothesisViolation(f"no closed form for payoff kind '{payoff.kind}'")
    if model.vol.table is not None:
        raise HypothesisViolation("closed forms need a constant base volatility")
    price = black_scholes_price if model.vol.scaling == "proportional" else bachelier_price
    return price(payoff.kind, spot, payoff.strike, model.vol.sigma0, maturity)
