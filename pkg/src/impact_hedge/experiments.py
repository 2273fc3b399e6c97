"""Cross-validation studies driven by a ``StudyConfig``.

Each study is a pure function of its config and seeds. Results are report
cells (pass/fail with a margin, positive when passing) plus tables; failures
never raise.
"""

from __future__ import annotations

import math
from typing import Any, Callable

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from impact_hedge.dual import ControlSpec, dual_value
from impact_hedge.events import NullEmitter, SolverEventEmitter, StudyCellEvaluated
from impact_hedge.facelift import face_lift, payoff_values
from impact_hedge.hedge import HedgeReport, asymptotic_hedge, exact_hedge, hedge_surface
from impact_hedge.model import BoLoZoModel, ImpactCurve, build_model
from impact_hedge.numerics import SpaceTimeGrid, first_diff, interp_linear
from impact_hedge.pde import (
    delta_v_feynman_kac,
    expansion_tangent_mc,
    impact_free_price,
    price_expansion,
    solve_delta_v,
    solve_hjb,
    solve_linear_v0,
)
from impact_hedge.reporting import config_hash
from impact_hedge.sampling import block_normals, run_blocks
from impact_hedge.schema import HypothesisViolation, PayoffConfig, SolverOptions, StudyConfig

EXPANSION_MIN_SLOPE = 1.5
EXPANSION_MAX_HALVING = 0.6
ASYMPTOTIC_MAX_HALVING = 0.35
IMPACT_FREE_REL_TOL = 1e-3


class StudyCell(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    passed: bool
    value: float
    reference: float
    margin: float
    detail: str = ""


class StudyReport(BaseModel):
    """Outcome of one study: cells, tables and the config they came from."""

    model_config = ConfigDict(frozen=True)

    study: str
    config_hash: str
    passed: bool
    cells: list[StudyCell]
    tables: dict[str, list[dict[str, Any]]] = Field(default_factory=dict)


class _Cells:
    def __init__(self, study: str, emitter: SolverEventEmitter) -> None:
        self.study = study
        self.cells: list[StudyCell] = []
        self._emitter = emitter

    def add(self, name: str, value: float, reference: float, margin: float, detail: str = "") -> None:
        passed = bool(math.isfinite(margin) and margin >= 0.0)
        self.cells.append(StudyCell(name=name, passed=passed, value=value, reference=reference,
                                    margin=margin, detail=detail))
        self._emitter.emit_study_cell_evaluated(
            StudyCellEvaluated(study=self.study, cell=name, passed=passed, margin=margin)
        )

    def report(self, cfg: StudyConfig, tables: dict[str, list[dict[str, Any]]] | None = None) -> StudyReport:
        return StudyReport(
            study=self.study,
            config_hash=config_hash(cfg),
            passed=all(cell.passed for cell in self.cells),
            cells=self.cells,
            tables=tables or {},
        )


def _setup(cfg: StudyConfig) -> tuple[BoLoZoModel, SpaceTimeGrid]:
    return build_model(cfg.config.model), SpaceTimeGrid.from_config(cfg.config.grid)


# ---------------------------------------------------------------------------
# Expansion order
# ---------------------------------------------------------------------------

def run_expansion_study(cfg: StudyConfig, emitter: SolverEventEmitter | None = None) -> StudyReport:
    """Gap between full eps-solves and v0 + eps * delta_v; log-log slope and halving ratios."""
    sink = emitter or NullEmitter()
    model, grid = _setup(cfg)
    root = cfg.config
    table = price_expansion(model, grid, root.payoff, cfg.eps_list, root.solver, spot=root.spot, emitter=sink)
    cells = _Cells("expansion", sink)
    slope = table.slope if table.slope is not None else -math.inf
    cells.add("fitted_slope", slope, EXPANSION_MIN_SLOPE, slope - EXPANSION_MIN_SLOPE)
    for k, ratio in enumerate(table.halving_ratios):
        cells.add(f"halving_ratio_{k}", ratio, EXPANSION_MAX_HALVING, EXPANSION_MAX_HALVING - ratio)
    rows = [dict(row.model_dump(), slope=table.slope) for row in table.rows]
    return cells.report(cfg, {"expansion": rows})


# ---------------------------------------------------------------------------
# Variance identity
# ---------------------------------------------------------------------------

def _require_constant(model: BoLoZoModel) -> None:
    if not model.is_constant_coefficient():
        raise HypothesisViolation(
            "variance identity needs constant coefficients: absolute vol_scaling, "
            "no sigma0_table and no f_table"
        )


def terminal_slope_variance(
    model: BoLoZoModel,
    terminal: np.ndarray,
    grid: SpaceTimeGrid,
    x0: float,
    n_paths: int,
    seed: int,
    *,
    block_size: int = 4096,
    emitter: SolverEventEmitter | None = None,
) -> tuple[float, float]:
    """Var[g_hat'(X_T)] for X_T = x0 + sigma_o W_T, with the standard error of the estimate."""
    slope = first_diff(terminal, grid)
    width = model.vol.sigma0 * math.sqrt(grid.maturity)

    def _block(block: int, count: int) -> dict[str, np.ndarray]:
        x_terminal = x0 + width * block_normals(seed, block, 1, count)[0]
        return {"slope": np.asarray(interp_linear(grid, slope, x_terminal), dtype=float)}

    samples = run_blocks(_block, n_paths, block_size, kind="terminal_slope", emitter=emitter)["slope"]
    centered = samples - np.mean(samples)
    variance = float(np.var(samples, ddof=1)) if samples.size > 1 else 0.0
    fourth = float(np.mean(centered**4))
    stderr = math.sqrt(max(fourth - variance**2, 0.0) / samples.size)
    return variance, stderr


def run_variance_identity(cfg: StudyConfig, emitter: SolverEventEmitter | None = None) -> StudyReport:
    """delta_v(0, spot) against (d2_z bar F_0 / (4 d_z bar F_0)) Var[g_hat'(X_T)]."""
    sink = emitter or NullEmitter()
    model, grid = _setup(cfg)
    _require_constant(model)
    root = cfg.config
    terminal = face_lift(root.payoff, model, grid).g_hat_values
    v0 = solve_linear_v0(model, terminal, grid, emitter=sink)
    delta_v = solve_delta_v(model, v0, emitter=sink)
    lhs = delta_v.price_at(root.spot)

    lam1, lam2 = model.lambda_coefficients()
    coefficient = lam2 / (4.0 * lam1)
    variance, variance_stderr = terminal_slope_variance(
        model, terminal, grid, root.spot, cfg.variance_paths, cfg.seeds[0],
        block_size=root.mc.block_size, emitter=sink,
    )
    rhs = coefficient * variance
    tolerance = 3.0 * coefficient * variance_stderr + 5.0 * grid.dx**2 + 5.0 * grid.dt * abs(lhs)
    cells = _Cells("variance_identity", sink)
    cells.add("delta_v_vs_variance", lhs, rhs, tolerance - abs(lhs - rhs),
              detail=f"coefficient {coefficient:.6g}, variance {variance:.6g} +- {variance_stderr:.2g}")
    table = [{"delta_v": lhs, "coefficient": coefficient, "variance": variance,
              "variance_stderr": variance_stderr, "rhs": rhs, "tolerance": tolerance}]
    return cells.report(cfg, {"variance_identity": table})


# ---------------------------------------------------------------------------
# Consistency matrix
# ---------------------------------------------------------------------------

def run_consistency_matrix(cfg: StudyConfig, emitter: SolverEventEmitter | None = None) -> StudyReport:
    """Pairwise cross-checks: PDE against dual, expansion MC, hedge capital and closed forms."""
    sink = emitter or NullEmitter()
    model, grid = _setup(cfg)
    root = cfg.config
    mc = root.mc
    spot = root.spot
    seed = cfg.seeds[0]
    cells = _Cells("consistency_matrix", sink)

    lifted = face_lift(root.payoff, model, grid)
    solution = solve_hjb(model, lifted.g_hat_values, grid, root.solver, emitter=sink)
    price = solution.price_at(spot)

    optimal = dual_value(
        ControlSpec.markov_from_pde(solution), lifted.g_hat_values, model, grid, spot,
        cfg.dual_paths, seed, raw_payoff=lifted.g_values, n_steps=mc.n_steps,
        block_size=mc.block_size, emitter=sink,
    )
    # the PDE carries an O(dt) time error on top of the Monte Carlo noise
    slack = grid.dt * max(1.0, abs(price))
    cells.add("pde_vs_dual_optimal", optimal.estimate, price,
              3.0 * optimal.stderr + slack - abs(optimal.estimate - price),
              detail=f"stderr {optimal.stderr:.3e}, grid slack {slack:.3e}")

    raw = dual_value(
        ControlSpec.markov_from_pde(solution), lifted.g_values, model, grid, spot,
        cfg.dual_paths, seed, n_steps=mc.n_steps, block_size=mc.block_size, emitter=sink,
    )
    combined = math.hypot(optimal.stderr, raw.stderr)
    cells.add("dual_lifted_vs_raw_payoff", raw.estimate, optimal.estimate,
              3.0 * combined - abs(raw.estimate - optimal.estimate))

    reference_vol = float(model.base_vol(grid.t_start, spot))
    for scale in (0.75, 1.0, 1.25):
        constant = dual_value(
            ControlSpec.constant(scale * reference_vol), lifted.g_hat_values, model, grid, spot,
            cfg.dual_paths, seed, n_steps=mc.n_steps, block_size=mc.block_size, emitter=sink,
        )
        cells.add(f"weak_duality_const_{scale:g}", constant.estimate, price,
                  price + 3.0 * constant.stderr - constant.estimate)

    v0 = solve_linear_v0(model, lifted.g_hat_values, grid, emitter=sink)
    delta_v = solve_delta_v(model, v0, emitter=sink)
    dv_price = delta_v.price_at(spot)
    feynman_kac = delta_v_feynman_kac(model, v0, spot, cfg.variance_paths, seed,
                                      block_size=mc.block_size, emitter=sink)
    cells.add("delta_v_vs_feynman_kac", feynman_kac.estimate, dv_price,
              3.0 * feynman_kac.stderr + 1e-6 - abs(feynman_kac.estimate - dv_price))
    if model.is_constant_coefficient():
        tangent = expansion_tangent_mc(model, v0, lifted.g_hat_values, spot, cfg.variance_paths, seed,
                                       block_size=mc.block_size, emitter=sink)
        cells.add("delta_v_vs_tangent_process", tangent.estimate, dv_price,
                  3.0 * tangent.stderr + 1e-6 - abs(tangent.estimate - dv_price))

    hedge = exact_hedge(model, root.payoff, grid, cfg.hedge_paths, cfg.hedge_steps_list[0], seed,
                        x0=spot, options=root.solver, block_size=mc.block_size, emitter=sink)
    cells.add("hedge_mean_error", hedge.mean_error, 0.0, 3.0 * hedge.stderr - abs(hedge.mean_error))
    cells.add("hedge_domain_escapes", float(hedge.domain_escapes), 0.0, -float(hedge.domain_escapes))

    expansion = price_expansion(model, grid, root.payoff, [cfg.eps_list[-1]], root.solver, spot=spot,
                                emitter=sink).rows[0]
    first_order = abs(expansion.full_price - expansion.v0_price)
    cells.add("expansion_vs_full_pde", expansion.expansion_price, expansion.full_price,
              first_order - expansion.gap,
              detail=f"eps {expansion.eps:g}: gap {expansion.gap:.3e} against v0 gap {first_order:.3e}")

    if root.payoff.kind in ("call", "put") and model.vol.table is None:
        _impact_free_cells(cells, model, grid, root.payoff, root.solver, spot, sink)

    table = [cell.model_dump() for cell in cells.cells]
    return cells.report(cfg, {"consistency_matrix": table})


def _impact_free_cells(
    cells: _Cells,
    model: BoLoZoModel,
    grid: SpaceTimeGrid,
    payoff: PayoffConfig,
    options: SolverOptions,
    spot: float,
    sink: SolverEventEmitter,
) -> None:
    """Closed-form check on a refined grid, and error ordering on a 4x coarser one.

    The refined check extrapolates two time steps; the gap between them
    bounds the leftover time error.
    """
    impact_free = BoLoZoModel(vol=model.vol, impact_curve=ImpactCurve(f=0.0), drift_rate=model.drift_rate)
    closed = impact_free_price(payoff, impact_free, spot, grid.maturity)

    def _price(on: SpaceTimeGrid) -> float:
        return solve_hjb(impact_free, payoff_values(payoff, on.x), on, options, emitter=sink).price_at(spot)

    fine = grid.refined(2)
    half_step = _price(fine.with_time_steps(2 * fine.n_time))
    full_step = _price(fine)
    extrapolated = 2.0 * half_step - full_step
    tolerance = IMPACT_FREE_REL_TOL * abs(closed) + abs(half_step - full_step)
    cells.add("impact_free_closed_form", extrapolated, closed, tolerance - abs(extrapolated - closed),
              detail=f"dt and dt/2 prices {full_step:.6f}, {half_step:.6f}")

    on_grid = abs(_price(grid) - closed)
    coarse = abs(_price(grid.coarsened(4)) - closed)
    cells.add("coarsened_grid_ordered", coarse, on_grid, coarse - on_grid,
              detail="closed-form error on the 4x coarser grid against the configured grid")


# ---------------------------------------------------------------------------
# Hedge order
# ---------------------------------------------------------------------------

def run_hedge_order(cfg: StudyConfig, emitter: SolverEventEmitter | None = None) -> StudyReport:
    """Exact-hedge self-convergence in n_steps and asymptotic-hedge order in eps.

    The asymptotic error at each eps is measured pathwise against the exact
    hedge of the same scaled model on the same Brownian increments. Both runs
    share the Euler error of their paths, and what is left is the O(eps^2)
    gap between the expansion and the full solution. The eps = 0 floor is
    kept in the table.
    """
    sink = emitter or NullEmitter()
    model, grid = _setup(cfg)
    root = cfg.config
    seed = cfg.seeds[0]
    block_size = root.mc.block_size
    delta_cap = root.solver.delta_cap_ratio
    cells = _Cells("hedge_order", sink)

    exact_rows = []
    for n_steps in cfg.hedge_steps_list:
        report = exact_hedge(model, root.payoff, grid, cfg.hedge_paths, n_steps, seed,
                             x0=root.spot, options=root.solver, block_size=block_size, emitter=sink)
        exact_rows.append(dict(report.summary()))
    for first, second in zip(exact_rows, exact_rows[1:]):
        if second["n_steps"] == 4 * first["n_steps"] and first["sup_error"] > 0.0:
            ratio = second["sup_error"] / first["sup_error"]
            cells.add(f"exact_sup_ratio_{first['n_steps']}_{second['n_steps']}", ratio, 0.5,
                      0.3 - abs(ratio - 0.5))

    n_steps = cfg.hedge_steps_list[-1]
    terminal = face_lift(root.payoff, model, grid).g_hat_values
    eps_values = [0.0] + list(cfg.eps_list[:3])
    asymptotic: dict[float, HedgeReport] = {}
    gaps: dict[float, float] = {}
    for eps in eps_values:
        asymptotic[eps] = asymptotic_hedge(model, root.payoff, grid, eps, cfg.hedge_paths, n_steps, seed,
                                           x0=root.spot, delta_cap_ratio=delta_cap,
                                           block_size=block_size, emitter=sink)
        scaled = model.scaled(eps)
        solution = solve_hjb(scaled, terminal, grid, root.solver, emitter=sink)
        reference = hedge_surface(scaled, solution.values, grid, terminal, solution.price_at(root.spot),
                                  cfg.hedge_paths, n_steps, seed, x0=root.spot, source=f"exact:{eps:g}",
                                  delta_cap_ratio=delta_cap, block_size=block_size, emitter=sink)
        gaps[eps] = float(np.max(np.abs(asymptotic[eps].terminal_errors - reference.terminal_errors)))

    floor = asymptotic[0.0].sup_error
    positive = cfg.eps_list[:3]
    for big, small in zip(positive, positive[1:]):
        if math.isclose(small, 0.5 * big, rel_tol=1e-9) and gaps[big] > 0.0:
            ratio = gaps[small] / gaps[big]
            cells.add(f"asymptotic_ratio_{big:g}_{small:g}", ratio, ASYMPTOTIC_MAX_HALVING,
                      ASYMPTOTIC_MAX_HALVING - ratio)
    asymptotic_rows = [
        dict(report.summary(), eps=eps, gap_to_exact=gaps[eps], excess_over_floor=max(report.sup_error - floor, 0.0))
        for eps, report in asymptotic.items()
    ]
    return cells.report(cfg, {"exact": exact_rows, "asymptotic": asymptotic_rows})


STUDIES: dict[str, Callable[[StudyConfig, SolverEventEmitter | None], StudyReport]] = {
    "expansion": run_expansion_study,
    "variance_identity": run_variance_identity,
    "consistency_matrix": run_consistency_matrix,
    "hedge_order": run_hedge_order,
}


def run_study(cfg: StudyConfig, emitter: SolverEventEmitter | None = None) -> StudyReport:
    return STUDIES[cfg.study](cfg, emitter)
