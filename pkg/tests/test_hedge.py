"""Tests for pathwise replication under impacted dynamics."""

import dataclasses

import numpy as np
import pytest

from impact_hedge.facelift import face_lift
from impact_hedge.hedge import (
    StrategySpec,
    asymptotic_hedge,
    exact_hedge,
    hedge_surface,
    simulate_impact_dynamics,
)
from impact_hedge.model import BoLoZoModel
from impact_hedge.numerics import SpaceTimeGrid
from impact_hedge.pde import solve_hjb, solve_linear_v0
from impact_hedge.schema import LengthMismatch, PayoffConfig


class TestStrategySpec:
    def test_shapes_are_checked(self, wide_grid: SpaceTimeGrid) -> None:
        with pytest.raises(LengthMismatch, match="delta"):
            StrategySpec(wide_grid, np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)))

    def test_surface_derivatives(self, free_model: BoLoZoModel, wide_grid: SpaceTimeGrid) -> None:
        values = np.tile(0.5 * (wide_grid.x - 100.0) ** 2, (wide_grid.n_time + 1, 1))
        strategy = StrategySpec.from_surface(free_model, values, wide_grid)
        assert strategy.y0(102.0) == pytest.approx(2.0)
        np.testing.assert_allclose(strategy.gamma[:, 1:-1], 1.0, rtol=1e-9)
        # time-independent surface with flat gamma: no trading drift
        np.testing.assert_allclose(strategy.trade_rate[:, 2:-2], 0.0, atol=1e-8)


class TestSimulation:
    def test_zero_strategy_keeps_capital(self, free_model: BoLoZoModel, wide_grid: SpaceTimeGrid) -> None:
        report = simulate_impact_dynamics(free_model, StrategySpec.zero(wide_grid), 100.0, 1.5, wide_grid,
                                          np.zeros(wide_grid.n_space), 200, seed=5, block_size=64)
        np.testing.assert_allclose(report.terminal_errors, 1.5)
        np.testing.assert_allclose(report.terminal_wealth, 1.5)
        assert report.domain_escapes == 0
        assert report.sup_error == pytest.approx(1.5)

    def test_terminal_length_checked(self, free_model: BoLoZoModel, wide_grid: SpaceTimeGrid) -> None:
        with pytest.raises(LengthMismatch):
            simulate_impact_dynamics(free_model, StrategySpec.zero(wide_grid), 100.0, 0.0, wide_grid,
                                     np.zeros(3), 10, seed=0)


class TestExactHedge:
    def test_replicates_without_impact(
        self, free_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        grid = wide_grid.with_time_steps(100)
        report = exact_hedge(free_model, call, grid, 4000, 200, seed=12, x0=100.0, block_size=1000)
        assert abs(report.mean_error) <= 4.0 * report.stderr + 2e-2
        assert report.std_error < 0.5
        assert report.domain_escapes == 0
        assert report.initial_capital == pytest.approx(5.0 / np.sqrt(2.0 * np.pi), abs=1e-2)

    def test_same_seed_same_errors(
        self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        first = exact_hedge(wide_model, call, wide_grid, 300, 50, seed=3, x0=100.0, block_size=100)
        second = exact_hedge(wide_model, call, wide_grid, 300, 50, seed=3, x0=100.0, block_size=100)
        np.testing.assert_array_equal(first.terminal_errors, second.terminal_errors)
        assert first.summary() == second.summary()

    def test_converges_under_impact(
        self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        coarse = exact_hedge(wide_model, call, wide_grid, 2000, 50, seed=21, x0=100.0, block_size=500)
        fine = exact_hedge(wide_model, call, wide_grid, 2000, 200, seed=21, x0=100.0, block_size=500)
        assert abs(fine.mean_error) <= 4.0 * fine.stderr + 2e-2
        assert fine.std_error < 0.75 * coarse.std_error
        assert fine.domain_escapes == 0

    def test_capital_shift_is_additive(
        self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        plain = exact_hedge(wide_model, call, wide_grid, 300, 50, seed=8, x0=100.0, block_size=100)
        shifted = exact_hedge(wide_model, call, wide_grid, 300, 50, seed=8, x0=100.0, block_size=100,
                              capital_shift=0.5)
        np.testing.assert_array_equal(shifted.terminal_errors, plain.terminal_errors + 0.5)
        np.testing.assert_array_equal(shifted.terminal_wealth, plain.terminal_wealth + 0.5)
        assert shifted.initial_capital == plain.initial_capital + 0.5

    def test_drift_does_not_bias_replication(
        self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        drifting = dataclasses.replace(wide_model, drift_rate=2.0)
        report = exact_hedge(drifting, call, wide_grid, 2000, 200, seed=22, x0=100.0, block_size=500)
        assert abs(report.mean_error) <= 4.0 * report.stderr + 2e-2
        assert report.domain_escapes == 0

    def test_summary_fields(self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig) -> None:
        summary = exact_hedge(wide_model, call, wide_grid, 50, 20, seed=1, x0=100.0).summary()
        assert summary["strategy"] == "exact"
        assert summary["n_paths"] == 50
        assert summary["n_steps"] == 20


class TestAsymptoticHedge:
    def test_zero_eps_starts_from_linear_price(
        self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        report = asymptotic_hedge(wide_model, call, wide_grid, 0.0, 100, 20, seed=2, x0=100.0)
        lifted = face_lift(call, wide_model, wide_grid).g_hat_values
        v0 = solve_linear_v0(wide_model, lifted, wide_grid)
        assert report.initial_capital == pytest.approx(v0.price_at(100.0))
        assert report.strategy == "asymptotic:0"
        assert report.domain_escapes == 0

    def test_impact_raises_capital(
        self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        base = asymptotic_hedge(wide_model, call, wide_grid, 0.0, 20, 10, seed=2, x0=100.0)
        impacted = asymptotic_hedge(wide_model, call, wide_grid, 0.1, 20, 10, seed=2, x0=100.0)
        assert impacted.initial_capital > base.initial_capital

    def test_gap_to_exact_hedge_shrinks_with_eps(
        self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        terminal = face_lift(call, wide_model, wide_grid).g_hat_values
        gaps = []
        for eps in (0.2, 0.1):
            asymptotic = asymptotic_hedge(wide_model, call, wide_grid, eps, 200, 100, seed=6, x0=100.0)
            scaled = wide_model.scaled(eps)
            solution = solve_hjb(scaled, terminal, wide_grid)
            reference = hedge_surface(scaled, solution.values, wide_grid, terminal, solution.price_at(100.0),
                                      200, 100, seed=6, x0=100.0, source="exact")
            gaps.append(float(np.max(np.abs(asymptotic.terminal_errors - reference.terminal_errors))))
        assert gaps[1] < 0.5 * gaps[0]

    def test_negative_eps_rejected(
        self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        with pytest.raises(ValueError, match="eps"):
            asymptotic_hedge(wide_model, call, wide_grid, -0.1, 10, 10, seed=0, x0=100.0)
