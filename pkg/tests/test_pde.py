"""Tests for the gamma-constrained solver and the small-impact expansion."""

import dataclasses
import math

import numpy as np
import pytest

from impact_hedge.facelift import face_lift, lift_values, payoff_values
from impact_hedge.model import BoLoZoModel, CallableImpactModel, ImpactCurve, VolSurface
from impact_hedge.numerics import SpaceTimeGrid
from impact_hedge.pde import (
    bachelier_price,
    black_scholes_price,
    build_control_set,
    delta_v_feynman_kac,
    expansion_tangent_mc,
    fitted_slope,
    halving_ratios,
    howard_step,
    impact_free_price,
    improve_policy,
    price_expansion,
    residual,
    solve_delta_v,
    solve_hjb,
    solve_linear_v0,
)
from impact_hedge.schema import (
    CflViolation,
    GridConfig,
    HypothesisViolation,
    LengthMismatch,
    PayoffConfig,
    PolicyNonConvergence,
    SolverOptions,
)

BACHELIER_ATM = 5.0 / math.sqrt(2.0 * math.pi)


class TestClosedForms:
    def test_black_scholes_reference(self) -> None:
        assert black_scholes_price("call", 100.0, 100.0, 0.2, 1.0) == pytest.approx(7.9656, abs=1e-4)

    def test_put_call_parity(self) -> None:
        call = black_scholes_price("call", 100.0, 95.0, 0.3, 0.5)
        put = black_scholes_price("put", 100.0, 95.0, 0.3, 0.5)
        assert call - put == pytest.approx(5.0, abs=1e-10)

    def test_bachelier_at_the_money(self) -> None:
        assert bachelier_price("call", 100.0, 100.0, 5.0, 1.0) == pytest.approx(BACHELIER_ATM)

    def test_impact_free_price_dispatches_on_scaling(self, free_model: BoLoZoModel, call: PayoffConfig) -> None:
        assert impact_free_price(call, free_model, 100.0, 1.0) == pytest.approx(BACHELIER_ATM)
        proportional = BoLoZoModel(vol=VolSurface(sigma0=0.2, scaling="proportional"))
        assert impact_free_price(call, proportional, 100.0, 1.0) == pytest.approx(7.9656, abs=1e-4)

    def test_impact_free_price_needs_vanilla(self, free_model: BoLoZoModel) -> None:
        with pytest.raises(HypothesisViolation, match="digital"):
            impact_free_price(PayoffConfig(kind="digital", strike=100.0), free_model, 100.0, 1.0)


class TestPolicyImprovement:
    def test_exact_controls_span_cap(self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid) -> None:
        controls = build_control_set(wide_model, 0.0, wide_grid.x, SolverOptions(), discrete=False)
        np.testing.assert_allclose(controls.lower, 1.25)
        np.testing.assert_allclose(controls.upper, 5000.0)
        assert controls.levels is None

    def test_free_nodes_are_pinned(self, free_model: BoLoZoModel, wide_grid: SpaceTimeGrid) -> None:
        controls = build_control_set(free_model, 0.0, wide_grid.x, SolverOptions(), discrete=True)
        assert np.all(controls.pinned)
        np.testing.assert_allclose(controls.levels, 5.0)

    def test_discrete_argmax_near_closed_form(self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid) -> None:
        x = wide_grid.x
        z = np.full(x.size, 0.5)
        exact = build_control_set(wide_model, 0.0, x, SolverOptions(), discrete=False)
        discrete = build_control_set(wide_model, 0.0, x, SolverOptions(n_controls=2049), discrete=True)
        s_exact, _, h_exact = improve_policy(wide_model, 0.0, x, z, exact)
        s_discrete, _, h_discrete = improve_policy(wide_model, 0.0, x, z, discrete)
        np.testing.assert_allclose(s_exact, 10.0)
        np.testing.assert_allclose(h_exact, wide_model.bar_f(0.0, x, z), rtol=1e-12)
        assert np.all(h_discrete <= h_exact + 1e-12)
        np.testing.assert_allclose(h_discrete, h_exact, rtol=1e-3)
        np.testing.assert_allclose(s_discrete, 10.0, rtol=1e-2)


class TestSolveHjb:
    def test_no_impact_matches_bachelier(
        self, free_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        grid = wide_grid.with_time_steps(100)
        solution = solve_hjb(free_model, payoff_values(call, grid.x), grid)
        assert solution.price_at(100.0) == pytest.approx(BACHELIER_ATM, abs=1e-2)
        assert solution.residual_sup <= 1e-8
        assert solution.capped_nodes == 0
        assert math.isinf(solution.gamma_margin)

    def test_no_impact_matches_black_scholes(self, call: PayoffConfig) -> None:
        model = BoLoZoModel(vol=VolSurface(sigma0=0.2, scaling="proportional"), impact_curve=ImpactCurve(f=0.0))
        grid = SpaceTimeGrid.from_config(GridConfig())
        solution = solve_hjb(model, payoff_values(call, grid.x), grid)
        assert solution.price_at(100.0) == pytest.approx(7.9656, rel=1e-3)

    def test_surfaces_have_grid_shape(
        self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        terminal = face_lift(call, wide_model, wide_grid).g_hat_values
        solution = solve_hjb(wide_model, terminal, wide_grid)
        shape = (wide_grid.n_time + 1, wide_grid.n_space)
        for surface in (solution.values, solution.dxx_values, solution.control_field, solution.residual_field):
            assert surface.shape == shape
        np.testing.assert_array_equal(solution.values[-1], terminal)
        np.testing.assert_allclose(solution.values[:, 0], terminal[0], atol=1e-10)
        assert np.all(np.isfinite(solution.residual_field))
        assert solution.iterations.shape == (wide_grid.n_time,)

    def test_impact_raises_the_price(
        self, wide_model: BoLoZoModel, free_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        prices = []
        for model in (free_model, wide_model.scaled(0.5), wide_model):
            terminal = face_lift(call, model, wide_grid).g_hat_values
            prices.append(solve_hjb(model, terminal, wide_grid).price_at(100.0))
        assert prices[0] < prices[1] < prices[2]

    def test_gamma_stays_below_bound(
        self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        terminal = face_lift(call, wide_model, wide_grid).g_hat_values
        solution = solve_hjb(wide_model, terminal, wide_grid)
        assert solution.gamma_margin <= 1e-2

    def test_discrete_controls_agree_with_exact(
        self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        terminal = face_lift(call, wide_model, wide_grid).g_hat_values
        exact = solve_hjb(wide_model, terminal, wide_grid).price_at(100.0)
        discrete = solve_hjb(
            wide_model, terminal, wide_grid, SolverOptions(control_mode="discrete", n_controls=1025)
        ).price_at(100.0)
        assert discrete <= exact + 1e-6
        assert discrete == pytest.approx(exact, rel=1e-3)

    def test_policy_iteration_budget(
        self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        terminal = face_lift(call, wide_model, wide_grid).g_hat_values
        with pytest.raises(PolicyNonConvergence):
            solve_hjb(wide_model, terminal, wide_grid, SolverOptions(max_policy_iterations=1))

    def test_terminal_length_checked(self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid) -> None:
        with pytest.raises(LengthMismatch):
            solve_hjb(wide_model, np.zeros(7), wide_grid)

    def test_residual_recomputes_solver_defect(
        self, free_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        solution = solve_hjb(free_model, payoff_values(call, wide_grid.x), wide_grid)
        np.testing.assert_allclose(residual(solution, free_model), solution.residual_field, atol=1e-12)


class TestSolverInvariants:
    def test_ordered_terminals_give_ordered_solutions(
        self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid
    ) -> None:
        grid = wide_grid.with_time_steps(10)
        x = grid.x
        bound = np.ones(grid.n_space)
        rng = np.random.default_rng(20240611)
        for _ in range(20):
            a, b, c, d = rng.uniform(0.0, 1.0, size=4)
            k1, k2, k3 = rng.uniform(80.0, 120.0, size=3)
            low = a * np.maximum(x - k1, 0.0) + b * np.maximum(k2 - x, 0.0)
            high = low + c * np.maximum(x - k3, 0.0) + d
            below = solve_hjb(wide_model, lift_values(grid, low, bound).g_hat_values, grid)
            above = solve_hjb(wide_model, lift_values(grid, high, bound).g_hat_values, grid)
            assert np.all(above.values >= below.values - 1e-7)

    def test_affine_terminal_is_constant_in_time(self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid) -> None:
        terminal = 3.0 + 0.5 * wide_grid.x
        solution = solve_hjb(wide_model, terminal, wide_grid)
        np.testing.assert_allclose(solution.values, np.broadcast_to(terminal, solution.values.shape), atol=1e-9)
        assert solution.residual_sup <= 1e-8

    def test_perturbed_node_gives_local_residual_spike(
        self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        terminal = face_lift(call, wide_model, wide_grid).g_hat_values
        solution = solve_hjb(wide_model, terminal, wide_grid)
        values = solution.values.copy()
        values[10, 80] += 0.01
        perturbed = dataclasses.replace(solution, values=values)
        change = np.abs(residual(perturbed, wide_model) - residual(solution, wide_model))
        stencil = np.zeros_like(change, dtype=bool)
        stencil[9, 80] = True
        stencil[10, 79:82] = True
        assert np.max(change[~stencil]) == 0.0
        assert change[9, 80] >= 0.1
        assert np.all(change[10, 79:82] > 0.0)

    def test_howard_residual_is_non_increasing(
        self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        options = SolverOptions()
        terminal = face_lift(call, wide_model, wide_grid).g_hat_values
        solution = solve_hjb(wide_model, terminal, wide_grid, options)
        controls = build_control_set(wide_model, 0.0, wide_grid.x, options, discrete=False)
        for n in range(wide_grid.n_time):
            step = howard_step(wide_model, wide_grid.t[n], solution.values[n + 1], wide_grid, controls, options, step=n)
            np.testing.assert_array_equal(step.values, solution.values[n])
            assert len(step.residuals) == step.iterations
            assert all(later <= earlier + 1e-9 for earlier, later in zip(step.residuals, step.residuals[1:]))
            assert step.residuals[-1] <= 1e-6

    def test_control_field_is_impacted_vol(
        self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        terminal = face_lift(call, wide_model, wide_grid).g_hat_values
        solution = solve_hjb(wide_model, terminal, wide_grid)
        interior = np.s_[:-1, 1:-1]
        expected = 5.0 / (1.0 - solution.dxx_values[interior])
        np.testing.assert_allclose(solution.control_field[interior], expected, rtol=1e-9)
        np.testing.assert_array_equal(solution.control_field[-1], solution.control_field[-2])

    def test_halving_the_cap_barely_moves_the_price(
        self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        terminal = face_lift(call, wide_model, wide_grid).g_hat_values
        default = solve_hjb(wide_model, terminal, wide_grid).price_at(100.0)
        halved = solve_hjb(wide_model, terminal, wide_grid, SolverOptions(delta_cap_ratio=5e-4)).price_at(100.0)
        assert abs(halved - default) < 1e-4

    def test_derivative_bounds_persist(
        self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        terminal = face_lift(call, wide_model, wide_grid).g_hat_values
        solution = solve_hjb(wide_model, terminal, wide_grid)
        interior = np.s_[:, 1:-1]
        slope_bound = np.max(np.abs(solution.dx_values[-1, 1:-1]))
        assert np.max(np.abs(solution.dx_values[interior])) <= slope_bound + 1e-6
        curvature_bound = np.max(np.abs(solution.dxx_values[-1, 1:-1]))
        assert np.max(np.abs(solution.dxx_values[interior])) <= curvature_bound + 1e-6
        # bar_gamma = 1, delta_cap = 1e-3 on every non-terminal slice
        assert np.max(solution.dxx_values[:-1, 1:-1]) <= 1.0 - 1e-3 + 1e-9
        assert solution.gamma_margin <= 1e-9


class TestExplicitScheme:
    def test_cfl_violation(self, free_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig) -> None:
        with pytest.raises(CflViolation, match="Courant"):
            solve_hjb(free_model, payoff_values(call, wide_grid.x), wide_grid, SolverOptions(scheme="explicit"))

    def test_explicit_agrees_with_implicit(
        self, free_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        grid = wide_grid.with_time_steps(400)
        terminal = payoff_values(call, grid.x)
        explicit = solve_hjb(free_model, terminal, grid, SolverOptions(scheme="explicit"))
        implicit = solve_hjb(free_model, terminal, grid)
        assert explicit.solver == "hjb_explicit"
        assert explicit.price_at(100.0) == pytest.approx(implicit.price_at(100.0), abs=1e-2)

    def test_non_convex_generic_model_goes_explicit(self, wide_grid: SpaceTimeGrid, call: PayoffConfig) -> None:
        model = CallableImpactModel(
            sigma_fn=lambda t, x, z: np.full(np.broadcast_shapes(np.shape(x), np.shape(z)), 5.0),
            big_f_fn=lambda t, x, z: np.zeros(np.shape(z)),
            bar_f_fn=lambda t, x, z: 12.5 * np.asarray(z) - 0.01 * np.sin(z),
        )
        grid = wide_grid.with_time_steps(400)
        solution = solve_hjb(model, payoff_values(call, grid.x), grid)
        assert solution.solver == "hjb_explicit"


class TestExpansion:
    def test_linear_v0_without_impact_equals_hjb(
        self, free_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        terminal = payoff_values(call, wide_grid.x)
        v0 = solve_linear_v0(free_model, terminal, wide_grid)
        full = solve_hjb(free_model, terminal, wide_grid)
        np.testing.assert_allclose(v0.values, full.values, atol=1e-9)

    def test_delta_v_vanishes_without_impact(
        self, free_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        v0 = solve_linear_v0(free_model, payoff_values(call, wide_grid.x), wide_grid)
        np.testing.assert_array_equal(solve_delta_v(free_model, v0).values, 0.0)

    def test_delta_v_is_positive(self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig) -> None:
        terminal = face_lift(call, wide_model, wide_grid).g_hat_values
        v0 = solve_linear_v0(wide_model, terminal, wide_grid)
        delta_v = solve_delta_v(wide_model, v0)
        assert delta_v.price_at(100.0) > 0.0
        np.testing.assert_array_equal(delta_v.values[-1], 0.0)
        assert delta_v.residual_sup <= 1e-8

    def test_delta_v_grid_must_match(self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig) -> None:
        v0 = solve_linear_v0(wide_model, payoff_values(call, wide_grid.x), wide_grid)
        with pytest.raises(LengthMismatch):
            solve_delta_v(wide_model, v0, wide_grid.with_time_steps(10))

    def test_gap_is_second_order(self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig) -> None:
        table = price_expansion(wide_model, wide_grid, call, [0.2, 0.1, 0.05], spot=100.0)
        assert len(table.rows) == 3
        assert table.slope is not None and table.slope >= 1.5
        assert len(table.halving_ratios) == 2
        assert all(ratio <= 0.6 for ratio in table.halving_ratios)

    def test_zero_eps_row_is_v0(self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig) -> None:
        table = price_expansion(wide_model, wide_grid, call, [0.1, 0.0], spot=100.0)
        row = table.rows[1]
        assert row.full_price == row.v0_price
        assert row.gap == 0.0

    def test_feynman_kac_matches_pde(
        self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        terminal = face_lift(call, wide_model, wide_grid).g_hat_values
        v0 = solve_linear_v0(wide_model, terminal, wide_grid)
        delta_v = solve_delta_v(wide_model, v0)
        estimate = delta_v_feynman_kac(wide_model, v0, 100.0, 4000, seed=5, block_size=1000)
        assert abs(estimate.estimate - delta_v.price_at(100.0)) <= 4.0 * estimate.stderr + 0.1 * delta_v.price_at(100.0)

    def test_tangent_process_matches_pde(
        self, wide_model: BoLoZoModel, wide_grid: SpaceTimeGrid, call: PayoffConfig
    ) -> None:
        terminal = face_lift(call, wide_model, wide_grid).g_hat_values
        v0 = solve_linear_v0(wide_model, terminal, wide_grid)
        delta_v = solve_delta_v(wide_model, v0)
        estimate = expansion_tangent_mc(wide_model, v0, terminal, 100.0, 4000, seed=5, block_size=1000)
        assert abs(estimate.estimate - delta_v.price_at(100.0)) <= 4.0 * estimate.stderr + 0.1 * delta_v.price_at(100.0)


class TestSlopeFits:
    def test_fitted_slope_of_power_law(self) -> None:
        eps = [0.4, 0.2, 0.1]
        assert fitted_slope(eps, [3.0 * e**2 for e in eps]) == pytest.approx(2.0)

    def test_fitted_slope_needs_two_points(self) -> None:
        assert fitted_slope([0.1, 0.0], [1.0, 0.0]) is None

    def test_halving_ratios_skip_non_halving_pairs(self) -> None:
        assert halving_ratios([0.4, 0.2, 0.15], [1.0, 0.25, 0.2]) == [0.25]
