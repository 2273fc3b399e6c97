"""Terminal payoffs and their gamma-constrained face-lift.

The face-lift of g under a curvature bound gamma is the smallest function
above g whose second derivative stays below gamma. With Gamma any function
satisfying Gamma'' = gamma it equals concave_envelope(g - Gamma) + Gamma.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import interp1d

from impact_hedge.model import ImpactModel
from impact_hedge.numerics import SpaceTimeGrid, upper_concave_envelope
from impact_hedge.schema import LengthMismatch, NonFiniteGamma, PayoffConfig

PayoffSpec = PayoffConfig

CONTACT_TOL = 1e-9


def payoff_values(payoff: PayoffSpec, x: ArrayLike) -> NDArray[np.float64]:
    """Evaluate the raw payoff g at the given prices."""
    xs = np.asarray(x, dtype=float)
    if payoff.kind == "call":
        return np.maximum(xs - payoff.strike, 0.0)
    if payoff.kind == "put":
        return np.maximum(payoff.strike - xs, 0.0)
    if payoff.kind == "call_spread":
        width = payoff.strike_high - payoff.strike_low
        return np.clip(xs - payoff.strike_low, 0.0, width)
    if payoff.kind == "digital":
        # lower-semicontinuous at the strike
        return (xs > payoff.strike).astype(float)
    table = interp1d(payoff.xs, payoff.ys, kind="linear", fill_value="extrapolate", assume_sorted=True)
    return np.asarray(table(xs), dtype=float)


@dataclass(frozen=True)
class FaceliftResult:
    x: NDArray[np.float64]
    g_values: NDArray[np.float64]
    g_hat_values: NDArray[np.float64]
    contact_set: NDArray[np.bool_]
    gamma_bound_used: NDArray[np.float64]

    @property
    def max_lift(self) -> float:
        return float(np.max(self.g_hat_values - self.g_values))

    @property
    def contact_fraction(self) -> float:
        return float(np.mean(self.contact_set))

    def rows(self) -> list[dict[str, float | bool]]:
        return [
            {"x": float(x), "g": float(g), "g_hat": float(h), "gamma_bound": float(b), "contact": bool(c)}
            for x, g, h, b, c in zip(
                self.x, self.g_values, self.g_hat_values, self.gamma_bound_used, self.contact_set
            )
        ]


def build_gamma_antiderivative(grid: SpaceTimeGrid, gamma_bound: ArrayLike) -> NDArray[np.float64]:
    """Twice-integrated gamma bound with value and slope zero at x_min."""
    gamma = np.asarray(gamma_bound, dtype=float)
    if gamma.shape != (grid.n_space,):
        raise LengthMismatch(f"gamma_bound has shape {gamma.shape}, expected ({grid.n_space},)")
    if not np.all(np.isfinite(gamma)):
        raise NonFiniteGamma("gamma bound is infinite on part of the grid")
    return _antiderivative(grid.x, gamma)


def _antiderivative(x: NDArray[np.float64], gamma: NDArray[np.float64]) -> NDArray[np.float64]:
    slope = cumulative_trapezoid(gamma, x, initial=0.0)
    return cumulative_trapezoid(slope, x, initial=0.0)


def _finite_runs(gamma: NDArray[np.float64]) -> list[tuple[int, int]]:
    """Half-open index ranges of the maximal runs where the bound is finite."""
    finite = np.concatenate([[0], np.isfinite(gamma).astype(np.int8), [0]])
    edges = np.flatnonzero(np.diff(finite))
    return [(int(start), int(stop)) for start, stop in zip(edges[::2], edges[1::2])]


def _contact(g: NDArray[np.float64], g_hat: NDArray[np.float64]) -> NDArray[np.bool_]:
    return g_hat <= g + CONTACT_TOL * (1.0 + np.abs(g))


def lift_values(
    grid: SpaceTimeGrid,
    g: ArrayLike,
    gamma_bound: ArrayLike,
    *,
    gauge: tuple[float, float] = (0.0, 0.0),
) -> FaceliftResult:
    """Face-lift tabulated values ``g`` under a tabulated bound.

    Nodes where the bound is infinite carry no curvature constraint and keep
    g; each run of finite bound is lifted on its own. ``gauge`` adds a + b (x - x_min) to the antiderivative; the result does
    not depend on it.
    """
    x = grid.x
    g_arr = np.asarray(g, dtype=float)
    gamma = np.asarray(gamma_bound, dtype=float)
    if g_arr.shape != x.shape:
        raise LengthMismatch(f"payoff values have shape {g_arr.shape}, expected {x.shape}")
    if gamma.shape != x.shape:
        raise LengthMismatch(f"gamma_bound has shape {gamma.shape}, expected {x.shape}")
    lifted = g_arr.copy()
    for start, stop in _finite_runs(gamma):
        # unconstrained neighbours stay on g and pin the ends of the run
        lo, hi = max(start - 1, 0), min(stop + 1, x.size)
        window = gamma[lo:hi].copy()
        window[: start - lo] = gamma[start]
        window[window.size - (hi - stop):] = gamma[stop - 1]
        xs = x[lo:hi]
        big_gamma = _antiderivative(xs, window) + gauge[0] + gauge[1] * (xs - grid.x_min)
        run = upper_concave_envelope(xs, g_arr[lo:hi] - big_gamma) + big_gamma
        lifted[lo:hi] = np.maximum(lifted[lo:hi], run)
    return FaceliftResult(x, g_arr, lifted, _contact(g_arr, lifted), gamma)


def face_lift(
    payoff: PayoffSpec,
    model: ImpactModel,
    grid: SpaceTimeGrid,
    *,
    gauge: tuple[float, float] = (0.0, 0.0),
) -> FaceliftResult:
    """Smallest majorant of the payoff obeying the terminal gamma bound."""
    gamma = np.asarray(model.bar_gamma(grid.t_end, grid.x), dtype=float)
    return lift_values(grid, payoff_values(payoff, grid.x), gamma, gauge=gauge)


def face_lift_eps(payoff: PayoffSpec, model: ImpactModel, grid: SpaceTimeGrid, eps: float) -> FaceliftResult:
    """Face-lift under the tighter bound sup{z : F(T, x, z) <= 1/eps}."""
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    gamma = np.asarray(model.gamma_eps(grid.t_end, grid.x, eps), dtype=float)
    return lift_values(grid, payoff_values(payoff, grid.x), gamma)
