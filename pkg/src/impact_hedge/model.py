"""Impact model coefficients and their convex-duality machinery.

Every solver reads coefficients through :class:`ImpactModel`. Values outside
the domain {z < bar_gamma} are the +inf sentinel unless ``strict=True``, in
which case :class:`DomainViolation` is raised instead.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import brentq, minimize_scalar

from impact_hedge.diagnostics import DiagnosticReport, IssueCollector
from impact_hedge.numerics import SpaceTimeGrid
from impact_hedge.schema import CurveTable, DomainViolation, ModelConfig, SurfaceTable

INFINITY = math.inf
IMPACT_FLOOR = 1e-12

Coefficient = Callable[..., ArrayLike]


def _out(values: NDArray[np.float64]) -> Any:
    array = np.asarray(values, dtype=float)
    return float(array) if array.ndim == 0 else array


def _first_violation(outside: NDArray[np.bool_], t: ArrayLike, x: ArrayLike, z: ArrayLike) -> str:
    idx = np.unravel_index(int(np.argmax(outside)), outside.shape) if outside.ndim else ()
    pick = lambda a: float(np.broadcast_to(np.asarray(a, dtype=float), outside.shape)[idx])
    return f"t={pick(t):.6g}, x={pick(x):.6g}, z={pick(z):.6g}"


# ---------------------------------------------------------------------------
# Coefficient surfaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VolSurface:
    """Base volatility sigma_o(t, x): constant or tabulated, absolute or proportional."""

    sigma0: float = 0.2
    scaling: Literal["absolute", "proportional"] = "proportional"
    table: SurfaceTable | None = None
    _interpolator: RegularGridInterpolator | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.table is not None and len(self.table.t) > 1:
            interpolator = RegularGridInterpolator(
                (np.asarray(self.table.t), np.asarray(self.table.x)),
                np.asarray(self.table.values, dtype=float),
            )
            object.__setattr__(self, "_interpolator", interpolator)

    def level(self, t: ArrayLike, x: ArrayLike) -> NDArray[np.float64]:
        t_arr, x_arr = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        if self.table is None:
            return np.full(t_arr.shape, self.sigma0)
        xs = np.asarray(self.table.x)
        x_clipped = np.clip(x_arr, xs[0], xs[-1])
        if self._interpolator is None:
            return np.interp(x_clipped, xs, np.asarray(self.table.values[0], dtype=float))
        ts = np.asarray(self.table.t)
        points = np.stack([np.clip(t_arr, ts[0], ts[-1]), x_clipped], axis=-1)
        return self._interpolator(points)

    def __call__(self, t: ArrayLike, x: ArrayLike) -> NDArray[np.float64]:
        level = self.level(t, x)
        if self.scaling == "proportional":
            return level * np.maximum(np.asarray(x, dtype=float), 0.0)
        return level

    @property
    def is_constant(self) -> bool:
        return self.table is None and self.scaling == "absolute"


@dataclass(frozen=True)
class ImpactCurve:
    """Impact level f(x) >= 0: constant or tabulated in price."""

    f: float = 0.1
    table: CurveTable | None = None

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        x_arr = np.asarray(x, dtype=float)
        if self.table is None:
            return np.full(x_arr.shape, self.f)
        return np.interp(x_arr, np.asarray(self.table.x), np.asarray(self.table.values, dtype=float))

    @property
    def is_constant(self) -> bool:
        return self.table is None


# ---------------------------------------------------------------------------
# Abstract model
# ---------------------------------------------------------------------------

class ImpactModel(ABC):
    """Coefficient bundle: sigma, F, bar F, bar gamma and the Fenchel transform."""

    epsilon_scale: float

    @abstractmethod
    def base_vol(self, t: ArrayLike, x: ArrayLike) -> Any: ...

    @abstractmethod
    def bar_gamma(self, t: ArrayLike, x: ArrayLike) -> Any: ...

    @abstractmethod
    def sigma(self, t: ArrayLike, x: ArrayLike, z: ArrayLike, *, strict: bool = True) -> Any: ...

    @abstractmethod
    def big_f(self, t: ArrayLike, x: ArrayLike, z: ArrayLike, *, strict: bool = True) -> Any: ...

    @abstractmethod
    def drift(self, t: ArrayLike, x: ArrayLike, z: ArrayLike, b: ArrayLike) -> Any: ...

    @abstractmethod
    def scaled(self, eps: float) -> ImpactModel:
        """Member of the small-impact family: bar F -> bar F(., eps z) / eps."""

    @abstractmethod
    def describe(self) -> dict[str, Any]: ...

    @property
    def has_closed_form(self) -> bool:
        return False

    @property
    def time_homogeneous(self) -> bool:
        return False

    def is_constant_coefficient(self) -> bool:
        return False

    def bar_f_lower_bound(self, t: ArrayLike, x: ArrayLike) -> NDArray[np.float64] | None:
        return None

    # -- domain -------------------------------------------------------------

    def inside(self, t: ArrayLike, x: ArrayLike, z: ArrayLike) -> NDArray[np.bool_]:
        return np.asarray(z, dtype=float) < np.asarray(self.bar_gamma(t, x), dtype=float)

    def _guard(self, t: ArrayLike, x: ArrayLike, z: ArrayLike, strict: bool) -> NDArray[np.bool_]:
        inside = np.broadcast_to(self.inside(t, x, z), np.broadcast_shapes(
            np.shape(t), np.shape(x), np.shape(z)))
        if strict and not np.all(inside):
            raise DomainViolation(
                f"gamma outside the model domain at {_first_violation(~inside, t, x, z)}"
            )
        return inside

    # -- generator and derivatives ------------------------------------------

    def bar_f(self, t: ArrayLike, x: ArrayLike, z: ArrayLike, *, strict: bool = True) -> Any:
        """bar F = 1/2 sigma^2 z - F on the domain, +inf outside."""
        inside = self._guard(t, x, z, strict)
        with np.errstate(invalid="ignore", over="ignore"):
            sig = np.asarray(self.sigma(t, x, z, strict=False), dtype=float)
            value = 0.5 * sig**2 * np.asarray(z, dtype=float) - np.asarray(
                self.big_f(t, x, z, strict=False), dtype=float)
        return _out(np.where(inside, value, INFINITY))

    def dz_bar_f(self, t: ArrayLike, x: ArrayLike, z: ArrayLike, *, strict: bool = True) -> Any:
        inside = self._guard(t, x, z, strict)
        z_arr = np.asarray(z, dtype=float)
        h = 1e-5 * np.maximum(1.0, np.abs(z_arr))
        with np.errstate(invalid="ignore"):
            up = np.asarray(self.bar_f(t, x, z_arr + h, strict=False), dtype=float)
            down = np.asarray(self.bar_f(t, x, z_arr - h, strict=False), dtype=float)
            here = np.asarray(self.bar_f(t, x, z_arr, strict=False), dtype=float)
            central = (up - down) / (2.0 * h)
            backward = (here - down) / h
        value = np.where(np.isfinite(up), central, backward)
        return _out(np.where(inside, value, INFINITY))

    def d2z_bar_f0(self, t: ArrayLike, x: ArrayLike) -> Any:
        """Second z-derivative of bar F at z = 0."""
        h = 1e-4
        up = np.asarray(self.bar_f(t, x, h, strict=False), dtype=float)
        mid = np.asarray(self.bar_f(t, x, 0.0, strict=False), dtype=float)
        down = np.asarray(self.bar_f(t, x, -h, strict=False), dtype=float)
        return _out((up - 2.0 * mid + down) / h**2)

    def optimal_vol(self, t: ArrayLike, x: ArrayLike, z: ArrayLike, *, strict: bool = True) -> Any:
        """Maximizer of the Fenchel representation: sqrt(2 d_z bar F)."""
        slope = np.asarray(self.dz_bar_f(t, x, z, strict=strict), dtype=float)
        return _out(np.sqrt(2.0 * np.maximum(slope, 0.0)))

    # -- Fenchel transform ---------------------------------------------------

    def fenchel_star(self, t: float, x: float, s: ArrayLike) -> Any:
        """bar F*(t, x, s^2) = sup_z (1/2 s^2 z - bar F(t, x, z))."""
        return self.numeric_fenchel_star(t, x, s)

    def numeric_fenchel_star(
        self,
        t: float,
        x: float,
        s: ArrayLike,
        *,
        grid_size: int = 4096,
        z_span: float = 1e3,
        delta_cap_ratio: float = 1e-3,
        refine: bool = True,
    ) -> Any:
        """Supremum over a z-grid on (-z_span, bar_gamma - delta_cap), golden-refined."""
        z_grid = self.fenchel_z_grid(t, x, grid_size=grid_size, z_span=z_span,
                                     delta_cap_ratio=delta_cap_ratio)
        generator = np.asarray(self.bar_f(t, x, z_grid, strict=False), dtype=float)
        s_arr = np.abs(np.atleast_1d(np.asarray(s, dtype=float)))
        objective = 0.5 * np.outer(s_arr**2, z_grid) - generator[None, :]
        best = np.argmax(objective, axis=1)
        values = objective[np.arange(s_arr.size), best]
        if refine:
            for k, (s_k, j) in enumerate(zip(s_arr, best)):
                # the grid argmax brackets the maximizer unless it sits on an end
                if j == 0 or j == z_grid.size - 1:
                    continue
                row = objective[k]
                if not (row[j] > row[j - 1] and row[j] > row[j + 1]):
                    continue
                result = minimize_scalar(
                    lambda z: -(0.5 * s_k**2 * z - float(self.bar_f(t, x, z, strict=False))),
                    bracket=(z_grid[j - 1], z_grid[j], z_grid[j + 1]),
                    method="golden",
                    options={"xtol": 1e-10},
                )
                if result.success and np.isfinite(result.fun):
                    values[k] = max(values[k], -float(result.fun))
        if np.ndim(s) == 0:
            return float(values[0])
        return values.reshape(np.shape(s))

    def fenchel_z_grid(
        self, t: float, x: float, *, grid_size: int = 4096, z_span: float = 1e3,
        delta_cap_ratio: float = 1e-3,
    ) -> NDArray[np.float64]:
        gamma = float(self.bar_gamma(t, x))
        upper = gamma - delta_cap_ratio * abs(gamma) if math.isfinite(gamma) else z_span
        return np.linspace(-z_span, upper, grid_size)

    def fenchel_reconstruct(self, t: float, x: float, z: float, s_grid: ArrayLike) -> float:
        """Recover bar F(t, x, z) as a maximum over a volatility grid."""
        s_arr = np.asarray(s_grid, dtype=float)
        if s_arr.size == 0:
            raise ValueError("s_grid must be non-empty")
        penalty = np.asarray(self.fenchel_star(t, x, s_arr), dtype=float)
        with np.errstate(invalid="ignore"):
            values = 0.5 * s_arr**2 * z - penalty
        values = np.where(np.isnan(values), -INFINITY, values)
        return float(np.max(values))

    # -- level sets ------------------------------------------------------------

    def gamma_eps(self, t: ArrayLike, x: ArrayLike, eps: float, *, z_span: float = 1e3) -> Any:
        """sup{z : F(t, x, z) <= 1/eps}, by root bracketing per node."""
        if eps <= 0.0:
            raise ValueError(f"eps must be positive, got {eps}")
        level = 1.0 / eps
        t_arr, x_arr = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        out = np.empty(t_arr.shape)
        for idx in np.ndindex(t_arr.shape):
            out[idx] = self._level_root(float(t_arr[idx]), float(x_arr[idx]), level, z_span)
        return _out(out)

    def _level_root(self, t: float, x: float, level: float, z_span: float) -> float:
        gamma = float(self.bar_gamma(t, x))
        excess = lambda z: float(self.big_f(t, x, z, strict=False)) - level
        hi = gamma * (1.0 - 1e-12) if math.isfinite(gamma) else 1.0
        if not math.isfinite(gamma):
            while excess(hi) <= 0.0:
                hi *= 2.0
                if hi > z_span:
                    return INFINITY
        elif excess(hi) <= 0.0:
            return hi
        return brentq(excess, 0.0, hi, xtol=1e-14, rtol=4.0 * np.finfo(float).eps)


# ---------------------------------------------------------------------------
# BoLoZo linear-impact model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoLoZoModel(ImpactModel):
    """Linear impact: sigma = sigma_o / (1 - f z), bar gamma = 1 / f."""

    vol: VolSurface = field(default_factory=VolSurface)
    impact_curve: ImpactCurve = field(default_factory=ImpactCurve)
    drift_rate: float = 0.0
    epsilon_scale: float = 1.0

    @property
    def has_closed_form(self) -> bool:
        return True

    @property
    def time_homogeneous(self) -> bool:
        return self.vol.table is None or len(self.vol.table.t) == 1

    def base_vol(self, t: ArrayLike, x: ArrayLike) -> Any:
        return _out(self.vol(t, x))

    def impact(self, x: ArrayLike) -> Any:
        return _out(self.epsilon_scale * self.impact_curve(x))

    def drift(self, t: ArrayLike, x: ArrayLike, z: ArrayLike, b: ArrayLike) -> Any:
        shape = np.broadcast_shapes(np.shape(t), np.shape(x), np.shape(z), np.shape(b))
        return _out(np.full(shape, self.drift_rate))

    def bar_gamma(self, t: ArrayLike, x: ArrayLike) -> Any:
        f = np.broadcast_to(np.asarray(self.impact(x), dtype=float),
                            np.broadcast_shapes(np.shape(t), np.shape(x)))
        with np.errstate(divide="ignore"):
            gamma = np.where(f > IMPACT_FLOOR, 1.0 / np.where(f > IMPACT_FLOOR, f, 1.0), INFINITY)
        return _out(gamma)

    def _parts(self, t: ArrayLike, x: ArrayLike, z: ArrayLike) -> tuple[NDArray[np.float64], ...]:
        sig0 = np.asarray(self.vol(t, x), dtype=float)
        f = np.asarray(self.impact(x), dtype=float)
        z_arr = np.asarray(z, dtype=float)
        one_minus = 1.0 - f * z_arr
        return np.broadcast_arrays(sig0, f, z_arr, one_minus)

    def inside(self, t: ArrayLike, x: ArrayLike, z: ArrayLike) -> NDArray[np.bool_]:
        _, f, z_arr, one_minus = self._parts(t, x, z)
        return one_minus > 0.0

    def _impacted_vol(self, t: ArrayLike, x: ArrayLike, z: ArrayLike, strict: bool) -> NDArray[np.float64]:
        inside = self._guard(t, x, z, strict)
        sig0, _, _, one_minus = self._parts(t, x, z)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(inside, sig0 / np.where(inside, one_minus, 1.0), INFINITY)

    def sigma(self, t: ArrayLike, x: ArrayLike, z: ArrayLike, *, strict: bool = True) -> Any:
        return _out(self._impacted_vol(t, x, z, strict))

    def optimal_vol(self, t: ArrayLike, x: ArrayLike, z: ArrayLike, *, strict: bool = True) -> Any:
        return _out(self._impacted_vol(t, x, z, strict))

    def big_f(self, t: ArrayLike, x: ArrayLike, z: ArrayLike, *, strict: bool = True) -> Any:
        inside = self._guard(t, x, z, strict)
        sig0, f, z_arr, one_minus = self._parts(t, x, z)
        with np.errstate(divide="ignore", invalid="ignore"):
            value = 0.5 * (sig0 * z_arr / np.where(inside, one_minus, 1.0)) ** 2 * f
        return _out(np.where(inside, value, INFINITY))

    def bar_f(self, t: ArrayLike, x: ArrayLike, z: ArrayLike, *, strict: bool = True) -> Any:
        inside = self._guard(t, x, z, strict)
        sig0, _, z_arr, one_minus = self._parts(t, x, z)
        with np.errstate(divide="ignore", invalid="ignore"):
            value = 0.5 * sig0**2 * z_arr / np.where(inside, one_minus, 1.0)
        return _out(np.where(inside, value, INFINITY))

    def dz_bar_f(self, t: ArrayLike, x: ArrayLike, z: ArrayLike, *, strict: bool = True) -> Any:
        inside = self._guard(t, x, z, strict)
        sig0, _, _, one_minus = self._parts(t, x, z)
        with np.errstate(divide="ignore", invalid="ignore"):
            value = 0.5 * sig0**2 / np.where(inside, one_minus, 1.0) ** 2
        return _out(np.where(inside, value, INFINITY))

    def d2z_bar_f0(self, t: ArrayLike, x: ArrayLike) -> Any:
        sig0 = np.asarray(self.vol(t, x), dtype=float)
        return _out(sig0**2 * np.asarray(self.impact(x), dtype=float))

    def fenchel_star(self, t: float, x: float, s: ArrayLike) -> Any:
        """1/2 (s - sigma_o)^2 / f, or the hard constraint s = sigma_o when f vanishes."""
        s_arr = np.abs(np.asarray(s, dtype=float))
        sig0 = np.asarray(self.vol(t, x), dtype=float)
        f = np.asarray(self.impact(x), dtype=float)
        soft = f > IMPACT_FLOOR
        with np.errstate(divide="ignore", invalid="ignore"):
            penalty = 0.5 * (s_arr - sig0) ** 2 / np.where(soft, f, 1.0)
        pinned = np.abs(s_arr - sig0) <= 1e-12 * np.maximum(1.0, sig0)
        hard = np.where(pinned, 0.0, INFINITY)
        return _out(np.where(soft, penalty, hard))

    def gamma_eps(self, t: ArrayLike, x: ArrayLike, eps: float, *, z_span: float = 1e3) -> Any:
        """Closed-form root of 1/2 (sigma_o z / (1 - f z))^2 f = 1/eps."""
        if eps <= 0.0:
            raise ValueError(f"eps must be positive, got {eps}")
        sig0 = np.asarray(self.vol(t, x), dtype=float)
        f = np.broadcast_to(np.asarray(self.impact(x), dtype=float), sig0.shape)
        soft = f > IMPACT_FLOOR
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.sqrt(2.0 / (eps * np.where(soft, f, 1.0)))
            root = c / (sig0 + c * f)
        return _out(np.where(soft, root, INFINITY))

    def bar_f_lower_bound(self, t: ArrayLike, x: ArrayLike) -> NDArray[np.float64] | None:
        sig0 = np.asarray(self.vol(t, x), dtype=float)
        f = np.broadcast_to(np.asarray(self.impact(x), dtype=float), sig0.shape)
        with np.errstate(divide="ignore"):
            return np.where(f > IMPACT_FLOOR, -0.5 * sig0**2 / np.where(f > IMPACT_FLOOR, f, 1.0), -INFINITY)

    def is_constant_coefficient(self) -> bool:
        return self.vol.is_constant and self.impact_curve.is_constant

    def lambda_coefficients(self) -> tuple[float, float]:
        """(d_z bar F_0, d2_z bar F_0) for constant coefficients."""
        sig0 = self.vol.sigma0
        return 0.5 * sig0**2, sig0**2 * self.epsilon_scale * self.impact_curve.f

    def scaled(self, eps: float) -> BoLoZoModel:
        if eps < 0.0:
            raise ValueError(f"eps must be non-negative, got {eps}")
        return replace(self, epsilon_scale=self.epsilon_scale * eps)

    def describe(self) -> dict[str, Any]:
        return {
            "model": "bolozo",
            "sigma0": self.vol.sigma0,
            "sigma0_table": self.vol.table.model_dump() if self.vol.table else None,
            "vol_scaling": self.vol.scaling,
            "f": self.impact_curve.f,
            "f_table": self.impact_curve.table.model_dump() if self.impact_curve.table else None,
            "epsilon": self.epsilon_scale,
            "drift": self.drift_rate,
        }


# ---------------------------------------------------------------------------
# Generic model from callables
# ---------------------------------------------------------------------------

def _infinite_gamma(t: ArrayLike, x: ArrayLike) -> ArrayLike:
    return np.full(np.broadcast_shapes(np.shape(t), np.shape(x)), INFINITY)


@dataclass(frozen=True)
class CallableImpactModel(ImpactModel):
    """Abstract impact model given sigma(t,x,z), F(t,x,z) and bar_gamma(t,x).

    ``bar_f_fn`` overrides the derived generator 1/2 sigma^2 z - F when given.
    """

    sigma_fn: Coefficient
    big_f_fn: Coefficient
    bar_gamma_fn: Coefficient = _infinite_gamma
    bar_f_fn: Coefficient | None = None
    drift_fn: Coefficient | None = None
    epsilon_scale: float = 1.0
    label: str = "callable"
    homogeneous_in_time: bool = False

    @property
    def time_homogeneous(self) -> bool:
        return self.homogeneous_in_time

    def base_vol(self, t: ArrayLike, x: ArrayLike) -> Any:
        shape = np.broadcast_shapes(np.shape(t), np.shape(x))
        value = np.asarray(self.sigma_fn(t, x, np.zeros(np.shape(x))), dtype=float)
        return _out(np.broadcast_to(value, shape))

    def bar_gamma(self, t: ArrayLike, x: ArrayLike) -> Any:
        gamma = np.asarray(self.bar_gamma_fn(t, x), dtype=float)
        gamma = np.broadcast_to(gamma, np.broadcast_shapes(np.shape(t), np.shape(x)))
        return _out(gamma / self.epsilon_scale if self.epsilon_scale > 0 else np.full(gamma.shape, INFINITY))

    def drift(self, t: ArrayLike, x: ArrayLike, z: ArrayLike, b: ArrayLike) -> Any:
        shape = np.broadcast_shapes(np.shape(t), np.shape(x), np.shape(z), np.shape(b))
        if self.drift_fn is None:
            return _out(np.zeros(shape))
        return _out(np.broadcast_to(np.asarray(self.drift_fn(t, x, z, b), dtype=float), shape))

    def _scaled_z(self, z: ArrayLike) -> NDArray[np.float64]:
        return self.epsilon_scale * np.asarray(z, dtype=float)

    def sigma(self, t: ArrayLike, x: ArrayLike, z: ArrayLike, *, strict: bool = True) -> Any:
        inside = self._guard(t, x, z, strict)
        with np.errstate(all="ignore"):
            value = np.asarray(self.sigma_fn(t, x, self._scaled_z(z)), dtype=float)
        return _out(np.where(inside, value, INFINITY))

    def big_f(self, t: ArrayLike, x: ArrayLike, z: ArrayLike, *, strict: bool = True) -> Any:
        inside = self._guard(t, x, z, strict)
        if self.epsilon_scale == 0.0:
            return _out(np.where(inside, 0.0, INFINITY))
        with np.errstate(all="ignore"):
            value = np.asarray(self.big_f_fn(t, x, self._scaled_z(z)), dtype=float) / self.epsilon_scale
        return _out(np.where(inside, value, INFINITY))

    def bar_f(self, t: ArrayLike, x: ArrayLike, z: ArrayLike, *, strict: bool = True) -> Any:
        if self.bar_f_fn is None:
            if self.epsilon_scale == 0.0:
                inside = self._guard(t, x, z, strict)
                sig0 = np.asarray(self.base_vol(t, x), dtype=float)
                return _out(np.where(inside, 0.5 * sig0**2 * np.asarray(z, dtype=float), INFINITY))
            return super().bar_f(t, x, z, strict=strict)
        inside = self._guard(t, x, z, strict)
        with np.errstate(all="ignore"):
            if self.epsilon_scale == 0.0:
                h = 1e-6
                slope = (np.asarray(self.bar_f_fn(t, x, h), dtype=float)
                         - np.asarray(self.bar_f_fn(t, x, -h), dtype=float)) / (2.0 * h)
                value = slope * np.asarray(z, dtype=float)
            else:
                value = np.asarray(self.bar_f_fn(t, x, self._scaled_z(z)), dtype=float) / self.epsilon_scale
        return _out(np.where(inside, value, INFINITY))

    def scaled(self, eps: float) -> CallableImpactModel:
        if eps < 0.0:
            raise ValueError(f"eps must be non-negative, got {eps}")
        return replace(self, epsilon_scale=self.epsilon_scale * eps)

    def describe(self) -> dict[str, Any]:
        return {"model": self.label, "epsilon": self.epsilon_scale}


# ---------------------------------------------------------------------------
# Construction and assumption checks
# ---------------------------------------------------------------------------

def build_model(config: ModelConfig) -> BoLoZoModel:
    """Instantiate the coefficient bundle described by a model config."""
    return BoLoZoModel(
        vol=VolSurface(sigma0=config.sigma0, scaling=config.vol_scaling, table=config.sigma0_table),
        impact_curve=ImpactCurve(f=config.f, table=config.f_table),
        drift_rate=config.drift,
        epsilon_scale=config.epsilon,
    )


def _time_slices(grid: SpaceTimeGrid, max_slices: int) -> NDArray[np.float64]:
    idx = np.unique(np.linspace(0, grid.n_time, min(max_slices, grid.n_time + 1)).round().astype(int))
    return grid.t[idx]


def check_assumptions(
    model: ImpactModel,
    grid: SpaceTimeGrid,
    z_samples: ArrayLike | None = None,
    *,
    tol: float = 1e-9,
    delta_cap_ratio: float = 1e-3,
    max_time_slices: int = 5,
) -> DiagnosticReport:
    """Check convexity, ellipticity, positivity and bar F(., 0) = 0 on a lattice.

    Never raises; every failure becomes an issue located at (t, x, z).
    """
    z_all = np.sort(np.asarray(z_samples if z_samples is not None else np.linspace(-100.0, 100.0, 401),
                               dtype=float))
    x = grid.x
    collector = IssueCollector()
    gamma_min = INFINITY
    infinite_everywhere = True
    checked = 0

    for t in _time_slices(grid, max_time_slices):
        t_col = np.full((x.size, 1), t)
        x_col = x[:, None]
        gamma = np.asarray(model.bar_gamma(t, x), dtype=float)
        finite_gamma = np.isfinite(gamma)
        infinite_everywhere &= not bool(np.any(finite_gamma))
        if np.any(finite_gamma):
            gamma_min = min(gamma_min, float(np.min(gamma[finite_gamma])))
            for j in np.flatnonzero(finite_gamma & (gamma <= 0.0)):
                collector.add("GAMMA_BOUND_NON_POSITIVE", f"t={t:.6g}, x={x[j]:.6g}",
                              f"bar_gamma = {gamma[j]:.6g} excludes z = 0 from the domain")

        cap = np.where(finite_gamma, gamma - delta_cap_ratio * np.abs(gamma), INFINITY)
        mask = z_all[None, :] < cap[:, None]
        checked += int(np.count_nonzero(mask))

        vol = np.asarray(model.base_vol(t, x), dtype=float)
        for j in np.flatnonzero(~(vol > 0.0)):
            collector.add("NON_POSITIVE_VOL", f"t={t:.6g}, x={x[j]:.6g}",
                          f"base volatility {vol[j]:.6g} is not positive")

        at_zero = np.asarray(model.bar_f(t, x, 0.0, strict=False), dtype=float)
        for j in np.flatnonzero(~(np.abs(at_zero) <= tol)):
            collector.add("NONZERO_GENERATOR_AT_ZERO", f"t={t:.6g}, x={x[j]:.6g}, z=0",
                          f"bar F(., 0) = {at_zero[j]:.6g}")

        generator = np.asarray(model.bar_f(t_col, x_col, z_all[None, :], strict=False), dtype=float)
        generator = np.where(mask, generator, np.nan)
        slope = np.asarray(model.dz_bar_f(t_col, x_col, z_all[None, :], strict=False), dtype=float)
        for j, k in zip(*np.nonzero(mask & ~(slope > 0.0))):
            collector.add("NOT_ELLIPTIC", f"t={t:.6g}, x={x[j]:.6g}, z={z_all[k]:.6g}",
                          f"d_z bar F = {slope[j, k]:.6g} is not positive")

        if z_all.size >= 3:
            dz = np.diff(z_all)
            slopes = np.diff(generator, axis=1) / dz[None, :]
            curvature = 2.0 * np.diff(slopes, axis=1) / (z_all[2:] - z_all[:-2])[None, :]
            scale = 1.0 + np.abs(generator[:, 1:-1])
            bad = np.isfinite(curvature) & (curvature < -tol * scale)
            for j, k in zip(*np.nonzero(bad)):
                collector.add("NOT_CONVEX", f"t={t:.6g}, x={x[j]:.6g}, z={z_all[k + 1]:.6g}",
                              f"second difference {curvature[j, k]:.6g} is negative")

        lower = model.bar_f_lower_bound(t, x)
        finite_values = np.where(np.isfinite(generator), generator, np.inf)
        row_min = np.min(finite_values, axis=1)
        if lower is not None:
            bad_rows = row_min < np.asarray(lower) - tol
        else:
            bad_rows = ~np.isfinite(row_min) & np.any(np.isfinite(generator), axis=1)
        for j in np.flatnonzero(bad_rows):
            collector.add("NOT_BOUNDED_BELOW", f"t={t:.6g}, x={x[j]:.6g}",
                          f"min bar F = {row_min[j]:.6g} violates the lower bound")

    convex = not collector.has("NOT_CONVEX")
    elliptic = not collector.has("NOT_ELLIPTIC")
    positive_vol = not collector.has("NON_POSITIVE_VOL")
    zero_at_zero = not collector.has("NONZERO_GENERATOR_AT_ZERO")
    bounded_below = not collector.has("NOT_BOUNDED_BELOW")
    return DiagnosticReport(
        is_valid=convex and elliptic and positive_vol and zero_at_zero and bounded_below
        and not collector.has("GAMMA_BOUND_NON_POSITIVE"),
        convex=convex,
        elliptic=elliptic,
        positive_vol=positive_vol,
        zero_generator_at_zero=zero_at_zero,
        bounded_below=bounded_below,
        gamma_bound_infinite=infinite_everywhere,
        gamma_bound_min=gamma_min,
        checked_points=checked,
        issues=collector.issues,
        truncated_issues=collector.truncated,
    )
