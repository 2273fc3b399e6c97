"""Grid bookkeeping, finite-difference stencils, tridiagonal solves and hulls.

All grids are uniform. Second derivatives at the two boundary nodes copy
their nearest interior value, which is the linear-growth convention used by
every solver in the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import LinAlgError, solve_banded

from impact_hedge.schema import GridConfig, LengthMismatch, SingularSystem, UnsortedInput

FloatArray = NDArray[np.float64]

PIVOT_FLOOR = 1e-14


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform discretization of [t_start, t_end] x [x_min, x_max]."""

    x_min: float
    x_max: float
    n_space: int
    t_start: float
    t_end: float
    n_time: int

    def __post_init__(self) -> None:
        if self.n_space < 3:
            raise ValueError(f"n_space must be at least 3, got {self.n_space}")
        if self.n_time < 1:
            raise ValueError(f"n_time must be at least 1, got {self.n_time}")
        if not self.x_min < self.x_max:
            raise ValueError(f"x_min ({self.x_min}) must be below x_max ({self.x_max})")
        if not self.t_start < self.t_end:
            raise ValueError(f"t_start ({self.t_start}) must be below t_end ({self.t_end})")

    @classmethod
    def from_config(cls, config: GridConfig) -> SpaceTimeGrid:
        return cls(
            x_min=config.x_min,
            x_max=config.x_max,
            n_space=config.n_space,
            t_start=config.t_start,
            t_end=config.t_end,
            n_time=config.n_time,
        )

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_space - 1)

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_time

    @property
    def maturity(self) -> float:
        return self.t_end - self.t_start

    @property
    def x(self) -> FloatArray:
        return np.linspace(self.x_min, self.x_max, self.n_space)

    @property
    def t(self) -> FloatArray:
        return np.linspace(self.t_start, self.t_end, self.n_time + 1)

    def with_time_steps(self, n_time: int) -> SpaceTimeGrid:
        return SpaceTimeGrid(self.x_min, self.x_max, self.n_space, self.t_start, self.t_end, n_time)

    def refined(self, factor: int = 2) -> SpaceTimeGrid:
        """Grid with `factor` times finer spacing in both directions."""
        return SpaceTimeGrid(
            self.x_min,
            self.x_max,
            (self.n_space - 1) * factor + 1,
            self.t_start,
            self.t_end,
            self.n_time * factor,
        )

    def coarsened(self, factor: int) -> SpaceTimeGrid:
        return SpaceTimeGrid(
            self.x_min,
            self.x_max,
            max((self.n_space - 1) // factor, 2) + 1,
            self.t_start,
            self.t_end,
            max(self.n_time // factor, 1),
        )


@dataclass(frozen=True)
class TriDiagSystem:
    """Tridiagonal system; lower[0] and upper[-1] are ignored."""

    lower: FloatArray
    diag: FloatArray
    upper: FloatArray
    rhs: FloatArray

    def __post_init__(self) -> None:
        n = len(self.diag)
        for name in ("lower", "upper", "rhs"):
            if len(getattr(self, name)) != n:
                raise LengthMismatch(f"{name} has length {len(getattr(self, name))}, expected {n}")

    def dominance_margin(self) -> float:
        off = np.abs(self.lower).copy()
        off[0] = 0.0
        upper = np.abs(self.upper).copy()
        upper[-1] = 0.0
        return float(np.min(np.abs(self.diag) - off - upper))

    def matvec(self, values: ArrayLike) -> FloatArray:
        u = np.asarray(values, dtype=float)
        out = self.diag * u
        out[1:] += self.lower[1:] * u[:-1]
        out[:-1] += self.upper[:-1] * u[1:]
        return out


def _check_length(values: FloatArray, grid: SpaceTimeGrid) -> None:
    if values.shape[-1] != grid.n_space:
        raise LengthMismatch(f"values have {values.shape[-1]} nodes, grid has {grid.n_space}")


def second_diff(values: ArrayLike, grid: SpaceTimeGrid) -> FloatArray:
    """Central second difference along the last axis, edges copied inward."""
    v = np.asarray(values, dtype=float)
    _check_length(v, grid)
    out = np.empty_like(v)
    out[..., 1:-1] = (v[..., 2:] - 2.0 * v[..., 1:-1] + v[..., :-2]) / grid.dx**2
    out[..., 0] = out[..., 1]
    out[..., -1] = out[..., -2]
    return out


def first_diff(values: ArrayLike, grid: SpaceTimeGrid) -> FloatArray:
    """Central first difference inside, one-sided at the edges."""
    v = np.asarray(values, dtype=float)
    _check_length(v, grid)
    out = np.empty_like(v)
    out[..., 1:-1] = (v[..., 2:] - v[..., :-2]) / (2.0 * grid.dx)
    out[..., 0] = (v[..., 1] - v[..., 0]) / grid.dx
    out[..., -1] = (v[..., -1] - v[..., -2]) / grid.dx
    return out


def solve_tridiag(system: TriDiagSystem) -> FloatArray:
    """Solve a diagonally dominant tridiagonal system by banded elimination."""
    if system.dominance_margin() < PIVOT_FLOOR:
        raise SingularSystem(
            f"tridiagonal system is not strictly diagonally dominant "
            f"(margin {system.dominance_margin():.3e})"
        )
    n = len(system.diag)
    if n == 1:
        return np.asarray(system.rhs / system.diag, dtype=float)
    banded = np.zeros((3, n))
    banded[0, 1:] = system.upper[:-1]
    banded[1, :] = system.diag
    banded[2, :-1] = system.lower[1:]
    try:
        return solve_banded((1, 1), banded, system.rhs, check_finite=False)
    except LinAlgError as exc:
        raise SingularSystem(f"tridiagonal elimination failed: {exc}") from exc


def upper_concave_envelope(xs: ArrayLike, ys: ArrayLike) -> FloatArray:
    """Least concave majorant of the piecewise-linear interpolant, on xs.

    Upper hull by Andrew's monotone chain, then linear interpolation
    between hull vertices.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape:
        raise LengthMismatch(f"xs has shape {x.shape}, ys has shape {y.shape}")
    if x.size < 2:
        raise LengthMismatch("need at least two points for an envelope")
    if np.any(np.diff(x) <= 0.0):
        raise UnsortedInput("xs must be strictly increasing")

    hull: list[int] = []
    for i in range(x.size):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # pop b when it lies on or below the chord a -> i
            cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a])
            if cross >= 0.0:
                hull.pop()
            else:
                break
        hull.append(i)

    vertices = np.asarray(hull)
    envelope = np.interp(x, x[vertices], y[vertices])
    return np.maximum(envelope, y)


@dataclass
class InterpolationStats:
    """Counts queries that fell outside the grid and were clamped."""

    queries: int = 0
    clamped: int = 0

    def record(self, n_queries: int, n_clamped: int) -> None:
        self.queries += n_queries
        self.clamped += n_clamped

    @property
    def clamp_fraction(self) -> float:
        return self.clamped / self.queries if self.queries else 0.0


def interp_linear(
    grid: SpaceTimeGrid,
    values: ArrayLike,
    x: ArrayLike,
    stats: InterpolationStats | None = None,
) -> FloatArray | float:
    """Piecewise-linear interpolation on the space grid, clamped at the edges."""
    v = np.asarray(values, dtype=float)
    _check_length(v, grid)
    q = np.asarray(x, dtype=float)
    if stats is not None:
        outside = int(np.count_nonzero((q < grid.x_min) | (q > grid.x_max)))
        stats.record(int(q.size), outside)
    result = np.interp(q, grid.x, v)
    if np.ndim(result) == 0:
        return float(result)
    return result


@dataclass
class SurfaceInterpolator:
    """Time-space bilinear lookup into a (n_time + 1, n_space) surface."""

    grid: SpaceTimeGrid
    surface: FloatArray
    stats: InterpolationStats = field(default_factory=InterpolationStats)

    def __post_init__(self) -> None:
        expected = (self.grid.n_time + 1, self.grid.n_space)
        if self.surface.shape != expected:
            raise LengthMismatch(f"surface has shape {self.surface.shape}, expected {expected}")

    def slice_at(self, t: float) -> FloatArray:
        position = (t - self.grid.t_start) / self.grid.dt
        position = min(max(position, 0.0), float(self.grid.n_time))
        lower = min(int(np.floor(position)), self.grid.n_time - 1)
        weight = position - lower
        return (1.0 - weight) * self.surface[lower] + weight * self.surface[lower + 1]

    def __call__(self, t: float, x: ArrayLike) -> FloatArray:
        return np.asarray(interp_linear(self.grid, self.slice_at(t), x, self.stats), dtype=float)
