"""Blocked random streams and Monte Carlo result types.

Paths are split into fixed-size blocks; block ``k`` draws from a generator
seeded by ``(seed, k)``. Blocks may run on any worker, and per-path samples
are concatenated in block order before any reduction, so estimates do not
depend on the worker count.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict

from impact_hedge.events import McBatchCompleted, NullEmitter, SolverEventEmitter
from impact_hedge.workers import map_ordered


class McResult(BaseModel):
    """Monte Carlo estimate with its standard error and run provenance."""

    model_config = ConfigDict(frozen=True)

    estimate: float
    stderr: float
    n_paths: int
    n_steps: int
    seed: int
    penalty_mean: float = 0.0
    contact_fraction: float = 0.0
    lift_gap: float = 0.0
    lift_gap_stderr: float = 0.0
    unbounded_penalty: bool = False
    clamp_fraction: float = 0.0
    label: str = ""


def block_layout(n_paths: int, block_size: int) -> list[tuple[int, int]]:
    """(block index, path count) pairs covering ``n_paths``."""
    if n_paths < 1:
        raise ValueError(f"n_paths must be at least 1, got {n_paths}")
    if block_size < 1:
        raise ValueError(f"block_size must be at least 1, got {block_size}")
    n_blocks = math.ceil(n_paths / block_size)
    return [(k, min(block_size, n_paths - k * block_size)) for k in range(n_blocks)]


def block_generator(seed: int, block: int) -> np.random.Generator:
    return np.random.default_rng([seed, block])


def block_normals(seed: int, block: int, n_steps: int, count: int) -> NDArray[np.float64]:
    """Standard normal increments of shape (n_steps, count) for one block."""
    return block_generator(seed, block).standard_normal((n_steps, count))


def run_blocks(
    simulate: Callable[[int, int], dict[str, NDArray[np.float64]]],
    n_paths: int,
    block_size: int,
    *,
    kind: str,
    emitter: SolverEventEmitter | None = None,
) -> dict[str, NDArray[np.float64]]:
    """Run ``simulate(block, count)`` over all blocks; concatenate per key in block order."""
    sink = emitter or NullEmitter()
    layout = block_layout(n_paths, block_size)

    def _one(item: tuple[int, int]) -> dict[str, NDArray[np.float64]]:
        block, count = item
        out = simulate(block, count)
        sink.emit_mc_batch_completed(McBatchCompleted(kind=kind, block=block, n_paths=count))
        return out

    parts = map_ordered(_one, layout)
    return {key: np.concatenate([part[key] for part in parts]) for key in parts[0]}


def mean_and_stderr(samples: NDArray[np.float64]) -> tuple[float, float]:
    values = np.asarray(samples, dtype=float)
    mean = float(np.mean(values))
    if values.size < 2:
        return mean, 0.0
    return mean, float(np.std(values, ddof=1) / math.sqrt(values.size))
