"""Canonical JSON, config hashing and CSV output."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, TextIO

import numpy as np
from pydantic import BaseModel

from impact_hedge.numerics import SpaceTimeGrid

FLOAT_DECIMALS = 12


def normalize(value: Any) -> Any:
    """JSON-ready copy: floats rounded to 12 decimals, infinities as strings."""
    if isinstance(value, BaseModel):
        return normalize(value.model_dump(mode="python"))
    if isinstance(value, Mapping):
        return {str(key): normalize(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [normalize(item) for item in value]
    if isinstance(value, np.ndarray):
        return [normalize(item) for item in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        number = float(value)
        if math.isnan(number):
            return "nan"
        if math.isinf(number):
            return "+inf" if number > 0 else "-inf"
        rounded = round(number, FLOAT_DECIMALS)
        return 0.0 if rounded == 0.0 else rounded
    return value


def canonical_json(value: Any) -> str:
    """Byte-stable serialization: sorted keys, compact separators."""
    return json.dumps(normalize(value), sort_keys=True, separators=(",", ":"))


def config_hash(config: BaseModel | Mapping[str, Any]) -> str:
    """SHA-256 of the canonical JSON of a config."""
    payload = config.model_dump(mode="json") if isinstance(config, BaseModel) else config
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def write_json(path: Path, value: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(value) + "\n", encoding="utf-8")


def emit_rows(handle: TextIO, rows: Iterable[Mapping[str, Any]], columns: list[str]) -> None:
    """CSV with a fixed column order; floats use the canonical rounding."""
    writer = csv.DictWriter(handle, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({key: normalize(row.get(key)) for key in columns})


def write_rows(path: Path, rows: Iterable[Mapping[str, Any]], columns: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        emit_rows(handle, rows, columns)


def surface_rows(grid: SpaceTimeGrid, **surfaces: np.ndarray) -> list[dict[str, float]]:
    """Long-format (t, x, name...) rows of time-space surfaces."""
    rows: list[dict[str, float]] = []
    for n, t in enumerate(grid.t):
        for j, x in enumerate(grid.x):
            row = {"t": float(t), "x": float(x)}
            row.update({name: float(surface[n, j]) for name, surface in surfaces.items()})
            rows.append(row)
    return rows
