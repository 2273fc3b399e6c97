"""Shared models and grids for the test suite."""

from pathlib import Path

import pytest
from pydantic import BaseModel

from impact_hedge.model import BoLoZoModel, ImpactCurve, VolSurface
from impact_hedge.numerics import SpaceTimeGrid
from impact_hedge.schema import PayoffConfig

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def narrow_model() -> BoLoZoModel:
    """Absolute vol 0.2, impact 0.1: bar_gamma = 10."""
    return BoLoZoModel(vol=VolSurface(sigma0=0.2, scaling="absolute"), impact_curve=ImpactCurve(f=0.1))


@pytest.fixture
def narrow_grid() -> SpaceTimeGrid:
    return SpaceTimeGrid(x_min=98.0, x_max=102.0, n_space=401, t_start=0.0, t_end=0.25, n_time=10)


@pytest.fixture
def wide_model() -> BoLoZoModel:
    """Absolute vol 5, impact 1: bar_gamma = 1."""
    return BoLoZoModel(vol=VolSurface(sigma0=5.0, scaling="absolute"), impact_curve=ImpactCurve(f=1.0))


@pytest.fixture
def free_model() -> BoLoZoModel:
    return BoLoZoModel(vol=VolSurface(sigma0=5.0, scaling="absolute"), impact_curve=ImpactCurve(f=0.0))


@pytest.fixture
def wide_grid() -> SpaceTimeGrid:
    return SpaceTimeGrid(x_min=60.0, x_max=140.0, n_space=161, t_start=0.0, t_end=1.0, n_time=50)


@pytest.fixture
def call() -> PayoffConfig:
    return PayoffConfig(kind="call", strike=100.0)


class RecordingEmitter:
    """Keeps every emitted payload in arrival order."""

    def __init__(self) -> None:
        self.events: list[BaseModel] = []

    def emit_policy_step_solved(self, payload: BaseModel) -> None:
        self.events.append(payload)

    def emit_solve_completed(self, payload: BaseModel) -> None:
        self.events.append(payload)

    def emit_mc_batch_completed(self, payload: BaseModel) -> None:
        self.events.append(payload)

    def emit_hedge_completed(self, payload: BaseModel) -> None:
        self.events.append(payload)

    def emit_study_cell_evaluated(self, payload: BaseModel) -> None:
        self.events.append(payload)

    def of_type(self, kind: type[BaseModel]) -> list[BaseModel]:
        return [event for event in self.events if isinstance(event, kind)]


@pytest.fixture
def recorder() -> RecordingEmitter:
    return RecordingEmitter()
