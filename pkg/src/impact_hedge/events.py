"""Run event emission interface and persistence.

Solvers, Monte Carlo engines and studies report progress through a
``SolverEventEmitter``. Emission is observational only: no emitter may change
a numerical result.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Any, Literal, Protocol

from pydantic import BaseModel, ConfigDict

from impact_hedge.reporting import canonical_json


# ---------------------------------------------------------------------------
# Event payloads
# ---------------------------------------------------------------------------

class PolicyStepSolved(BaseModel):
    """One backward time step of the policy-iteration solve."""

    model_config = ConfigDict(frozen=True)

    step: int
    iterations: int
    update_norm: float
    capped_nodes: int


class SolveCompleted(BaseModel):
    model_config = ConfigDict(frozen=True)

    solver: Literal["hjb", "hjb_explicit", "linear_v0", "delta_v"]
    price: float | None = None
    iterations: int
    residual_sup: float
    gamma_margin: float | None = None


class McBatchCompleted(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: str
    block: int
    n_paths: int


class HedgeCompleted(BaseModel):
    model_config = ConfigDict(frozen=True)

    strategy: str
    n_paths: int
    n_steps: int
    mean_error: float
    sup_error: float
    domain_escapes: int
    grid_escapes: int


class StudyCellEvaluated(BaseModel):
    model_config = ConfigDict(frozen=True)

    study: str
    cell: str
    passed: bool
    margin: float


EVENT_NAMES: dict[type[BaseModel], str] = {
    PolicyStepSolved: "PolicyStepSolved",
    SolveCompleted: "SolveCompleted",
    McBatchCompleted: "McBatchCompleted",
    HedgeCompleted: "HedgeCompleted",
    StudyCellEvaluated: "StudyCellEvaluated",
}


# ---------------------------------------------------------------------------
# SolverEventEmitter protocol
# ---------------------------------------------------------------------------

class SolverEventEmitter(Protocol):
    """Interface for solver and study event emission."""

    def emit_policy_step_solved(self, payload: PolicyStepSolved) -> None: ...

    def emit_solve_completed(self, payload: SolveCompleted) -> None: ...

    def emit_mc_batch_completed(self, payload: McBatchCompleted) -> None: ...

    def emit_hedge_completed(self, payload: HedgeCompleted) -> None: ...

    def emit_study_cell_evaluated(self, payload: StudyCellEvaluated) -> None: ...


class NullEmitter:
    """No-op emitter, the default of every operation taking ``emitter=``."""

    def emit_policy_step_solved(self, payload: PolicyStepSolved) -> None:
        pass

    def emit_solve_completed(self, payload: SolveCompleted) -> None:
        pass

    def emit_mc_batch_completed(self, payload: McBatchCompleted) -> None:
        pass

    def emit_hedge_completed(self, payload: HedgeCompleted) -> None:
        pass

    def emit_study_cell_evaluated(self, payload: StudyCellEvaluated) -> None:
        pass


# ---------------------------------------------------------------------------
# Run log
# ---------------------------------------------------------------------------

class JsonlEventLog:
    """Append-only JSONL run log.

    Every record gets a ``seq`` number. Numbering and writing happen under
    one lock, so lines never interleave and ``seq`` follows file order when
    Monte Carlo blocks report from worker threads. Floats use the canonical
    rounding of report files. Reopening a log continues its numbering.
    """

    def __init__(self, path: Path) -> None:
        self._path = path
        self._lock = threading.Lock()
        self._next_seq = len(self.records())

    @property
    def path(self) -> Path:
        return self._path

    def append(self, record: dict[str, Any]) -> int:
        """Write one record and return its sequence number."""
        with self._lock:
            seq = self._next_seq
            line = canonical_json({**record, "seq": seq})
            with open(self._path, "a", encoding="utf-8") as handle:
                handle.write(line + "\n")
            self._next_seq = seq + 1
        return seq

    def records(self, event: str | None = None) -> list[dict[str, Any]]:
        """Records in file order, optionally only those of one event name."""
        if not self._path.exists():
            return []
        with open(self._path, "r", encoding="utf-8") as handle:
            rows = [json.loads(line) for line in handle if line.strip()]
        if event is None:
            return rows
        return [row for row in rows if row.get("event") == event]


class JsonlEmitter:
    """Emitter writing ``{"event": name, "payload": {...}}`` lines to a log.

    Monte Carlo batches may finish on worker threads; ``seq`` gives their
    arrival order, and only the set of batch records is deterministic.
    """

    def __init__(self, log: JsonlEventLog) -> None:
        self.log = log

    def _write(self, payload: BaseModel) -> None:
        self.log.append({"event": EVENT_NAMES[type(payload)], "payload": payload.model_dump(mode="json")})

    def emit_policy_step_solved(self, payload: PolicyStepSolved) -> None:
        self._write(payload)

    def emit_solve_completed(self, payload: SolveCompleted) -> None:
        self._write(payload)

    def emit_mc_batch_completed(self, payload: McBatchCompleted) -> None:
        self._write(payload)

    def emit_hedge_completed(self, payload: HedgeCompleted) -> None:
        self._write(payload)

    def emit_study_cell_evaluated(self, payload: StudyCellEvaluated) -> None:
        self._write(payload)
