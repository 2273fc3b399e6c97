"""Tests for event emission infrastructure."""

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from impact_hedge.events import (
    HedgeCompleted,
    JsonlEmitter,
    JsonlEventLog,
    McBatchCompleted,
    NullEmitter,
    PolicyStepSolved,
    SolveCompleted,
    StudyCellEvaluated,
)
from impact_hedge.facelift import face_lift
from impact_hedge.hedge import exact_hedge
from impact_hedge.pde import solve_hjb


def test_null_emitter_is_noop() -> None:
    """NullEmitter methods are callable and do nothing."""
    emitter = NullEmitter()
    emitter.emit_policy_step_solved(PolicyStepSolved(step=3, iterations=2, update_norm=0.0, capped_nodes=0))
    emitter.emit_solve_completed(SolveCompleted(solver="hjb", price=1.0, iterations=4, residual_sup=0.0))
    emitter.emit_mc_batch_completed(McBatchCompleted(kind="dual_value", block=0, n_paths=10))
    emitter.emit_hedge_completed(HedgeCompleted(strategy="exact", n_paths=1, n_steps=1, mean_error=0.0,
                                                sup_error=0.0, domain_escapes=0, grid_escapes=0))
    emitter.emit_study_cell_evaluated(StudyCellEvaluated(study="expansion", cell="fitted_slope", passed=True,
                                                         margin=0.1))


def test_jsonl_log_numbers_records(tmp_path: Path) -> None:
    """Appended records read back in order with their sequence numbers."""
    log = JsonlEventLog(tmp_path / "events.jsonl")

    assert log.append({"event": "A", "data": 1}) == 0
    assert log.append({"event": "B", "data": 2}) == 1

    assert log.records() == [{"event": "A", "data": 1, "seq": 0}, {"event": "B", "data": 2, "seq": 1}]
    assert log.records("B") == [{"event": "B", "data": 2, "seq": 1}]


def test_jsonl_log_reopen_continues_numbering(tmp_path: Path) -> None:
    path = tmp_path / "events.jsonl"
    JsonlEventLog(path).append({"event": "A"})

    assert JsonlEventLog(path).append({"event": "B"}) == 1


def test_jsonl_log_concurrent_appends_stay_whole(tmp_path: Path) -> None:
    """Appends from worker threads never interleave and seq follows file order."""
    log = JsonlEventLog(tmp_path / "events.jsonl")

    def _append(block: int) -> int:
        return log.append({"event": "McBatchCompleted", "block": block, "pad": "x" * 512})

    with ThreadPoolExecutor(max_workers=8) as pool:
        list(pool.map(_append, range(400)))

    records = log.records()
    assert [record["seq"] for record in records] == list(range(400))
    assert sorted(record["block"] for record in records) == list(range(400))


def test_jsonl_log_sort_keys_determinism(tmp_path: Path) -> None:
    log = JsonlEventLog(tmp_path / "events.jsonl")

    log.append({"zebra": 1, "alpha": 2, "middle": 3})

    raw_line = (tmp_path / "events.jsonl").read_text().strip()
    assert raw_line == '{"alpha":2,"middle":3,"seq":0,"zebra":1}'


def test_jsonl_log_rounds_floats(tmp_path: Path) -> None:
    log = JsonlEventLog(tmp_path / "events.jsonl")

    log.append({"event": "A", "value": 0.1 + 0.2, "sup": float("inf")})

    assert log.records() == [{"event": "A", "seq": 0, "sup": "+inf", "value": 0.3}]


def test_jsonl_log_read_empty(tmp_path: Path) -> None:
    """Reading a non-existent log returns empty list."""
    assert JsonlEventLog(tmp_path / "nonexistent.jsonl").records() == []


def test_jsonl_emitter_names_events(tmp_path: Path) -> None:
    log = JsonlEventLog(tmp_path / "events.jsonl")
    emitter = JsonlEmitter(log)
    emitter.emit_solve_completed(SolveCompleted(solver="delta_v", iterations=10, residual_sup=1e-9))
    emitter.emit_mc_batch_completed(McBatchCompleted(kind="hedge_exact", block=2, n_paths=7))

    records = log.records()
    assert [record["event"] for record in records] == ["SolveCompleted", "McBatchCompleted"]
    assert records[0]["payload"]["solver"] == "delta_v"
    assert records[0]["payload"]["price"] is None
    assert records[1]["payload"] == {"block": 2, "kind": "hedge_exact", "n_paths": 7}


def test_hjb_solve_reports_every_step(wide_model, wide_grid, call, recorder) -> None:
    terminal = face_lift(call, wide_model, wide_grid).g_hat_values
    solution = solve_hjb(wide_model, terminal, wide_grid, emitter=recorder)

    steps = recorder.of_type(PolicyStepSolved)
    assert len(steps) == wide_grid.n_time
    assert all(step.iterations >= 1 for step in steps)
    completed = recorder.of_type(SolveCompleted)
    assert len(completed) == 1
    assert completed[0].iterations == solution.total_iterations
    assert completed[0].residual_sup == solution.residual_sup
    assert recorder.events[-1] is completed[0]


def test_hedge_reports_batches(free_model, wide_grid, call, recorder) -> None:
    exact_hedge(free_model, call, wide_grid, 250, 20, seed=1, x0=100.0, block_size=100, emitter=recorder)

    batches = recorder.of_type(McBatchCompleted)
    assert sorted(batch.block for batch in batches) == [0, 1, 2]
    assert sum(batch.n_paths for batch in batches) == 250
    assert len(recorder.of_type(HedgeCompleted)) == 1
