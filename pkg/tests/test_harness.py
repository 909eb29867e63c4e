from __future__ import annotations

import json
from decimal import Decimal
from pathlib import Path

import pytest

from conftest import constraints_call, insert_call, schema_call, verify_call
from tablethought.backend import Config
from tablethought.engine import Method, MethodConfig, TaskKind
from tablethought.harness import (
    ExperimentConfig,
    Granularity,
    classify_schema_granularity,
    evaluate_traces,
    report_by_granularity,
    run_ablation,
    run_experiment,
    task_adapter,
)
from tablethought.table import ColumnKind, ColumnSpec, ReasoningTable, Row, TableSchema
from tablethought.tasks import calendar as calendar_task
from tablethought.tasks.travel import TABLE1_METRIC_NAMES


def _calendar_run_calls(answer: str) -> list[dict]:
    return [
        constraints_call("respect everyone's schedule"),
        schema_call("Proposed Meeting Time"),
        insert_call({"1": {"Proposed Meeting Time": answer}}),
        verify_call(True),
    ]


def _write_scripted_config(tmp_path: Path, runs: dict[str, list[dict]]) -> Path:
    fixture = tmp_path / "fixture.json"
    fixture.write_text(
        json.dumps({"runs": {qid: {"calls": calls} for qid, calls in runs.items()}})
    )
    config = tmp_path / "backend.json"
    config.write_text(json.dumps({"backend": {"kind": "scripted", "fixture": "fixture.json"}}))
    return config


def _calendar_corpus(tmp_path: Path, n: int, seed: int = 5) -> tuple[Path, list]:
    items = calendar_task.generate_instances(seed, n)
    path = tmp_path / "corpus.jsonl"
    calendar_task.write_corpus(items, path)
    return path, items


def _experiment(tmp_path, *, n=3, wrong: set[int] = frozenset(), missing: set[int] = frozenset(), out="out"):
    from tablethought.backend import load_config

    corpus, items = _calendar_corpus(tmp_path, n)
    runs = {}
    for i, item in enumerate(items):
        if i in missing:
            continue
        answer = item.gold.slot.render() if i not in wrong else "9:00-9:05"
        runs[item.id] = _calendar_run_calls(answer)
    config_path = _write_scripted_config(tmp_path, runs)
    return ExperimentConfig(
        task="calendar",
        methods=[MethodConfig(method=Method.TABLE, task_kind=TaskKind.CONSTRAINT_PLANNING)],
        corpus=corpus,
        backend_config=load_config(config_path),
        out_dir=tmp_path / out,
    )


# ---------------------------------------------------------------------------
# Granularity classification and split
# ---------------------------------------------------------------------------


def _rows_table(n: int) -> ReasoningTable:
    schema = TableSchema(columns=(ColumnSpec("x", ColumnKind.NUMBER),))
    rows = tuple(Row(id=str(i), cells={"x": Decimal(i)}) for i in range(n))
    return ReasoningTable(schema=schema, rows=rows)


def test_classify_granularity():
    assert classify_schema_granularity(_rows_table(1)) is Granularity.ONE_ROW
    assert classify_schema_granularity(_rows_table(3)) is Granularity.MULTI_ROW
    # Degenerate cases classify OneRow by convention.
    assert classify_schema_granularity(_rows_table(0)) is Granularity.ONE_ROW
    assert classify_schema_granularity(None) is Granularity.ONE_ROW


def test_classify_granularity_accepts_traces(c1_query):
    from conftest import c1_run_calls
    from tablethought.backend import ScriptedBackend
    from tablethought.engine import run

    trace = run(
        c1_query,
        MethodConfig(method=Method.TABLE, task_kind=TaskKind.CONSTRAINT_PLANNING),
        ScriptedBackend(c1_run_calls()),
    )
    assert classify_schema_granularity(trace) is Granularity.ONE_ROW


def test_report_by_granularity_arithmetic():
    scored = [
        (Granularity.MULTI_ROW, True),
        (Granularity.MULTI_ROW, True),
        (Granularity.MULTI_ROW, False),
        (Granularity.MULTI_ROW, False),
        (Granularity.ONE_ROW, True),
        (Granularity.ONE_ROW, False),
    ]
    report = report_by_granularity(scored)
    assert report["MultiRow"] == {"n": 4, "accuracy": 50.0}
    assert report["OneRow"] == {"n": 2, "accuracy": 50.0}


def test_report_by_granularity_all_one_row():
    report = report_by_granularity([(Granularity.ONE_ROW, True)] * 3)
    assert report["OneRow"] == {"n": 3, "accuracy": 100.0}
    assert report["MultiRow"] == {"n": 0, "accuracy": None}


def test_report_by_granularity_rejects_empty():
    with pytest.raises(ValueError):
        report_by_granularity([])


# ---------------------------------------------------------------------------
# run_experiment
# ---------------------------------------------------------------------------


def test_scripted_batch_scores_and_persists(tmp_path):
    cfg = _experiment(tmp_path, n=3, wrong={2})
    report = run_experiment(cfg)
    stats = report.methods["table"]
    assert stats["n"] == 3
    assert stats["completion_rate"] == 100.0
    assert stats["accuracy"] == pytest.approx(100.0 * 2 / 3)
    assert stats["one_row_fraction"] == 1.0
    assert stats["mean_iterations"] == 1.0
    traces = sorted(p.name for p in cfg.out_dir.glob("*.trace.json"))
    assert len(traces) == 3
    assert traces[0].startswith("calendar-table-")
    assert (cfg.out_dir / "report.json").exists()


def test_completion_rate_counts_failed_runs(tmp_path):
    cfg = _experiment(tmp_path, n=10, missing={4})
    report = run_experiment(cfg)
    stats = report.methods["table"]
    assert stats["completed"] == 9
    assert stats["completion_rate"] == pytest.approx(90.0)
    assert report.any_failed


def test_batch_is_deterministic(tmp_path):
    report_a = run_experiment(_experiment(tmp_path, n=3, out="a"))
    report_b = run_experiment(_experiment(tmp_path, n=3, out="b"))
    assert json.dumps(report_a.to_json_dict()) == json.dumps(report_b.to_json_dict())
    for path_a in sorted((_ for _ in (Path(str(tmp_path)) / "a").glob("*.trace.json"))):
        path_b = tmp_path / "b" / path_a.name
        assert path_a.read_text() == path_b.read_text()


def test_parallel_batch_matches_serial(tmp_path):
    serial = run_experiment(_experiment(tmp_path, n=4, out="serial"))
    parallel_cfg = _experiment(tmp_path, n=4, out="parallel")
    parallel_cfg.parallel = 3
    parallel = run_experiment(parallel_cfg)
    assert json.dumps(serial.to_json_dict()) == json.dumps(parallel.to_json_dict())


def test_retry_failed_marks_report(tmp_path):
    cfg = _experiment(tmp_path, n=3, missing={1})
    cfg.retry_failed = True
    report = run_experiment(cfg)
    stats = report.methods["table"]
    assert stats["retried"] == 1
    assert stats["completed"] == 2  # scripted retry replays the same failure


def test_tokens_accumulated_from_usage(tmp_path):
    corpus, items = _calendar_corpus(tmp_path, 1)
    calls = _calendar_run_calls(items[0].gold.slot.render())
    for i, call in enumerate(calls):
        call["usage"] = {"prompt": 10 + i, "completion": 2}
    config_path = _write_scripted_config(tmp_path, {items[0].id: calls})
    from tablethought.backend import load_config

    config = load_config(config_path)
    cfg = ExperimentConfig(
        task="calendar",
        methods=[MethodConfig(method=Method.TABLE, task_kind=TaskKind.CONSTRAINT_PLANNING)],
        corpus=corpus,
        backend_config=config,
        out_dir=tmp_path / "out",
    )
    report = run_experiment(cfg)
    stats = report.methods["table"]
    assert stats["tokens"] == {"prompt": 10 + 11 + 12 + 13, "completion": 8}


# ---------------------------------------------------------------------------
# Travel batch: Table-1-shaped report
# ---------------------------------------------------------------------------


def _travel_corpus(tmp_path: Path) -> Path:
    path = tmp_path / "travel.jsonl"
    rows = [
        {
            "id": f"t{i}",
            "origin": "Oakland",
            "destination": "Tucson",
            "days": 2,
            "people": 1,
            "budget": 1400,
            "raw_text": f"2-day itinerary #{i} from Oakland to Tucson under $1,400",
        }
        for i in range(2)
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    return path


def _travel_day(day: int) -> dict:
    return {
        "days": day,
        "current_city": "Tucson",
        "attraction": "Pima Air & Space Museum",
        "transportation": "Flight from Oakland to Tucson" if day == 1 else "Drive from Tucson to Oakland",
        "breakfast": "Mocha",
        "lunch": "Pizza Street",
        "dinner": "Canteen Till I Die",
        "accommodation": "Private room (Cost: $58)",
    }


def test_travel_batch_emits_six_metric_names(tmp_path):
    corpus = _travel_corpus(tmp_path)
    run_calls = [
        insert_call({"day1": _travel_day(1), "day2": _travel_day(2)}),
        verify_call(True),
    ]
    config_path = _write_scripted_config(tmp_path, {"t0": run_calls, "t1": run_calls})
    from tablethought.backend import load_config
    from tablethought.tasks.travel import GIVEN_PLAN_SCHEMA

    cfg = ExperimentConfig(
        task="travel",
        methods=[
            MethodConfig(
                method=Method.TABLE_GIVEN,
                task_kind=TaskKind.CONSTRAINT_PLANNING,
                given_schema=GIVEN_PLAN_SCHEMA,
            )
        ],
        corpus=corpus,
        backend_config=load_config(config_path),
        out_dir=tmp_path / "out",
    )
    report = run_experiment(cfg)
    stats = report.methods["table-given"]
    assert tuple(stats["metrics"].keys()) == TABLE1_METRIC_NAMES
    assert stats["metrics"]["Delivery Rate (%)"] == 100.0


# ---------------------------------------------------------------------------
# Ablation grid
# ---------------------------------------------------------------------------


def test_ablation_grid_shape(tmp_path):
    corpus, items = _calendar_corpus(tmp_path, 1)
    config_path = _write_scripted_config(
        tmp_path, {items[0].id: _calendar_run_calls(items[0].gold.slot.render())}
    )
    from tablethought.backend import load_config

    result = run_ablation(
        "calendar", corpus, load_config(config_path), tmp_path / "ablate"
    )
    assert len(result["grid"]) == 4
    combos = {(cell["schema_design"], cell["verification"]) for cell in result["grid"]}
    assert combos == {(True, True), (True, False), (False, True), (False, False)}
    best = [c for c in result["grid"] if c["schema_design"] and c["verification"]][0]
    assert best["accuracy"] == 100.0
    assert (tmp_path / "ablate" / "ablation.json").exists()


def test_ablation_rejects_travel(tmp_path):
    with pytest.raises(ValueError):
        run_ablation("travel", tmp_path / "x.jsonl", Config(), tmp_path)


# ---------------------------------------------------------------------------
# evaluate_traces (scoring from disk)
# ---------------------------------------------------------------------------


def test_evaluate_traces_matches_live_report(tmp_path):
    cfg = _experiment(tmp_path, n=3, wrong={0})
    live = run_experiment(cfg)
    from_disk = evaluate_traces(cfg.out_dir, "calendar", corpus=cfg.corpus)
    assert from_disk.methods["table"]["accuracy"] == live.methods["table"]["accuracy"]
    assert (
        from_disk.methods["table"]["completion_rate"]
        == live.methods["table"]["completion_rate"]
    )


def test_evaluate_traces_calendar_without_corpus_uses_solver(tmp_path):
    cfg = _experiment(tmp_path, n=2)
    run_experiment(cfg)
    report = evaluate_traces(cfg.out_dir, "calendar")
    assert report.methods["table"]["accuracy"] == 100.0


def test_evaluate_traces_math_requires_corpus(tmp_path):
    (tmp_path / "t").mkdir()
    with pytest.raises(ValueError):
        evaluate_traces(tmp_path / "t", "math")


def test_evaluate_traces_empty_dir_errors(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(ValueError):
        evaluate_traces(tmp_path / "empty", "calendar")


def test_task_adapter_unknown_name():
    with pytest.raises(ValueError):
        task_adapter("chess")
