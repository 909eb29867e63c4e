"""Batch runner and evaluation: executes methods over corpora, aggregates
metrics, persists one trace file per run, and scores persisted traces.

Runs within a batch may execute in parallel up to a configured bound; results
are aggregated in corpus order so a batch against a scripted backend is
byte-reproducible. Failed runs are recorded (completion rate accounting),
never retried automatically; an explicit retry pass can be requested and is
marked in the report.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Sequence

from .backend import Config, ScriptedBackend, create_backend
from .engine import (
    Method,
    MethodConfig,
    RunTrace,
    TaskKind,
    TraceView,
    read_trace,
    run,
    trace_filename,
    write_trace,
)
from .table import ReasoningTable, TableSchema
from .tasks import ExtractionError
from .tasks import calendar as calendar_task
from .tasks import math as math_task
from .tasks import travel as travel_task

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "Granularity",
    "RunView",
    "TaskAdapter",
    "TaskItem",
    "classify_schema_granularity",
    "evaluate_traces",
    "report_by_granularity",
    "run_ablation",
    "run_experiment",
    "task_adapter",
]


class Granularity(str, Enum):
    ONE_ROW = "OneRow"
    MULTI_ROW = "MultiRow"


def classify_schema_granularity(run_or_table) -> Granularity:
    """MultiRow iff the final table has more than one row.

    Accepts a run trace (anything with a ``final_table``) or the table
    itself. An absent or empty final table classifies as OneRow by convention
    (the degenerate case; callers that care should also check emptiness).
    """
    table: ReasoningTable | None = getattr(run_or_table, "final_table", run_or_table)
    if table is None or len(table.rows) <= 1:
        return Granularity.ONE_ROW
    return Granularity.MULTI_ROW


def report_by_granularity(
    scored: Sequence[tuple[Granularity, bool]]
) -> dict[str, dict[str, Any]]:
    """Accuracy split by schema granularity; class sizes included."""
    if not scored:
        raise ValueError("no scored traces to split")
    out: dict[str, dict[str, Any]] = {}
    for granularity in (Granularity.ONE_ROW, Granularity.MULTI_ROW):
        subset = [correct for g, correct in scored if g is granularity]
        out[granularity.value] = {
            "n": len(subset),
            "accuracy": (100.0 * sum(subset) / len(subset)) if subset else None,
        }
    return out


# ---------------------------------------------------------------------------
# Task adapters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskItem:
    id: str
    query_text: str
    payload: Any  # task-specific gold / query object


@dataclass(frozen=True)
class RunView:
    """The per-run facts scoring needs, from a live run or a persisted trace."""

    query_id: str
    query: str
    completed: bool
    final_answer: str | None
    final_table: ReasoningTable | None
    iteration_count: int
    prompt_tokens: int
    completion_tokens: int


def _view_of_trace(trace: RunTrace) -> RunView:
    return RunView(
        query_id=trace.query_id,
        query=trace.query,
        completed=trace.completed,
        final_answer=trace.final_answer,
        final_table=trace.final_table,
        iteration_count=len(trace.iterations),
        prompt_tokens=sum(c.usage.prompt for c in trace.llm_calls),
        completion_tokens=sum(c.usage.completion for c in trace.llm_calls),
    )


def _view_of_file(view: TraceView) -> RunView:
    return RunView(
        query_id=view.query_id,
        query=view.query,
        completed=view.completed,
        final_answer=view.final_answer,
        final_table=view.final_table,
        iteration_count=view.iteration_count,
        prompt_tokens=view.prompt_tokens,
        completion_tokens=view.completion_tokens,
    )


class TaskAdapter:
    """Per-task wiring: corpus loading, answer extraction, scoring."""

    name: str
    kind: TaskKind

    def load_corpus(self, path: str | Path) -> list[TaskItem]:
        raise NotImplementedError

    def given_schema(self) -> TableSchema | None:
        return None

    def extractor(self, item: TaskItem) -> Callable[[Any, Any], str | None]:
        raise NotImplementedError

    def score(self, item: TaskItem, view: RunView) -> dict[str, Any]:
        raise NotImplementedError

    def aggregate(self, scores: list[dict[str, Any]]) -> dict[str, Any]:
        raise NotImplementedError


class CalendarTask(TaskAdapter):
    name = "calendar"
    kind = TaskKind.CONSTRAINT_PLANNING

    def load_corpus(self, path: str | Path) -> list[TaskItem]:
        return [
            TaskItem(id=item.id, query_text=item.query_text, payload=item.gold)
            for item in calendar_task.read_corpus(path)
        ]

    def _instance(self, item_or_query) -> calendar_task.CalendarInstance:
        text = item_or_query if isinstance(item_or_query, str) else item_or_query.query_text
        return calendar_task.parse_calendar_query(text)

    def extractor(self, item: TaskItem) -> Callable[[Any, Any], str | None]:
        default_day = self._instance(item).day

        def extract(state, schema) -> str | None:
            try:
                return calendar_task.extract_answer(state, schema, default_day).render()
            except ExtractionError:
                return None

        return extract

    def _gold(self, item: TaskItem) -> calendar_task.ProposedMeeting | None:
        if item.payload is not None:
            return item.payload
        solution = calendar_task.solve_calendar(self._instance(item))
        return solution.meeting if solution else None

    def score(self, item: TaskItem, view: RunView) -> dict[str, Any]:
        instance = self._instance(item)
        gold = self._gold(item)
        correct = False
        valid = False
        if view.final_answer:
            try:
                predicted = calendar_task.parse_answer(view.final_answer)
            except calendar_task.CalendarParseError:
                predicted = None
            if predicted is not None:
                valid = calendar_task.check_meeting(instance, predicted).valid
                if gold is not None:
                    correct = calendar_task.score_calendar(instance, predicted, gold)
        return {"correct": correct, "valid": valid}

    def aggregate(self, scores: list[dict[str, Any]]) -> dict[str, Any]:
        n = len(scores)
        return {
            "accuracy": 100.0 * sum(s["correct"] for s in scores) / n if n else 0.0,
            "valid_slot_rate": 100.0 * sum(s["valid"] for s in scores) / n if n else 0.0,
        }


class TravelTask(TaskAdapter):
    name = "travel"
    kind = TaskKind.CONSTRAINT_PLANNING

    def load_corpus(self, path: str | Path) -> list[TaskItem]:
        return [
            TaskItem(id=item_id, query_text=query.raw_text or f"{query.days}-day trip", payload=query)
            for item_id, query in travel_task.read_queries(path)
        ]

    def given_schema(self) -> TableSchema | None:
        return travel_task.GIVEN_PLAN_SCHEMA

    def extractor(self, item: TaskItem) -> Callable[[Any, Any], str | None]:
        def extract(state, schema) -> str | None:
            if isinstance(state, ReasoningTable) and state.rows:
                return f"plan:{len(state.rows)}-rows"
            if isinstance(state, str) and state.strip():
                return "plan:text"
            return None

        return extract

    def score(self, item: TaskItem, view: RunView) -> dict[str, Any]:
        query: travel_task.TravelQuery = item.payload
        if view.final_table is not None:
            verdict = travel_task.validate_plan(view.final_table, query)
        else:
            verdict = travel_task.PlanVerdict(delivered=False, commonsense={}, hard={})
        return {"verdict": verdict}

    def aggregate(self, scores: list[dict[str, Any]]) -> dict[str, Any]:
        verdicts = [s["verdict"] for s in scores]
        if not verdicts:
            return {"metrics": None}
        metrics = travel_task.aggregate_metrics(verdicts)
        return {"metrics": metrics.table1_report()}


class MathTask(TaskAdapter):
    name = "math"
    kind = TaskKind.MATH_REASONING

    def load_corpus(self, path: str | Path) -> list[TaskItem]:
        return [
            TaskItem(id=problem.id, query_text=problem.question, payload=problem)
            for problem in math_task.read_corpus(path)
        ]

    def extractor(self, item: TaskItem) -> Callable[[Any, Any], str | None]:
        def extract(state, schema) -> str | None:
            try:
                return math_task.render_answer(math_task.extract_math_answer(state, schema))
            except ExtractionError:
                return None

        return extract

    def score(self, item: TaskItem, view: RunView) -> dict[str, Any]:
        problem: math_task.MathProblem = item.payload
        correct = False
        if view.final_answer:
            try:
                predicted = math_task.parse_answer_text(view.final_answer)
            except ExtractionError:
                predicted = None
            if predicted is not None:
                correct = math_task.compare_answers(predicted, problem.gold)
        return {"correct": correct}

    def aggregate(self, scores: list[dict[str, Any]]) -> dict[str, Any]:
        n = len(scores)
        return {"accuracy": 100.0 * sum(s["correct"] for s in scores) / n if n else 0.0}


_ADAPTERS = {"calendar": CalendarTask, "travel": TravelTask, "math": MathTask}


def task_adapter(name: str) -> TaskAdapter:
    try:
        return _ADAPTERS[name]()
    except KeyError:
        raise ValueError(f"unknown task {name!r}") from None


# ---------------------------------------------------------------------------
# Experiment runner
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    task: str
    methods: list[MethodConfig]
    corpus: Path
    backend_config: Config
    out_dir: Path
    seed: int = 0
    parallel: int = 1
    retry_failed: bool = False


@dataclass
class ExperimentReport:
    task: str
    methods: dict[str, dict[str, Any]] = field(default_factory=dict)

    def to_json_dict(self) -> dict[str, Any]:
        return {"task": self.task, "methods": self.methods}

    @property
    def any_failed(self) -> bool:
        return any(m["completed"] < m["n"] for m in self.methods.values())


def _scripted_calls_for(doc: dict[str, Any], query_id: str) -> list[dict[str, Any]]:
    if "runs" in doc:
        entry = doc["runs"].get(query_id)
        return entry["calls"] if entry else []
    return doc.get("calls", [])


class _BackendFactory:
    """One backend per scripted run (deterministic playback), one shared
    instance for live HTTP backends."""

    def __init__(self, config: Config):
        self.config = config
        self._fixture_doc: dict[str, Any] | None = None
        self._shared = None
        if config.backend.kind == "scripted":
            fixture = Path(config.backend.fixture)
            if not fixture.is_absolute():
                fixture = config.base_dir / fixture
            self._fixture_doc = json.loads(fixture.read_text())
        else:
            self._shared = create_backend(config)

    def backend_for(self, query_id: str):
        if self._fixture_doc is not None:
            return ScriptedBackend(_scripted_calls_for(self._fixture_doc, query_id))
        return self._shared


def _method_config(
    method: Method,
    adapter: TaskAdapter,
    *,
    max_iterations: int,
    schema_design: bool = True,
    verification: bool = True,
    schema_style: str = "free",
) -> MethodConfig:
    given = adapter.given_schema() if method is Method.TABLE_GIVEN else None
    if method is Method.TABLE_GIVEN and given is None:
        raise ValueError(f"task {adapter.name!r} has no given schema")
    return MethodConfig(
        method=method,
        task_kind=adapter.kind,
        max_iterations=max_iterations,
        schema_design_enabled=schema_design,
        verification_enabled=verification,
        given_schema=given,
        schema_style=schema_style,
    )


def _aggregate_method(
    adapter: TaskAdapter,
    items: list[TaskItem],
    views: list[RunView],
    scores: list[dict[str, Any]],
    config: Config,
    retried: int,
) -> dict[str, Any]:
    n = len(views)
    completed = sum(v.completed for v in views)
    prompt_tokens = sum(v.prompt_tokens for v in views)
    completion_tokens = sum(v.completion_tokens for v in views)
    tables = [v.final_table for v in views if v.final_table is not None]
    one_row_fraction = None
    granularity = None
    if tables:
        classes = [classify_schema_granularity(v.final_table) for v in views if v.final_table is not None]
        one_row_fraction = sum(1 for c in classes if c is Granularity.ONE_ROW) / len(classes)
        if scores and "correct" in scores[0]:
            paired = [
                (classify_schema_granularity(v.final_table), bool(s["correct"]))
                for v, s in zip(views, scores)
                if v.final_table is not None
            ]
            if paired:
                granularity = report_by_granularity(paired)

    report: dict[str, Any] = {
        "n": n,
        "completed": completed,
        "completion_rate": 100.0 * completed / n if n else 0.0,
        "mean_iterations": sum(v.iteration_count for v in views) / n if n else 0.0,
        "tokens": {"prompt": prompt_tokens, "completion": completion_tokens},
        "estimated_cost": (
            prompt_tokens / 1000.0 * config.cost.prompt_per_1k
            + completion_tokens / 1000.0 * config.cost.completion_per_1k
        ),
        "one_row_fraction": one_row_fraction,
        "granularity": granularity,
        "retried": retried,
    }
    report.update(adapter.aggregate(scores))
    return report


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Run every configured method over the corpus; one trace file per run."""
    if not cfg.methods:
        raise ValueError("no methods configured")
    adapter = task_adapter(cfg.task)
    items = adapter.load_corpus(cfg.corpus)
    if not items:
        raise ValueError(f"empty corpus: {cfg.corpus}")
    factory = _BackendFactory(cfg.backend_config)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    report = ExperimentReport(task=cfg.task)

    for method_config in cfg.methods:
        def run_one(item: TaskItem) -> RunTrace:
            backend = factory.backend_for(item.id)
            return run(
                item.query_text,
                method_config,
                backend,
                extract=adapter.extractor(item),
                temperature=cfg.backend_config.engine.temperature,
                query_id=item.id,
            )

        if cfg.parallel > 1:
            with ThreadPoolExecutor(max_workers=cfg.parallel) as pool:
                traces = list(pool.map(run_one, items))
        else:
            traces = [run_one(item) for item in items]

        retried = 0
        if cfg.retry_failed:
            for i, trace in enumerate(traces):
                if not trace.completed:
                    traces[i] = run_one(items[i])
                    retried += 1

        for item, trace in zip(items, traces):
            write_trace(
                trace, cfg.out_dir / trace_filename(cfg.task, method_config.method, item.id)
            )

        views = [_view_of_trace(trace) for trace in traces]
        scores = [adapter.score(item, view) for item, view in zip(items, views)]
        method_key = method_config.method.value
        if not method_config.schema_design_enabled or not method_config.verification_enabled:
            method_key += (
                f"[schema={'on' if method_config.schema_design_enabled else 'off'},"
                f"verify={'on' if method_config.verification_enabled else 'off'}]"
            )
        report.methods[method_key] = _aggregate_method(
            adapter, items, views, scores, cfg.backend_config, retried
        )

    report_path = cfg.out_dir / "report.json"
    report_path.write_text(json.dumps(report.to_json_dict(), indent=2) + "\n")
    return report


# ---------------------------------------------------------------------------
# Ablation grid
# ---------------------------------------------------------------------------


def run_ablation(
    task: str,
    corpus: Path,
    backend_config: Config,
    out_dir: Path,
    *,
    max_iterations: int = 10,
    parallel: int = 1,
) -> dict[str, Any]:
    """Run the 2x2 schema-design x verification grid and report accuracy cells."""
    adapter = task_adapter(task)
    if task == "travel":
        raise ValueError("ablation grid reports accuracy; travel has no accuracy metric")
    grid = []
    for schema_design in (True, False):
        for verification in (True, False):
            method_config = _method_config(
                Method.TABLE,
                adapter,
                max_iterations=max_iterations,
                schema_design=schema_design,
                verification=verification,
            )
            cell_dir = out_dir / f"schema-{'on' if schema_design else 'off'}-verify-{'on' if verification else 'off'}"
            report = run_experiment(
                ExperimentConfig(
                    task=task,
                    methods=[method_config],
                    corpus=corpus,
                    backend_config=backend_config,
                    out_dir=cell_dir,
                    parallel=parallel,
                )
            )
            method_report = next(iter(report.methods.values()))
            grid.append(
                {
                    "schema_design": schema_design,
                    "verification": verification,
                    "accuracy": method_report.get("accuracy"),
                    "completion_rate": method_report["completion_rate"],
                }
            )
    result = {"task": task, "grid": grid}
    (out_dir / "ablation.json").write_text(json.dumps(result, indent=2) + "\n")
    return result


# ---------------------------------------------------------------------------
# Scoring persisted traces
# ---------------------------------------------------------------------------

_TRACE_NAME_RE = re.compile(r"^(?P<task>[a-z]+)-(?P<method>[a-z-]+(?:\[[^\]]*\])?)-(?P<qid>.+)\.trace\.json$")


def evaluate_traces(
    traces_dir: Path,
    task: str,
    corpus: Path | None = None,
    config: Config | None = None,
) -> ExperimentReport:
    """Score persisted trace files and aggregate per method.

    Calendar gold answers can be recomputed by the solver when no corpus is
    given; math and travel need the corpus for gold answers / query fields.
    """
    adapter = task_adapter(task)
    config = config or Config()
    items_by_id: dict[str, TaskItem] = {}
    if corpus is not None:
        for item in adapter.load_corpus(corpus):
            items_by_id[item.id] = item
    elif task in ("math", "travel"):
        raise ValueError(f"task {task!r} needs --corpus to score traces")

    grouped: dict[str, list[RunView]] = {}
    for path in sorted(traces_dir.glob("*.trace.json")):
        m = _TRACE_NAME_RE.match(path.name)
        if m and m.group("task") != task:
            continue
        parsed = read_trace(path)
        grouped.setdefault(parsed.method, []).append(_view_of_file(parsed))

    if not grouped:
        raise ValueError(f"no trace files for task {task!r} in {traces_dir}")

    report = ExperimentReport(task=task)
    for method, views in sorted(grouped.items()):
        items = []
        for view in views:
            if view.query_id in items_by_id:
                items.append(items_by_id[view.query_id])
            elif task == "calendar":
                items.append(TaskItem(id=view.query_id, query_text=view.query, payload=None))
            else:
                raise ValueError(f"trace {view.query_id!r} not in corpus")
        scores = [adapter.score(item, view) for item, view in zip(items, views)]
        report.methods[method] = _aggregate_method(adapter, items, views, scores, config, 0)
    return report
