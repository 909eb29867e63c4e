"""The iterative reasoning loop: schema design, reflection, verification.

A run proceeds in one of three shapes:

* table methods — design (or accept) a table schema, then repeatedly ask the
  model for row operations, apply them, and check sufficiency until the check
  passes or the iteration cap (default 10) is reached;
* text method — the same reflect/verify loop over a free-text draft that each
  iteration fully replaces;
* direct / cot — a single completion with no loop and no verification (cot
  prepends a step-by-step instruction).

Sufficiency combines the model's own verdict with programmatic auto-check
constraints when either is enabled; with both disabled the loop accepts after
the first pass. Every model call is recorded in the run trace, and a trace
replayed against the same scripted backend is bit-identical apart from call
latency fields.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping, Union

from .backend import (
    BackendError,
    StructuredRequest,
    TokenUsage,
    request_hash,
)
from .constraints import (
    AutoCheckConstraint,
    ConstraintParseError,
    ConstraintVerdict,
    evaluate_all,
    parse_constraint,
    render_constraint,
)
from .prompts import prompt
from .table import (
    Cell,
    CoercionError,
    ColumnKind,
    ColumnSpec,
    Delete,
    Insert,
    ReasoningTable,
    RowOperation,
    TableSchema,
    Update,
    apply_operations,
    build_row,
    coerce_cell,
    normalize_name,
    table_from_json_dict,
    table_to_json_dict,
)
from .table import cell_to_json

__all__ = [
    "CallRecord",
    "ExtractFn",
    "IterationRecord",
    "Method",
    "MethodConfig",
    "RunTrace",
    "SchemaDesignError",
    "TableOps",
    "TaskKind",
    "TextRevision",
    "ThoughtUpdate",
    "TraceView",
    "VerificationVerdict",
    "design_schema",
    "read_trace",
    "reflect",
    "run",
    "trace_filename",
    "verify",
    "write_trace",
]


class Method(str, Enum):
    DIRECT = "direct"
    COT = "cot"
    TEXT = "text"
    TABLE = "table"
    TABLE_AUTOCHECK = "table-autocheck"
    TABLE_GIVEN = "table-given"


TABLE_METHODS = (Method.TABLE, Method.TABLE_AUTOCHECK, Method.TABLE_GIVEN)


class TaskKind(str, Enum):
    CONSTRAINT_PLANNING = "constraint-planning"
    MATH_REASONING = "math-reasoning"


@dataclass(frozen=True)
class MethodConfig:
    """How a single run behaves: method, loop cap, and ablation switches."""

    method: Method
    task_kind: TaskKind
    max_iterations: int = 10
    schema_design_enabled: bool = True
    verification_enabled: bool = True
    given_schema: TableSchema | None = None
    schema_style: str = "free"  # free | one-row | multi-row

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.method is Method.TABLE_GIVEN and self.given_schema is None:
            raise ValueError("table-given method requires given_schema")
        if self.schema_style not in ("free", "one-row", "multi-row"):
            raise ValueError(f"unknown schema_style {self.schema_style!r}")


@dataclass(frozen=True)
class TableOps:
    ops: tuple[RowOperation, ...]


@dataclass(frozen=True)
class TextRevision:
    text: str


ThoughtUpdate = Union[TableOps, TextRevision]


@dataclass(frozen=True)
class VerificationVerdict:
    """Outcome of one sufficiency check.

    ``sufficient`` is true only when the model reported no issues (if its
    check ran) and every auto-check constraint held (if any were active).
    """

    sufficient: bool
    llm_issues: tuple[str, ...]
    autocheck: tuple[ConstraintVerdict, ...]
    iteration: int


@dataclass(frozen=True)
class CallRecord:
    stage: str
    prompt_id: str
    request_hash: str
    ok: bool
    error: str | None
    usage: TokenUsage
    latency_ms: int


@dataclass
class IterationRecord:
    update: ThoughtUpdate
    table_snapshot: ReasoningTable | None
    text_snapshot: str | None
    verdict: VerificationVerdict | None
    rejected_ops: list[str]


@dataclass
class RunTrace:
    """Everything one run did: inputs, per-iteration deltas, calls, outcome."""

    query: str
    query_id: str
    config: MethodConfig
    schema: TableSchema | None
    autochecks: list[AutoCheckConstraint]
    autocheck_errors: list[str]
    iterations: list[IterationRecord]
    response_text: str | None
    final_answer: str | None
    llm_calls: list[CallRecord]
    completed: bool
    failure: str | None

    @property
    def final_table(self) -> ReasoningTable | None:
        for record in reversed(self.iterations):
            if record.table_snapshot is not None:
                return record.table_snapshot
        return None

    @property
    def final_text(self) -> str | None:
        if self.response_text is not None:
            return self.response_text
        for record in reversed(self.iterations):
            if record.text_snapshot is not None:
                return record.text_snapshot
        return None

    def to_json_dict(self) -> dict[str, Any]:
        return _trace_to_json_dict(self)


class SchemaDesignError(ValueError):
    """The model's schema proposal was unusable (e.g. zero columns)."""


# An extractor maps the final state (table, text, or None) plus the schema to
# canonical answer text; None signals extraction failure.
ExtractFn = Callable[[Union[ReasoningTable, str, None], Union[TableSchema, None]], Union[str, None]]


# ---------------------------------------------------------------------------
# Structured-output schemas for each call stage
# ---------------------------------------------------------------------------

_CONSTRAINTS_OUTPUT = {
    "type": "object",
    "properties": {"constraints": {"type": "array", "items": {"type": "string"}}},
    "required": ["constraints"],
}

_VERIFY_OUTPUT = {
    "type": "object",
    "properties": {
        "sufficient": {"type": "boolean"},
        "issues": {"type": "array", "items": {"type": "string"}},
    },
    "required": ["sufficient", "issues"],
}

_ANSWER_OUTPUT = {
    "type": "object",
    "properties": {"answer": {"type": "string"}},
    "required": ["answer"],
}

_REVISION_OUTPUT = {
    "type": "object",
    "properties": {"revision": {"type": "string"}},
    "required": ["revision"],
}

_KIND_TO_JSON_TYPE = {
    ColumnKind.TEXT: "string",
    ColumnKind.NUMBER: "number",
    ColumnKind.BOOLEAN: "boolean",
}


def schema_design_output(with_autochecks: bool) -> dict[str, Any]:
    properties: dict[str, Any] = {
        "columns": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "name": {"type": "string"},
                    "kind": {"type": "string", "enum": ["Text", "Number", "Boolean"]},
                    "description": {"type": "string"},
                },
                "required": ["name", "kind"],
            },
        }
    }
    required = ["columns"]
    if with_autochecks:
        properties["auto_check_constraints"] = {
            "type": "array",
            "items": {"type": "string"},
        }
        required.append("auto_check_constraints")
    return {"type": "object", "properties": properties, "required": required}


def reflect_output_schema(schema: TableSchema | None) -> dict[str, Any]:
    """Row-operation output schema derived mechanically from the table schema.

    Each operation carries the op kind, the row id, and one field per column
    under ``cells`` (all required, null allowed); with no schema (the
    no-schema-design ablation) ``cells`` degenerates to a free name-to-value
    object whose values are read as text.
    """
    if schema is None:
        cells: dict[str, Any] = {"type": "object"}
    else:
        cells = {
            "type": "object",
            "properties": {
                c.name: {"type": [_KIND_TO_JSON_TYPE[c.kind], "null"]}
                for c in schema.columns
            },
            "required": [c.name for c in schema.columns],
        }
    return {
        "type": "object",
        "properties": {
            "operations": {
                "type": "array",
                "items": {
                    "type": "object",
                    "properties": {
                        "op": {"type": "string", "enum": ["insert", "update", "delete"]},
                        "id": {"type": "string"},
                        "cells": cells,
                    },
                    "required": ["op", "id", "cells"],
                },
            }
        },
        "required": ["operations"],
    }


# ---------------------------------------------------------------------------
# Call recording
# ---------------------------------------------------------------------------


class _Recorder:
    def __init__(self, backend, temperature: float):
        self.backend = backend
        self.temperature = temperature
        self.calls: list[CallRecord] = []

    def complete(
        self,
        stage: str,
        prompt_id: str,
        system_prompt: str,
        user_message: str,
        output_schema: Mapping[str, Any],
    ) -> dict[str, Any]:
        request = StructuredRequest(
            system_prompt=system_prompt,
            user_messages=(user_message,),
            output_schema=output_schema,
            temperature=self.temperature,
            model_id=getattr(self.backend, "model_id", ""),
        )
        rhash = request_hash(request)
        try:
            response = self.backend.complete(request)
        except BackendError as exc:
            self.calls.append(
                CallRecord(stage, prompt_id, rhash, False, type(exc).__name__, TokenUsage(), 0)
            )
            raise
        self.calls.append(
            CallRecord(
                stage,
                prompt_id,
                rhash,
                True,
                None,
                response.usage,
                response.latency_ms,
            )
        )
        return response.payload


def _style_hint(style: str) -> str:
    if style == "one-row":
        return prompt("style/one-row/v1")
    if style == "multi-row":
        return prompt("style/multi-row/v1")
    return ""


def _issue_lines(verdict: VerificationVerdict | None) -> str:
    if verdict is None:
        return "- (none yet)"
    lines = [f"- {issue}" for issue in verdict.llm_issues]
    lines += [
        f"- auto-check failed: {render_constraint(v.constraint)}"
        for v in verdict.autocheck
        if not v.satisfied
    ]
    return "\n".join(lines) if lines else "- (none)"


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------


def design_schema(
    query: str,
    task_kind: TaskKind,
    backend,
    *,
    method: Method = Method.TABLE,
    schema_style: str = "free",
    temperature: float = 0.0,
    recorder: _Recorder | None = None,
) -> tuple[TableSchema, list[AutoCheckConstraint], list[str]]:
    """Ask the model for a table schema for this query.

    Constraint-planning queries take two calls (constraint extraction, then
    schema design conditioned on the extracted constraints); math queries take
    one. Returns the schema, any parsed auto-check constraints, and the
    sources of proposals that failed to parse (soft errors). Raises
    SchemaDesignError when the proposal has no usable columns.
    """
    recorder = recorder or _Recorder(backend, temperature)
    system = prompt("system/table/v1")
    want_autochecks = method is Method.TABLE_AUTOCHECK
    identified: tuple[str, ...] = ()

    if task_kind is TaskKind.CONSTRAINT_PLANNING:
        payload = recorder.complete(
            "constraint-extraction",
            "constraint-extraction/v1",
            system,
            prompt("constraint-extraction/v1").format(query=query),
            _CONSTRAINTS_OUTPUT,
        )
        identified = tuple(str(c) for c in payload["constraints"])
        design_id = (
            "schema-design-autocheck/v1" if want_autochecks else "schema-design/v1"
        )
        user = prompt(design_id).format(
            constraints="\n".join(f"- {c}" for c in identified) or "- (none)",
            query=query,
            style_hint=_style_hint(schema_style),
        )
    else:
        design_id = "schema-design-math/v1"
        user = prompt(design_id).format(query=query, style_hint=_style_hint(schema_style))

    payload = recorder.complete(
        "schema-design",
        design_id,
        system,
        user,
        schema_design_output(want_autochecks),
    )

    columns: list[ColumnSpec] = []
    seen: set[str] = set()
    for entry in payload["columns"]:
        name = str(entry.get("name", "")).strip()
        if not name or normalize_name(name) in seen:
            continue
        seen.add(normalize_name(name))
        columns.append(
            ColumnSpec(
                name=name,
                kind=ColumnKind(entry["kind"]),
                description=entry.get("description"),
            )
        )
    if not columns:
        raise SchemaDesignError("model proposed a schema with no usable columns")
    schema = TableSchema(columns=tuple(columns), identified_constraints=identified)

    autochecks: list[AutoCheckConstraint] = []
    parse_failures: list[str] = []
    if want_autochecks:
        for source in payload.get("auto_check_constraints", ()):
            try:
                autochecks.append(parse_constraint(str(source)))
            except ConstraintParseError as exc:
                parse_failures.append(f"{source!r}: {exc}")
    return schema, autochecks, parse_failures


@dataclass
class ReflectResult:
    update: ThoughtUpdate
    inferred_schema: TableSchema | None
    rejected: list[str]


def _ops_from_payload(
    entries: list[Any], schema: TableSchema
) -> tuple[list[RowOperation], list[str]]:
    ops: list[RowOperation] = []
    rejected: list[str] = []
    for entry in entries:
        kind = str(entry.get("op", "")).lower()
        row_id = str(entry.get("id", ""))
        cells = entry.get("cells") or {}
        if kind == "insert":
            try:
                ops.append(Insert(build_row(schema, row_id, cells, coerce=True)))
            except CoercionError as exc:
                rejected.append(f"insert {row_id!r}: {exc}")
        elif kind == "update":
            unknown = [
                name
                for name, value in cells.items()
                if value is not None and schema.column(name) is None
            ]
            if unknown:
                # Pass through so apply_operations records the rejection.
                ops.append(Update(row_id, {normalize_name(n): None for n in unknown}))
                continue
            partial: dict[str, Cell] = {}
            bad = None
            for name, value in cells.items():
                if value is None:
                    continue  # null in an update means "leave unchanged"
                col = schema.column(name)
                try:
                    partial[col.normalized] = coerce_cell(value, col.kind)
                except CoercionError as exc:
                    bad = f"update {row_id!r}: {exc}"
                    break
            if bad:
                rejected.append(bad)
                continue
            ops.append(Update(row_id, partial))
        elif kind == "delete":
            ops.append(Delete(row_id))
        else:
            rejected.append(f"unknown op kind {kind!r}")
    return ops, rejected


def _infer_schema(entries: list[Any]) -> TableSchema | None:
    """Catch-all schema for the no-schema-design ablation: every column Text."""
    columns: list[ColumnSpec] = []
    seen: set[str] = set()
    for entry in entries:
        if str(entry.get("op", "")).lower() != "insert":
            continue
        for name in (entry.get("cells") or {}):
            if normalize_name(str(name)) in seen or not str(name).strip():
                continue
            seen.add(normalize_name(str(name)))
            columns.append(ColumnSpec(name=str(name), kind=ColumnKind.TEXT))
    if not columns:
        return None
    return TableSchema(columns=tuple(columns))


def reflect(
    state: ReasoningTable | str | None,
    query: str,
    last_verdict: VerificationVerdict | None,
    backend,
    *,
    schema: TableSchema | None = None,
    no_schema: bool = False,
    temperature: float = 0.0,
    recorder: _Recorder | None = None,
) -> ReflectResult:
    """One reflection step: ask the model for the next update to the state.

    Table mode returns converted row operations (with per-op conversion
    failures reported, not raised); text mode returns a full replacement
    draft. In no-schema mode the first reflection that inserts rows also
    fixes the run's catch-all schema.
    """
    recorder = recorder or _Recorder(backend, temperature)
    issues = _issue_lines(last_verdict)

    if isinstance(state, str):
        payload = recorder.complete(
            "reflect",
            "reflect-text/v1",
            prompt("system/text/v1"),
            prompt("reflect-text/v1").format(
                text=state or "(empty)", query=query, issues=issues
            ),
            _REVISION_OUTPUT,
        )
        return ReflectResult(TextRevision(str(payload["revision"])), None, [])

    prompt_id = "reflect-table-noschema/v1" if (no_schema and schema is None) else "reflect-table/v1"
    table_json = (
        json.dumps(table_to_json_dict(state), indent=2)
        if isinstance(state, ReasoningTable)
        else "(no table yet)"
    )
    payload = recorder.complete(
        "reflect",
        prompt_id,
        prompt("system/table/v1"),
        prompt(prompt_id).format(table=table_json, query=query, issues=issues),
        reflect_output_schema(schema),
    )
    entries = payload["operations"]

    inferred = None
    if schema is None:
        inferred = _infer_schema(entries)
        if inferred is None:
            return ReflectResult(
                TableOps(()), None, ["no insert operations to infer a table from"]
            )
        schema = inferred
    ops, rejected = _ops_from_payload(entries, schema)
    return ReflectResult(TableOps(tuple(ops)), inferred, rejected)


def verify(
    state: ReasoningTable | str | None,
    query: str,
    schema: TableSchema | None,
    autochecks: list[AutoCheckConstraint],
    backend,
    config: MethodConfig,
    iteration: int,
    *,
    temperature: float = 0.0,
    recorder: _Recorder | None = None,
) -> VerificationVerdict:
    """Sufficiency check combining the model's verdict with auto-checks.

    With verification disabled and no auto-checks, the loop accepts after the
    first pass (iteration >= 1); otherwise sufficiency is the conjunction of
    the enabled checks.
    """
    recorder = recorder or _Recorder(backend, temperature)
    llm_ok = True
    issues: tuple[str, ...] = ()

    if config.verification_enabled:
        if isinstance(state, str):
            prompt_id = "verify-text/v1"
            system = prompt("system/text/v1")
            user = prompt(prompt_id).format(text=state or "(empty)", query=query)
        else:
            prompt_id = "verify-table/v1"
            system = prompt("system/table/v1")
            listed = list(schema.identified_constraints) if schema else []
            listed += [render_constraint(c) for c in autochecks]
            user = prompt(prompt_id).format(
                table=json.dumps(table_to_json_dict(state), indent=2)
                if isinstance(state, ReasoningTable)
                else "(no table yet)",
                query=query,
                constraints="\n".join(f"- {c}" for c in listed) or "- (none)",
            )
        payload = recorder.complete("verify", prompt_id, system, user, _VERIFY_OUTPUT)
        llm_ok = bool(payload["sufficient"])
        issues = tuple(str(i) for i in payload["issues"])

    auto_verdicts: tuple[ConstraintVerdict, ...] = ()
    auto_ok = True
    if autochecks and isinstance(state, ReasoningTable):
        verdicts, auto_ok = evaluate_all(autochecks, state)
        auto_verdicts = tuple(verdicts)

    if not config.verification_enabled and not autochecks:
        sufficient = iteration >= 1
    else:
        sufficient = llm_ok and not issues and auto_ok
    return VerificationVerdict(
        sufficient=sufficient,
        llm_issues=issues,
        autocheck=auto_verdicts,
        iteration=iteration,
    )


# ---------------------------------------------------------------------------
# The run loop
# ---------------------------------------------------------------------------


def run(
    query: str,
    config: MethodConfig,
    backend,
    *,
    extract: ExtractFn | None = None,
    temperature: float = 0.0,
    query_id: str = "",
) -> RunTrace:
    """Execute one full run and return its trace.

    Model-content problems (rejected operations, failed checks) never raise;
    pipeline failures (backend gave up, unusable schema, answer extraction
    failed) mark the trace ``completed=False`` with the failure recorded.
    """
    recorder = _Recorder(backend, temperature)
    schema: TableSchema | None = None
    autochecks: list[AutoCheckConstraint] = []
    autocheck_errors: list[str] = []
    iterations: list[IterationRecord] = []
    response_text: str | None = None
    table: ReasoningTable | None = None
    text_state: str | None = None
    failure: str | None = None

    try:
        if config.method in (Method.DIRECT, Method.COT):
            prompt_id = "cot/v1" if config.method is Method.COT else "direct/v1"
            payload = recorder.complete(
                "answer",
                prompt_id,
                prompt("system/text/v1"),
                prompt(prompt_id).format(query=query),
                _ANSWER_OUTPUT,
            )
            response_text = str(payload["answer"])

        elif config.method is Method.TEXT:
            text_state = ""
            last_verdict: VerificationVerdict | None = None
            for iteration in range(1, config.max_iterations + 1):
                result = reflect(
                    text_state,
                    query,
                    last_verdict,
                    backend,
                    temperature=temperature,
                    recorder=recorder,
                )
                assert isinstance(result.update, TextRevision)
                text_state = result.update.text
                record = IterationRecord(
                    update=result.update,
                    table_snapshot=None,
                    text_snapshot=text_state,
                    verdict=None,
                    rejected_ops=[],
                )
                try:
                    verdict = verify(
                        text_state,
                        query,
                        None,
                        [],
                        backend,
                        config,
                        iteration,
                        temperature=temperature,
                        recorder=recorder,
                    )
                except BackendError:
                    iterations.append(record)
                    raise
                record.verdict = verdict
                iterations.append(record)
                last_verdict = verdict
                if verdict.sufficient:
                    break

        else:  # table methods
            if config.method is Method.TABLE_GIVEN:
                schema = config.given_schema
            elif config.schema_design_enabled:
                schema, autochecks, autocheck_errors = design_schema(
                    query,
                    config.task_kind,
                    backend,
                    method=config.method,
                    schema_style=config.schema_style,
                    temperature=temperature,
                    recorder=recorder,
                )
            no_schema_mode = schema is None
            if schema is not None:
                table = ReasoningTable(schema=schema)

            last_verdict = None
            for iteration in range(1, config.max_iterations + 1):
                result = reflect(
                    table,
                    query,
                    last_verdict,
                    backend,
                    schema=schema,
                    no_schema=no_schema_mode,
                    temperature=temperature,
                    recorder=recorder,
                )
                if result.inferred_schema is not None:
                    schema = result.inferred_schema
                    table = ReasoningTable(schema=schema)
                rejected = list(result.rejected)
                if table is not None and isinstance(result.update, TableOps):
                    table, outcomes = apply_operations(table, result.update.ops)
                    rejected += [o.reason or "rejected" for o in outcomes if not o.accepted]
                record = IterationRecord(
                    update=result.update,
                    table_snapshot=table,
                    text_snapshot=None,
                    verdict=None,
                    rejected_ops=rejected,
                )
                if table is None:
                    # Nothing to check yet; keep looping up to the cap.
                    record.verdict = VerificationVerdict(False, (), (), iteration)
                    iterations.append(record)
                    last_verdict = record.verdict
                    continue
                try:
                    verdict = verify(
                        table,
                        query,
                        schema,
                        autochecks,
                        backend,
                        config,
                        iteration,
                        temperature=temperature,
                        recorder=recorder,
                    )
                except BackendError:
                    iterations.append(record)
                    raise
                record.verdict = verdict
                iterations.append(record)
                last_verdict = verdict
                if verdict.sufficient:
                    break

    except BackendError as exc:
        failure = f"backend:{type(exc).__name__}"
    except SchemaDesignError as exc:
        failure = f"schema-design:{exc}"

    final_answer: str | None = None
    if failure is None and extract is not None:
        if config.method in TABLE_METHODS:
            state: ReasoningTable | str | None = table
        elif config.method is Method.TEXT:
            state = text_state
        else:
            state = response_text
        final_answer = extract(state, schema)
        if final_answer is None:
            failure = "extraction-failed"

    return RunTrace(
        query=query,
        query_id=query_id,
        config=config,
        schema=schema,
        autochecks=autochecks,
        autocheck_errors=autocheck_errors,
        iterations=iterations,
        response_text=response_text,
        final_answer=final_answer,
        llm_calls=recorder.calls,
        completed=failure is None,
        failure=failure,
    )


# ---------------------------------------------------------------------------
# Trace serialization
# ---------------------------------------------------------------------------


def _schema_to_json(schema: TableSchema | None) -> dict[str, Any] | None:
    if schema is None:
        return None
    return {
        "columns": [
            {"name": c.name, "kind": c.kind.value, "description": c.description}
            for c in schema.columns
        ],
        "identified_constraints": list(schema.identified_constraints),
    }


def _op_to_json(op: RowOperation) -> dict[str, Any]:
    if isinstance(op, Insert):
        return {
            "op": "insert",
            "id": op.row.id,
            "cells": {name: cell_to_json(value) for name, value in op.row.cells.items()},
        }
    if isinstance(op, Update):
        return {
            "op": "update",
            "id": op.row_id,
            "cells": {name: cell_to_json(value) for name, value in op.cells.items()},
        }
    return {"op": "delete", "id": op.row_id}


def _verdict_to_json(verdict: VerificationVerdict | None) -> dict[str, Any] | None:
    if verdict is None:
        return None
    return {
        "sufficient": verdict.sufficient,
        "llm_issues": list(verdict.llm_issues),
        "autocheck": [
            {
                "source": v.constraint.source,
                "satisfied": v.satisfied,
                "witness": None
                if v.witness is None
                else {
                    "row_ids": list(v.witness.row_ids),
                    "aggregate": None
                    if v.witness.aggregate is None
                    else cell_to_json(v.witness.aggregate),
                    "detail": v.witness.detail,
                },
            }
            for v in verdict.autocheck
        ],
        "iteration": verdict.iteration,
    }


def _trace_to_json_dict(trace: RunTrace) -> dict[str, Any]:
    config = trace.config
    return {
        "query_id": trace.query_id,
        "query": trace.query,
        "config": {
            "method": config.method.value,
            "task_kind": config.task_kind.value,
            "max_iterations": config.max_iterations,
            "schema_design_enabled": config.schema_design_enabled,
            "verification_enabled": config.verification_enabled,
            "schema_style": config.schema_style,
            "given_schema": _schema_to_json(config.given_schema),
        },
        "schema": _schema_to_json(trace.schema),
        "autochecks": [c.source for c in trace.autochecks],
        "autocheck_errors": list(trace.autocheck_errors),
        "iterations": [
            {
                "update": {"kind": "table-ops", "operations": [_op_to_json(op) for op in record.update.ops]}
                if isinstance(record.update, TableOps)
                else {"kind": "text", "text": record.update.text},
                "table_snapshot": table_to_json_dict(record.table_snapshot)
                if record.table_snapshot is not None
                else None,
                "text_snapshot": record.text_snapshot,
                "rejected_ops": list(record.rejected_ops),
                "verdict": _verdict_to_json(record.verdict),
            }
            for record in trace.iterations
        ],
        "response_text": trace.response_text,
        "final_answer": trace.final_answer,
        "llm_calls": [
            {
                "stage": call.stage,
                "prompt_id": call.prompt_id,
                "request_hash": call.request_hash,
                "ok": call.ok,
                "error": call.error,
                "usage": {"prompt": call.usage.prompt, "completion": call.usage.completion},
                "latency_ms": call.latency_ms,
            }
            for call in trace.llm_calls
        ],
        "completed": trace.completed,
        "failure": trace.failure,
    }


def trace_filename(task: str, method: Method | str, query_id: str) -> str:
    method_name = method.value if isinstance(method, Method) else str(method)
    return f"{task}-{method_name}-{query_id}.trace.json"


def write_trace(trace: RunTrace, path: str | Path) -> None:
    Path(path).write_text(json.dumps(trace.to_json_dict(), indent=2) + "\n")


@dataclass(frozen=True)
class TraceView:
    """The slice of a persisted trace the evaluation tools need."""

    query_id: str
    query: str
    method: str
    task_kind: str
    completed: bool
    final_answer: str | None
    final_table: ReasoningTable | None
    iteration_count: int
    prompt_tokens: int
    completion_tokens: int


def read_trace(path: str | Path) -> TraceView:
    doc = json.loads(Path(path).read_text())
    final_table = None
    for record in reversed(doc.get("iterations", [])):
        snapshot = record.get("table_snapshot")
        if snapshot is not None:
            final_table = table_from_json_dict(snapshot)
            break
    calls = doc.get("llm_calls", [])
    return TraceView(
        query_id=doc.get("query_id", ""),
        query=doc.get("query", ""),
        method=doc["config"]["method"],
        task_kind=doc["config"]["task_kind"],
        completed=bool(doc.get("completed")),
        final_answer=doc.get("final_answer"),
        final_table=final_table,
        iteration_count=len(doc.get("iterations", [])),
        prompt_tokens=sum(int(c.get("usage", {}).get("prompt", 0)) for c in calls),
        completion_tokens=sum(int(c.get("usage", {}).get("completion", 0)) for c in calls),
    )
