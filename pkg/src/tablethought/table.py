"""Reasoning-table data model: typed schemas, rows, and row operations.

A reasoning table is an ordered list of rows conforming to a fixed schema of
typed columns (Text / Number / Boolean). Rows hold the structured thoughts a
reasoning loop accumulates; edits arrive as insert/update/delete operations
that are applied with reject-and-continue semantics so one malformed delta
never discards the rest of a batch.

Numbers are carried as ``decimal.Decimal`` so column sums used by budget-style
checks are exact. Column names are matched case-insensitively with whitespace
collapsed and ``_`` treated as a space, because model output is inconsistent
about naming ("total_cost" vs "Total Cost").
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from typing import Any, Iterable, Mapping, Union

__all__ = [
    "Cell",
    "CellViolation",
    "CoercionError",
    "ColumnKind",
    "ColumnSpec",
    "Delete",
    "Insert",
    "OpOutcome",
    "ReasoningTable",
    "Row",
    "RowOperation",
    "SchemaError",
    "TableSchema",
    "Update",
    "apply_operations",
    "build_row",
    "cell_to_json",
    "coerce_cell",
    "dump_table",
    "load_table",
    "normalize_name",
    "parse_decimal",
    "schema_from_json_dict",
    "table_from_json_dict",
    "table_to_json_dict",
    "validate_row",
]

# A cell is Text (str), Number (Decimal), Boolean (bool) or Null (None).
Cell = Union[str, Decimal, bool, None]

_NAME_WS = re.compile(r"\s+")

# Numeric strings may carry a leading currency sign and thousands separators.
_NUMBER_RE = re.compile(r"^\$?\s*(-?)\s*\$?(\d[\d,]*)(\.\d+)?$")

# Loosely-typed sources use these spellings for an absent value.
_NULL_SENTINELS = frozenset({"-", "none", "null"})


class SchemaError(ValueError):
    """A schema, row, or table failed a structural invariant."""


class CoercionError(ValueError):
    """A raw value could not be coerced to the requested column kind."""

    def __init__(self, raw: Any, kind: "ColumnKind"):
        super().__init__(f"cannot coerce {raw!r} to {kind.value}")
        self.raw = raw
        self.kind = kind


def normalize_name(name: str) -> str:
    """Canonical column-name form: lowercase, trimmed, ``_`` == space."""
    return _NAME_WS.sub(" ", name.replace("_", " ")).strip().lower()


def parse_decimal(raw: str) -> Decimal:
    """Parse a numeric string, stripping a leading ``$`` and comma separators.

    Raises ValueError for anything that is not a plain decimal literal.
    """
    m = _NUMBER_RE.match(raw.strip())
    if not m:
        raise ValueError(f"not a numeric literal: {raw!r}")
    sign, digits, frac = m.groups()
    return Decimal(sign + digits.replace(",", "") + (frac or ""))


class ColumnKind(str, Enum):
    TEXT = "Text"
    NUMBER = "Number"
    BOOLEAN = "Boolean"


@dataclass(frozen=True)
class ColumnSpec:
    """One typed column: a name, a kind, and an optional description."""

    name: str
    kind: ColumnKind
    description: str | None = None

    def __post_init__(self) -> None:
        if not self.name or not normalize_name(self.name):
            raise SchemaError("column name must be non-empty")
        if not isinstance(self.kind, ColumnKind):
            raise SchemaError(f"unknown column kind: {self.kind!r}")

    @property
    def normalized(self) -> str:
        return normalize_name(self.name)


@dataclass(frozen=True)
class TableSchema:
    """Ordered typed columns plus the free-text constraints identified for the query."""

    columns: tuple[ColumnSpec, ...]
    identified_constraints: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(
            self, "identified_constraints", tuple(self.identified_constraints)
        )
        if not self.columns:
            raise SchemaError("schema needs at least one column")
        seen: set[str] = set()
        for col in self.columns:
            if col.normalized in seen:
                raise SchemaError(f"duplicate column name: {col.name!r}")
            seen.add(col.normalized)

    @property
    def normalized_names(self) -> tuple[str, ...]:
        return tuple(c.normalized for c in self.columns)

    def column(self, name: str) -> ColumnSpec | None:
        """Look up a column by raw or normalized name; None if absent."""
        wanted = normalize_name(name)
        for col in self.columns:
            if col.normalized == wanted:
                return col
        return None


def _kind_of(value: Cell) -> ColumnKind | None:
    # bool must be tested before Decimal/int ordering concerns.
    if value is None:
        return None
    if isinstance(value, bool):
        return ColumnKind.BOOLEAN
    if isinstance(value, Decimal):
        return ColumnKind.NUMBER
    if isinstance(value, str):
        return ColumnKind.TEXT
    raise SchemaError(f"unsupported cell value: {value!r}")


@dataclass(frozen=True)
class Row:
    """One structured thought: a row id plus one cell per schema column.

    ``cells`` is keyed by normalized column name and must contain exactly the
    schema's columns; any cell may be Null (None).
    """

    id: str
    cells: Mapping[str, Cell]

    def cell(self, name: str) -> Cell:
        return self.cells.get(normalize_name(name))


@dataclass(frozen=True)
class CellViolation:
    """One conformance failure: the offending column and why."""

    column: str
    kind: str  # "missing" | "extra" | "type-mismatch" | "bad-id"
    detail: str

    def __str__(self) -> str:
        return f"{self.column}: {self.kind} ({self.detail})"


def validate_row(row: Row, schema: TableSchema) -> list[CellViolation]:
    """Report every way ``row`` fails to conform to ``schema`` (empty = ok)."""
    violations: list[CellViolation] = []
    if not row.id:
        violations.append(CellViolation("<id>", "bad-id", "row id must be non-empty"))
    expected = set(schema.normalized_names)
    for name in row.cells:
        if name not in expected:
            violations.append(CellViolation(name, "extra", "not a schema column"))
    for col in schema.columns:
        if col.normalized not in row.cells:
            violations.append(CellViolation(col.name, "missing", "cell absent"))
            continue
        value = row.cells[col.normalized]
        try:
            kind = _kind_of(value)
        except SchemaError:
            violations.append(
                CellViolation(
                    col.name, "type-mismatch", f"unsupported value {value!r}"
                )
            )
            continue
        if kind is not None and kind is not col.kind:
            violations.append(
                CellViolation(
                    col.name,
                    "type-mismatch",
                    f"expected {col.kind.value}, got {kind.value}",
                )
            )
    return violations


@dataclass(frozen=True)
class ReasoningTable:
    """A schema plus rows, valid by construction (construction raises otherwise)."""

    schema: TableSchema
    rows: tuple[Row, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "rows", tuple(self.rows))
        seen: set[str] = set()
        for row in self.rows:
            if row.id in seen:
                raise SchemaError(f"duplicate row id: {row.id!r}")
            seen.add(row.id)
            violations = validate_row(row, self.schema)
            if violations:
                raise SchemaError(
                    f"row {row.id!r} invalid: " + "; ".join(map(str, violations))
                )

    def row(self, row_id: str) -> Row | None:
        for row in self.rows:
            if row.id == row_id:
                return row
        return None

    def values(self, column: str) -> list[Cell]:
        """All values of a column in row order. KeyError for unknown columns."""
        col = self.schema.column(column)
        if col is None:
            raise KeyError(column)
        return [row.cells[col.normalized] for row in self.rows]


@dataclass(frozen=True)
class Insert:
    row: Row


@dataclass(frozen=True)
class Update:
    row_id: str
    cells: Mapping[str, Cell]  # partial, keyed by normalized column name


@dataclass(frozen=True)
class Delete:
    row_id: str


RowOperation = Union[Insert, Update, Delete]


@dataclass(frozen=True)
class OpOutcome:
    accepted: bool
    reason: str | None = None


def apply_operations(
    table: ReasoningTable, ops: Iterable[RowOperation]
) -> tuple[ReasoningTable, list[OpOutcome]]:
    """Apply operations in order with reject-and-continue semantics.

    An operation that would break a table invariant (duplicate id on insert,
    unknown id on update/delete, non-conformant cells) is rejected with a
    reason; the remaining operations are still attempted. The returned table
    always satisfies every invariant.
    """
    rows: list[Row] = list(table.rows)
    index = {row.id: i for i, row in enumerate(rows)}
    outcomes: list[OpOutcome] = []

    for op in ops:
        if isinstance(op, Insert):
            if op.row.id in index:
                outcomes.append(OpOutcome(False, f"duplicate id {op.row.id!r}"))
                continue
            violations = validate_row(op.row, table.schema)
            if violations:
                outcomes.append(OpOutcome(False, "; ".join(map(str, violations))))
                continue
            index[op.row.id] = len(rows)
            rows.append(op.row)
            outcomes.append(OpOutcome(True))
        elif isinstance(op, Update):
            if op.row_id not in index:
                outcomes.append(OpOutcome(False, f"unknown id {op.row_id!r}"))
                continue
            unknown = [
                name
                for name in op.cells
                if table.schema.column(name) is None
            ]
            if unknown:
                outcomes.append(
                    OpOutcome(False, f"unknown columns: {', '.join(sorted(unknown))}")
                )
                continue
            current = rows[index[op.row_id]]
            merged = dict(current.cells)
            for name, value in op.cells.items():
                merged[normalize_name(name)] = value
            candidate = Row(id=current.id, cells=merged)
            violations = validate_row(candidate, table.schema)
            if violations:
                outcomes.append(OpOutcome(False, "; ".join(map(str, violations))))
                continue
            rows[index[op.row_id]] = candidate
            outcomes.append(OpOutcome(True))
        elif isinstance(op, Delete):
            if op.row_id not in index:
                outcomes.append(OpOutcome(False, f"unknown id {op.row_id!r}"))
                continue
            pos = index.pop(op.row_id)
            rows.pop(pos)
            index = {row.id: i for i, row in enumerate(rows)}
            outcomes.append(OpOutcome(True))
        else:  # pragma: no cover - guarded by typing
            outcomes.append(OpOutcome(False, f"unknown operation {op!r}"))

    return ReasoningTable(schema=table.schema, rows=tuple(rows)), outcomes


def coerce_cell(raw: Any, kind: ColumnKind) -> Cell:
    """Coerce a loosely-typed value (model output) to a cell of ``kind``.

    None is always Null. For Number and Boolean targets the absent-value
    spellings "-", "none" and "null" also coerce to Null; a Text target keeps
    them verbatim so a literal "-" cell survives round-trips. Number targets
    accept numerals and numeric strings ("$1,400" -> 1400); Boolean accepts
    bools and "true"/"false" case-insensitively; Text renders scalars
    canonically. Raises CoercionError otherwise.
    """
    if raw is None:
        return None
    if (
        kind is not ColumnKind.TEXT
        and isinstance(raw, str)
        and raw.strip().lower() in _NULL_SENTINELS
    ):
        return None

    if kind is ColumnKind.NUMBER:
        if isinstance(raw, bool):
            raise CoercionError(raw, kind)
        if isinstance(raw, Decimal):
            if not raw.is_finite():
                raise CoercionError(raw, kind)
            return raw
        if isinstance(raw, int):
            return Decimal(raw)
        if isinstance(raw, float):
            if raw != raw or raw in (float("inf"), float("-inf")):
                raise CoercionError(raw, kind)
            return Decimal(str(raw))
        if isinstance(raw, str):
            try:
                return parse_decimal(raw)
            except ValueError:
                raise CoercionError(raw, kind) from None
        raise CoercionError(raw, kind)

    if kind is ColumnKind.BOOLEAN:
        if isinstance(raw, bool):
            return raw
        if isinstance(raw, str):
            lowered = raw.strip().lower()
            if lowered == "true":
                return True
            if lowered == "false":
                return False
        raise CoercionError(raw, kind)

    # Text target: canonical rendering of scalars.
    if isinstance(raw, str):
        return raw
    if isinstance(raw, bool):
        return "true" if raw else "false"
    if isinstance(raw, (int, Decimal)):
        return str(raw)
    if isinstance(raw, float):
        return str(Decimal(str(raw)))
    raise CoercionError(raw, kind)


def build_row(
    schema: TableSchema, row_id: str, values: Mapping[str, Any], coerce: bool = True
) -> Row:
    """Build a full row over ``schema``, filling unmentioned columns with Null.

    Keys may use raw column names; unknown keys are ignored. With ``coerce``
    the values pass through coerce_cell (CoercionError propagates).
    """
    cells: dict[str, Cell] = {c.normalized: None for c in schema.columns}
    for name, value in values.items():
        col = schema.column(name)
        if col is None:
            continue
        cells[col.normalized] = coerce_cell(value, col.kind) if coerce else value
    return Row(id=row_id, cells=cells)


# ---------------------------------------------------------------------------
# Canonical JSON serialization
# ---------------------------------------------------------------------------


def cell_to_json(value: Cell) -> Any:
    """JSON form of one cell: Decimal becomes a plain number, Null becomes null."""
    if isinstance(value, Decimal):
        integral = value.to_integral_value()
        return int(integral) if value == integral else float(value)
    return value


def _cell_from_json(value: Any, kind: ColumnKind) -> Cell:
    if value is None:
        return None
    if kind is ColumnKind.NUMBER and isinstance(value, (int, float)) and not isinstance(value, bool):
        return value if isinstance(value, Decimal) else Decimal(str(value))
    if isinstance(value, Decimal):  # json parsed with parse_float=Decimal
        return value
    return value


def table_to_json_dict(table: ReasoningTable) -> dict[str, Any]:
    """Canonical wire form: schema columns in order, rows with per-cell values."""
    return {
        "schema": {
            "columns": [
                {"name": c.name, "kind": c.kind.value, "description": c.description}
                for c in table.schema.columns
            ],
            "identified_constraints": list(table.schema.identified_constraints),
        },
        "rows": [
            {
                "id": row.id,
                "cells": {
                    c.name: cell_to_json(row.cells[c.normalized])
                    for c in table.schema.columns
                },
            }
            for row in table.rows
        ],
    }


def schema_from_json_dict(doc: Mapping[str, Any]) -> TableSchema:
    columns = tuple(
        ColumnSpec(
            name=col["name"],
            kind=ColumnKind(col["kind"]),
            description=col.get("description"),
        )
        for col in doc["columns"]
    )
    return TableSchema(
        columns=columns,
        identified_constraints=tuple(doc.get("identified_constraints", ())),
    )


def table_from_json_dict(doc: Mapping[str, Any]) -> ReasoningTable:
    schema = schema_from_json_dict(doc["schema"])
    rows = []
    for entry in doc.get("rows", ()):
        cells: dict[str, Cell] = {}
        for name, value in entry["cells"].items():
            col = schema.column(name)
            if col is None:
                raise SchemaError(f"cell for unknown column {name!r}")
            cells[col.normalized] = _cell_from_json(value, col.kind)
        for col in schema.columns:
            cells.setdefault(col.normalized, None)
        rows.append(Row(id=entry["id"], cells=cells))
    return ReasoningTable(schema=schema, rows=tuple(rows))


def dump_table(table: ReasoningTable) -> str:
    return json.dumps(table_to_json_dict(table), indent=2)


def load_table(text: str) -> ReasoningTable:
    try:
        doc = json.loads(text, parse_float=Decimal)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid table JSON: {exc}") from exc
    return table_from_json_dict(doc)
