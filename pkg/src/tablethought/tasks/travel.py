"""Travel-plan validation: structural/commonsense checks, the budget check,
and micro/macro metric aggregation.

Only checks computable without a reference database are implemented; checks
that would need real flight/hotel/restaurant data are reported as not
evaluable rather than silently passed or failed. The budget check reads a
numeric cost column when the plan has one, else falls back to per-item
"Cost: $N" annotations inside text cells; plans with neither are budget
not-evaluable.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Mapping

from ..table import (
    Cell,
    ColumnKind,
    ColumnSpec,
    ReasoningTable,
    TableSchema,
)

__all__ = [
    "COMMONSENSE_CHECKS",
    "GIVEN_PLAN_SCHEMA",
    "HARD_CHECKS",
    "PlanVerdict",
    "TABLE1_METRIC_NAMES",
    "TravelMetrics",
    "TravelQuery",
    "aggregate_metrics",
    "read_queries",
    "travel_query_from_json",
    "validate_plan",
]

# The fixed evaluation schema plans are normalized into before checking.
GIVEN_PLAN_SCHEMA = TableSchema(
    columns=(
        ColumnSpec("days", ColumnKind.NUMBER),
        ColumnSpec("current_city", ColumnKind.TEXT),
        ColumnSpec("attraction", ColumnKind.TEXT),
        ColumnSpec("transportation", ColumnKind.TEXT),
        ColumnSpec("breakfast", ColumnKind.TEXT),
        ColumnSpec("lunch", ColumnKind.TEXT),
        ColumnSpec("dinner", ColumnKind.TEXT),
        ColumnSpec("accommodation", ColumnKind.TEXT),
    )
)

COMMONSENSE_CHECKS = (
    "complete_information",
    "meal_diversity",
    "day_continuity",
    "origin_terminus",
)
HARD_CHECKS = ("budget",)

TABLE1_METRIC_NAMES = (
    "Delivery Rate (%)",
    "Commonsense Constraint Micro Pass Rate (%)",
    "Commonsense Constraint Macro Pass Rate (%)",
    "Hard Constraint Micro Pass Rate (%)",
    "Hard Constraint Macro Pass Rate (%)",
    "Final Pass Rate (%)",
)


@dataclass(frozen=True)
class TravelQuery:
    origin: str
    destination: str
    days: int
    people: int
    budget: Decimal
    raw_text: str

    def __post_init__(self) -> None:
        if self.days < 1:
            raise ValueError("days must be >= 1")
        if self.budget <= 0:
            raise ValueError("budget must be positive")


def travel_query_from_json(doc: Mapping[str, object]) -> TravelQuery:
    return TravelQuery(
        origin=str(doc["origin"]),
        destination=str(doc["destination"]),
        days=int(doc["days"]),  # type: ignore[arg-type]
        people=int(doc["people"]),  # type: ignore[arg-type]
        budget=Decimal(str(doc["budget"])),
        raw_text=str(doc.get("raw_text", "")),
    )


def read_queries(path: str | Path) -> list[tuple[str, TravelQuery]]:
    """Read a JSONL corpus of travel queries: one {"id", ...fields} per line."""
    items: list[tuple[str, TravelQuery]] = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        doc = json.loads(line)
        items.append((str(doc["id"]), travel_query_from_json(doc)))
    return items


@dataclass(frozen=True)
class PlanVerdict:
    """Per-plan check results: a delivery flag plus per-check pass booleans.

    Checks that could not be evaluated (e.g. budget with no parseable costs)
    appear in ``not_evaluable`` and in neither map.
    """

    delivered: bool
    commonsense: dict[str, bool]
    hard: dict[str, bool]
    not_evaluable: tuple[str, ...] = ()


_ABSENT_TEXT = frozenset({"", "-", "none", "n/a"})

_DAY_TEXT_RE = re.compile(r"^\s*(?:day\s*)?(\d+)\s*$", re.IGNORECASE)

COST_ANNOTATION_RE = re.compile(r"Cost:\s*\$\s*(\d[\d,]*(?:\.\d+)?)")


def _absent(value: Cell) -> bool:
    if value is None:
        return True
    return isinstance(value, str) and value.strip().lower() in _ABSENT_TEXT


def _day_number(value: Cell) -> int | None:
    if isinstance(value, Decimal):
        return int(value) if value == value.to_integral_value() else None
    if isinstance(value, str):
        m = _DAY_TEXT_RE.match(value)
        return int(m.group(1)) if m else None
    return None


def _find_column(table: ReasoningTable, *names: str) -> str | None:
    for col in table.schema.columns:
        if col.normalized in names:
            return col.normalized
    return None


def _cost_column(table: ReasoningTable) -> str | None:
    """Pick the cost column: prefer a total-cost column, else a lone cost column."""
    candidates = [
        col
        for col in table.schema.columns
        if col.kind is ColumnKind.NUMBER and "cost" in col.normalized
    ]
    totals = [col for col in candidates if "total" in col.normalized]
    if totals:
        return totals[0].normalized
    if len(candidates) == 1:
        return candidates[0].normalized
    return None


def validate_plan(table: ReasoningTable, query: TravelQuery) -> PlanVerdict:
    """Evaluate one plan table against the database-free check families.

    Delivery requires a nonempty, schema-conformant table with a day column
    and exactly one row per requested day; an undelivered plan gets empty
    check maps. Transportation may be absent on middle days (stay days); the
    first and last rows must name travel that mentions the origin city.
    """
    day_col = _find_column(table, "days", "day")
    delivered = bool(table.rows) and day_col is not None and len(table.rows) == query.days
    if not delivered:
        return PlanVerdict(delivered=False, commonsense={}, hard={})

    commonsense: dict[str, bool] = {}
    not_evaluable: list[str] = []

    # complete_information: every given-schema cell filled in, except
    # transportation on middle (non-travel) days.
    complete = True
    for spec in GIVEN_PLAN_SCHEMA.columns:
        col = table.schema.column(spec.name)
        if col is None:
            complete = False
            break
        for idx, row in enumerate(table.rows):
            value = row.cells[col.normalized]
            if _absent(value):
                if spec.normalized == "transportation" and 0 < idx < len(table.rows) - 1:
                    continue
                complete = False
                break
        if not complete:
            break
    commonsense["complete_information"] = complete

    # meal_diversity: per day, breakfast/lunch/dinner pairwise distinct when
    # all three are present; a schema without the three meal columns fails the
    # structural mapping outright.
    meal_cols = [table.schema.column(name) for name in ("breakfast", "lunch", "dinner")]
    if any(col is None for col in meal_cols):
        commonsense["meal_diversity"] = False
    else:
        diverse = True
        for row in table.rows:
            meals = [row.cells[col.normalized] for col in meal_cols]  # type: ignore[union-attr]
            if any(_absent(m) for m in meals):
                continue
            lowered = [str(m).strip().lower() for m in meals]
            if len(set(lowered)) != len(lowered):
                diverse = False
                break
        commonsense["meal_diversity"] = diverse

    # day_continuity: day numbers run 1..N in order.
    days = [_day_number(row.cells[day_col]) for row in table.rows]
    commonsense["day_continuity"] = days == list(range(1, len(table.rows) + 1))

    # origin_terminus: the first and last transportation entries mention the
    # origin city when they are present at all.
    origin_ok = True
    transport_col = table.schema.column("transportation")
    if transport_col is not None and table.rows:
        for row in (table.rows[0], table.rows[-1]):
            value = row.cells[transport_col.normalized]
            if _absent(value):
                continue
            if query.origin.lower() not in str(value).lower():
                origin_ok = False
    commonsense["origin_terminus"] = origin_ok

    # budget (hard): sum a numeric cost column when present, else parse
    # per-item cost annotations out of text cells.
    hard: dict[str, bool] = {}
    cost_col = _cost_column(table)
    if cost_col is not None:
        total = sum(
            (v for v in (row.cells[cost_col] for row in table.rows) if isinstance(v, Decimal)),
            Decimal(0),
        )
        hard["budget"] = total <= query.budget
    else:
        annotated = Decimal(0)
        found = False
        for row in table.rows:
            for value in row.cells.values():
                if not isinstance(value, str):
                    continue
                for match in COST_ANNOTATION_RE.finditer(value):
                    annotated += Decimal(match.group(1).replace(",", ""))
                    found = True
        if found:
            hard["budget"] = annotated <= query.budget
        else:
            not_evaluable.append("budget")

    return PlanVerdict(
        delivered=True,
        commonsense=commonsense,
        hard=hard,
        not_evaluable=tuple(not_evaluable),
    )


@dataclass(frozen=True)
class TravelMetrics:
    """The six headline percentages for a batch of plan verdicts."""

    delivery_rate: float
    cs_micro: float
    cs_macro: float
    hard_micro: float
    hard_macro: float
    final_pass_rate: float

    def table1_report(self) -> dict[str, float]:
        return dict(
            zip(
                TABLE1_METRIC_NAMES,
                (
                    self.delivery_rate,
                    self.cs_micro,
                    self.cs_macro,
                    self.hard_micro,
                    self.hard_macro,
                    self.final_pass_rate,
                ),
            )
        )


def _micro(maps: list[dict[str, bool]]) -> float:
    total = sum(len(m) for m in maps)
    passed = sum(sum(1 for ok in m.values() if ok) for m in maps)
    return 100.0 * passed / total if total else 0.0


def _macro(maps: list[dict[str, bool]], n: int) -> float:
    # A plan with no evaluated checks in the family never counts as passing it.
    full = sum(1 for m in maps if m and all(m.values()))
    return 100.0 * full / n


def aggregate_metrics(verdicts: Iterable[PlanVerdict]) -> TravelMetrics:
    """Aggregate per-plan verdicts into the standard micro/macro percentages.

    micro: passed checks over evaluated checks, pooled across plans.
    macro: plans whose family checks all pass, over all plans (undelivered
    plans and plans with nothing evaluable count against macro).
    final: plans passing both families entirely.
    """
    verdicts = list(verdicts)
    if not verdicts:
        raise ValueError("aggregate_metrics needs at least one verdict")
    n = len(verdicts)
    cs_maps = [v.commonsense for v in verdicts]
    hard_maps = [v.hard for v in verdicts]
    final = sum(
        1
        for v in verdicts
        if v.delivered
        and v.commonsense
        and all(v.commonsense.values())
        and v.hard
        and all(v.hard.values())
    )
    return TravelMetrics(
        delivery_rate=100.0 * sum(v.delivered for v in verdicts) / n,
        cs_micro=_micro(cs_maps),
        cs_macro=_macro(cs_maps, n),
        hard_micro=_micro(hard_maps),
        hard_macro=_macro(hard_maps, n),
        final_pass_rate=100.0 * final / n,
    )
