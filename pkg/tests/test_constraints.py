from __future__ import annotations

import random
from decimal import ROUND_HALF_EVEN, Decimal

import pytest

from tablethought.constraints import (
    Agg,
    Aggregate,
    AutoCheckConstraint,
    Cmp,
    ConstraintParseError,
    ForAll,
    NonEmpty,
    Unique,
    evaluate_all,
    evaluate_constraint,
    parse_constraint,
    render_constraint,
)
from tablethought.table import (
    ColumnKind,
    ColumnSpec,
    ReasoningTable,
    Row,
    TableSchema,
)

# ---------------------------------------------------------------------------
# Naive oracle: re-implements evaluation by materializing column values with
# plain Python, independent of the production evaluator's structure.
# ---------------------------------------------------------------------------

_CMP = {
    "<=": lambda a, b: a <= b,
    "<": lambda a, b: a < b,
    ">=": lambda a, b: a >= b,
    ">": lambda a, b: a > b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}


def naive_satisfied(constraint: AutoCheckConstraint, table: ReasoningTable) -> bool:
    expr = constraint.expr
    if isinstance(expr, Aggregate):
        if expr.column == "*":
            value = Decimal(len(table.rows))
        else:
            cells = [v for v in table.values(expr.column) if v is not None]
            if expr.agg is Agg.COUNT:
                value = Decimal(len(cells))
            else:
                if not all(isinstance(v, Decimal) for v in cells):
                    return False
                if not cells:
                    if expr.agg is Agg.SUM:
                        value = Decimal(0)
                    else:
                        return False
                elif expr.agg is Agg.SUM:
                    value = sum(cells, Decimal(0))
                elif expr.agg is Agg.MIN:
                    value = min(cells)
                elif expr.agg is Agg.MAX:
                    value = max(cells)
                else:
                    value = (sum(cells, Decimal(0)) / Decimal(len(cells))).quantize(
                        Decimal("0.000001"), rounding=ROUND_HALF_EVEN
                    )
        return _CMP[expr.cmp.value](value, expr.bound)
    if isinstance(expr, ForAll):
        for v in table.values(expr.column):
            if v is None:
                return False
            if isinstance(expr.literal, bool) != isinstance(v, bool):
                return False
            if isinstance(expr.literal, Decimal) and not isinstance(v, Decimal):
                return False
            if isinstance(expr.literal, str) and not isinstance(v, str):
                return False
            if not _CMP[expr.cmp.value](v, expr.literal):
                return False
        return True
    if isinstance(expr, Unique):
        seen = [v for v in table.values(expr.column) if v is not None]
        return len(seen) == len(set(seen))
    if isinstance(expr, NonEmpty):
        return all(
            v is not None and (not isinstance(v, str) or v.strip())
            for v in table.values(expr.column)
        )
    raise AssertionError(expr)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def test_parse_budget_sum():
    c = parse_constraint("sum(Cost) <= 1400")
    assert c.expr == Aggregate(Agg.SUM, "Cost", Cmp.LE, Decimal(1400))


def test_parse_count_star():
    c = parse_constraint("count(*) >= 3")
    assert c.expr == Aggregate(Agg.COUNT, "*", Cmp.GE, Decimal(3))


def test_parse_error_offset_for_unbalanced_paren():
    with pytest.raises(ConstraintParseError) as err:
        parse_constraint("sum(Cost <= 10")
    assert err.value.offset == 9


def test_parse_star_only_valid_with_count():
    with pytest.raises(ConstraintParseError):
        parse_constraint("sum(*) <= 10")


def test_parse_is_whitespace_and_case_insensitive():
    a = parse_constraint("SUM( Cost )<=1400")
    b = parse_constraint("sum(Cost) <= 1400")
    assert a == b


def test_parse_currency_and_commas_in_bound():
    c = parse_constraint("sum(Cost) <= $1,400")
    assert c.expr.bound == Decimal(1400)


def test_parse_forall_string_literal_and_backticks():
    c = parse_constraint('forall: `Meeting Day` == "Monday"')
    assert c.expr == ForAll("Meeting Day", Cmp.EQ, "Monday")


def test_parse_forall_bool_literal():
    c = parse_constraint("forall: done == true")
    assert c.expr == ForAll("done", Cmp.EQ, True)


def test_parse_unique_and_nonempty():
    assert parse_constraint("unique(Day)").expr == Unique("Day")
    assert parse_constraint("nonempty(Cost)").expr == NonEmpty("Cost")


def test_parse_rejects_trailing_junk():
    with pytest.raises(ConstraintParseError):
        parse_constraint("unique(Day) extra")


# ---------------------------------------------------------------------------
# Rendering round-trip
# ---------------------------------------------------------------------------

_IDENT_ALPHABET = "abcdefgXYZ_09"


def _random_expr(rng: random.Random):
    def ident():
        name = "".join(rng.choice(_IDENT_ALPHABET) for _ in range(rng.randint(1, 8)))
        if not (name[0].isalpha() or name[0] == "_"):
            name = "c" + name
        if rng.random() < 0.3:
            name = name[: max(1, len(name) // 2)] + " " + name[len(name) // 2 :]
        return name.strip() or "col"

    cmp = rng.choice(list(Cmp))
    kind = rng.randrange(4)
    if kind == 0:
        agg = rng.choice(list(Agg))
        column = "*" if (agg is Agg.COUNT and rng.random() < 0.3) else ident()
        digits = Decimal(rng.randrange(-100000, 100000))
        bound = digits / (Decimal(10) ** rng.randrange(0, 3))
        return Aggregate(agg, column, cmp, bound)
    if kind == 1:
        literal = rng.choice(
            [
                Decimal(rng.randrange(-1000, 1000)),
                "".join(rng.choice("abc XYZ") for _ in range(rng.randint(0, 6))),
                rng.random() < 0.5,
            ]
        )
        return ForAll(ident(), cmp, literal)
    if kind == 2:
        return Unique(ident())
    return NonEmpty(ident())


def test_render_parse_round_trip_bulk():
    rng = random.Random(20240501)
    for _ in range(1000):
        expr = _random_expr(rng)
        constraint = AutoCheckConstraint(source="", expr=expr)
        text = render_constraint(constraint)
        assert parse_constraint(text) == constraint, text


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _table(columns: list[tuple[str, ColumnKind]], rows: list[dict]) -> ReasoningTable:
    schema = TableSchema(columns=tuple(ColumnSpec(n, k) for n, k in columns))
    built = []
    for i, cells in enumerate(rows):
        full = {schema.columns[j].normalized: cells.get(schema.columns[j].name) for j in range(len(schema.columns))}
        built.append(Row(id=str(i + 1), cells=full))
    return ReasoningTable(schema=schema, rows=tuple(built))


def test_b1_budget_sum_satisfied(b1_table):
    # Oracle: the three daily totals summed independently.
    independent_total = Decimal(270) + Decimal(61) + Decimal(68)
    assert independent_total == Decimal(399)
    verdict = evaluate_constraint(parse_constraint("sum(total_cost) <= 1400"), b1_table)
    assert verdict.satisfied
    values = [v for v in b1_table.values("total_cost") if v is not None]
    assert sum(values, Decimal(0)) == independent_total


def test_count_star_on_empty_table_unsatisfied_with_witness():
    table = _table([("Cost", ColumnKind.NUMBER)], [])
    verdict = evaluate_constraint(parse_constraint("count(*) >= 3"), table)
    assert not verdict.satisfied
    assert verdict.witness.aggregate == Decimal(0)


def test_unique_day_labels_satisfied():
    table = _table(
        [("Day", ColumnKind.TEXT)],
        [{"Day": "Day 1"}, {"Day": "Day 2"}, {"Day": "Day 3"}],
    )
    assert evaluate_constraint(parse_constraint("unique(Day)"), table).satisfied


def test_null_cells_excluded_from_sum_but_fail_forall_and_nonempty():
    table = _table(
        [("Cost", ColumnKind.NUMBER)],
        [{"Cost": Decimal(5)}, {"Cost": None}],
    )
    assert evaluate_constraint(parse_constraint("sum(Cost) == 5"), table).satisfied
    assert not evaluate_constraint(parse_constraint("forall: Cost >= 0"), table).satisfied
    assert not evaluate_constraint(parse_constraint("nonempty(Cost)"), table).satisfied
    assert evaluate_constraint(parse_constraint("count(Cost) == 1"), table).satisfied


def test_blank_text_fails_nonempty():
    table = _table([("Name", ColumnKind.TEXT)], [{"Name": "  "}])
    assert not evaluate_constraint(parse_constraint("nonempty(Name)"), table).satisfied


def test_avg_uses_half_even_rounding_to_six_places():
    table = _table(
        [("x", ColumnKind.NUMBER)],
        [{"x": Decimal(1)}, {"x": Decimal(2)}, {"x": Decimal(2)}],
    )
    # 5/3 = 1.666666666... -> 1.666667 after half-even rounding at 6 places.
    assert evaluate_constraint(parse_constraint("avg(x) == 1.666667"), table).satisfied


def test_unknown_column_reported_not_raised_by_evaluate_all():
    table = _table([("Cost", ColumnKind.NUMBER)], [{"Cost": Decimal(1)}])
    verdicts, overall = evaluate_all([parse_constraint("sum(Missing) <= 5")], table)
    assert not overall
    assert not verdicts[0].satisfied
    assert "Missing" in verdicts[0].witness.detail


def test_evaluate_all_conjunction_and_order():
    table = _table([("Cost", ColumnKind.NUMBER)], [{"Cost": Decimal(10)}])
    good = parse_constraint("sum(Cost) <= 100")
    bad = parse_constraint("sum(Cost) <= 5")
    verdicts, overall = evaluate_all([good, bad], table)
    assert [v.satisfied for v in verdicts] == [True, False]
    assert overall is False
    verdicts, overall = evaluate_all([], table)
    assert overall is True and verdicts == []
    verdicts, overall = evaluate_all([good, good], table)
    assert overall is True and len(verdicts) == 2


def test_failed_verdict_always_carries_witness():
    table = _table(
        [("Cost", ColumnKind.NUMBER), ("Day", ColumnKind.TEXT)],
        [{"Cost": Decimal(10), "Day": "Day 1"}, {"Cost": None, "Day": "Day 1"}],
    )
    for text in (
        "sum(Cost) <= 5",
        "forall: Cost >= 0",
        "unique(Day)",
        "nonempty(Cost)",
        "min(Day) <= 1",  # kind mismatch routed through evaluate_all
    ):
        verdicts, _ = evaluate_all([parse_constraint(text)], table)
        assert not verdicts[0].satisfied
        assert verdicts[0].witness is not None, text


# ---------------------------------------------------------------------------
# Properties
# ---------------------------------------------------------------------------


def test_sum_upper_bound_monotone_under_nonnegative_inserts():
    rng = random.Random(7)
    constraint = parse_constraint("sum(Cost) <= 50")
    for _ in range(200):
        rows = [
            {"Cost": Decimal(rng.randrange(0, 30))} for _ in range(rng.randrange(0, 6))
        ]
        table = _table([("Cost", ColumnKind.NUMBER)], rows)
        before = evaluate_constraint(constraint, table).satisfied
        grown = _table(
            [("Cost", ColumnKind.NUMBER)],
            rows + [{"Cost": Decimal(rng.randrange(0, 30))}],
        )
        after = evaluate_constraint(constraint, grown).satisfied
        # Adding a non-negative value never flips unsatisfied -> satisfied.
        assert not (after and not before)


def _random_small_table(rng: random.Random) -> ReasoningTable:
    n_rows = rng.randrange(0, 7)
    rows = []
    for _ in range(n_rows):
        rows.append(
            {
                "num": rng.choice([None] + [Decimal(v) for v in range(-10, 11)]),
                "txt": rng.choice([None, "", "a", "b", "Day 1"]),
                "flag": rng.choice([None, True, False]),
            }
        )
    return _table(
        [
            ("num", ColumnKind.NUMBER),
            ("txt", ColumnKind.TEXT),
            ("flag", ColumnKind.BOOLEAN),
        ],
        rows,
    )


def _random_checkable(rng: random.Random) -> AutoCheckConstraint:
    cmp = rng.choice(list(Cmp))
    choice = rng.randrange(6)
    if choice == 0:
        agg = rng.choice(list(Agg))
        column = "*" if agg is Agg.COUNT and rng.random() < 0.3 else "num"
        return AutoCheckConstraint(
            source="", expr=Aggregate(agg, column, cmp, Decimal(rng.randrange(-30, 31)))
        )
    if choice == 1:
        return AutoCheckConstraint(
            source="", expr=ForAll("num", cmp, Decimal(rng.randrange(-10, 11)))
        )
    if choice == 2:
        return AutoCheckConstraint(
            source="", expr=ForAll("txt", cmp, rng.choice(["", "a", "Day 1"]))
        )
    if choice == 3:
        return AutoCheckConstraint(
            source="", expr=ForAll("flag", cmp, rng.random() < 0.5)
        )
    if choice == 4:
        return AutoCheckConstraint(source="", expr=Unique(rng.choice(["num", "txt"])))
    return AutoCheckConstraint(source="", expr=NonEmpty(rng.choice(["num", "txt", "flag"])))


def test_evaluator_agrees_with_naive_oracle_bulk():
    rng = random.Random(99)
    for _ in range(1000):
        table = _random_small_table(rng)
        constraint = _random_checkable(rng)
        verdicts, _ = evaluate_all([constraint], table)
        assert verdicts[0].satisfied == naive_satisfied(constraint, table), (
            render_constraint(constraint),
            [dict(r.cells) for r in table.rows],
        )


def test_evaluation_is_deterministic():
    rng = random.Random(5)
    table = _random_small_table(rng)
    constraint = parse_constraint("count(num) >= 1")
    first = evaluate_constraint(constraint, table)
    for _ in range(5):
        assert evaluate_constraint(constraint, table) == first
