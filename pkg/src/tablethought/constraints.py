"""Auto-check constraints: small machine-verifiable predicates over a table.

These run entirely in-process, with no model involvement, so a reasoning loop
can gate on them deterministically. The grammar (keywords case-insensitive,
whitespace ignored between tokens):

    constraint := aggregate | forall | unique | nonempty
    aggregate  := AGG "(" (IDENT | "*") ")" CMP NUMBER
    AGG        := "sum" | "count" | "min" | "max" | "avg"
    CMP        := "<=" | "<" | ">=" | ">" | "==" | "!="
    forall     := "forall" ":" IDENT CMP literal
    unique     := "unique" "(" IDENT ")"
    nonempty   := "nonempty" "(" IDENT ")"
    literal    := NUMBER | STRING(double-quoted) | "true" | "false"
    IDENT      := letters, digits, "_"; backtick-quoted to allow spaces
    NUMBER     := optional "-", digits, optional "." digits; a leading "$"
                  and thousands commas are accepted and stripped

Null handling is strict: Null cells are excluded from aggregates, fail
``forall`` and ``nonempty``, and are ignored by ``unique`` — an incomplete
table can never vacuously satisfy a check. ``avg`` compares after exact
decimal division rounded half-even to 6 places.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from enum import Enum
from typing import Union

from .table import Cell, ReasoningTable, parse_decimal

__all__ = [
    "Agg",
    "Aggregate",
    "AutoCheckConstraint",
    "Cmp",
    "ConstraintEvalError",
    "ConstraintParseError",
    "ConstraintVerdict",
    "ForAll",
    "NonEmpty",
    "Unique",
    "UnknownColumnError",
    "Witness",
    "evaluate_all",
    "evaluate_constraint",
    "parse_constraint",
    "render_constraint",
]


class Agg(str, Enum):
    SUM = "sum"
    COUNT = "count"
    MIN = "min"
    MAX = "max"
    AVG = "avg"


class Cmp(str, Enum):
    LE = "<="
    LT = "<"
    GE = ">="
    GT = ">"
    EQ = "=="
    NE = "!="


_CMP_FNS = {
    Cmp.LE: lambda a, b: a <= b,
    Cmp.LT: lambda a, b: a < b,
    Cmp.GE: lambda a, b: a >= b,
    Cmp.GT: lambda a, b: a > b,
    Cmp.EQ: lambda a, b: a == b,
    Cmp.NE: lambda a, b: a != b,
}

Literal = Union[str, Decimal, bool]


@dataclass(frozen=True)
class Aggregate:
    agg: Agg
    column: str  # "*" only with count
    cmp: Cmp
    bound: Decimal

    def __post_init__(self) -> None:
        if self.column == "*" and self.agg is not Agg.COUNT:
            raise ValueError("'*' is only valid with count()")
        if not self.bound.is_finite():
            raise ValueError("bound must be finite")


@dataclass(frozen=True)
class ForAll:
    column: str
    cmp: Cmp
    literal: Literal

    def __post_init__(self) -> None:
        if isinstance(self.literal, Decimal) and not self.literal.is_finite():
            raise ValueError("literal must be finite")


@dataclass(frozen=True)
class Unique:
    column: str


@dataclass(frozen=True)
class NonEmpty:
    column: str


ConstraintExpr = Union[Aggregate, ForAll, Unique, NonEmpty]


@dataclass(frozen=True)
class AutoCheckConstraint:
    """A parsed constraint plus the text it came from.

    Equality compares the parsed expression only, so a constraint round-trips
    through render/parse regardless of the original spelling.
    """

    source: str = field(compare=False)
    expr: ConstraintExpr


class ConstraintParseError(ValueError):
    """Constraint text rejected; carries the byte offset and expectation."""

    def __init__(self, offset: int, expected: str, found: str):
        super().__init__(f"at offset {offset}: expected {expected}, found {found}")
        self.offset = offset
        self.expected = expected
        self.found = found


class ConstraintEvalError(ValueError):
    """A constraint cannot be evaluated against this table's schema."""


class UnknownColumnError(ConstraintEvalError):
    def __init__(self, column: str):
        super().__init__(f"unknown column {column!r}")
        self.column = column


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_RES = (
    ("NUMBER", re.compile(r"\$?-?\d[\d,]*(?:\.\d+)?")),
    ("STRING", re.compile(r'"([^"]*)"')),
    ("BTICK", re.compile(r"`([^`]+)`")),
    ("IDENT", re.compile(r"[A-Za-z_][A-Za-z0-9_]*")),
    ("SYM", re.compile(r"<=|>=|==|!=|[<>():*]")),
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        for kind, regex in _TOKEN_RES:
            m = regex.match(text, pos)
            if m:
                raw = m.group(1) if kind in ("STRING", "BTICK") else m.group(0)
                tokens.append(_Token(kind, raw, pos))
                pos = m.end()
                break
        else:
            raise ConstraintParseError(pos, "a token", repr(text[pos]))
    tokens.append(_Token("EOF", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, expected: str) -> ConstraintParseError:
        tok = self.peek()
        found = "end of input" if tok.kind == "EOF" else repr(tok.text)
        return ConstraintParseError(tok.offset, expected, found)

    def expect_sym(self, sym: str) -> _Token:
        tok = self.peek()
        if tok.kind != "SYM" or tok.text != sym:
            raise self.fail(f"'{sym}'")
        return self.advance()

    def ident(self) -> str:
        tok = self.peek()
        if tok.kind in ("IDENT", "BTICK"):
            return self.advance().text
        raise self.fail("a column name")

    def cmp(self) -> Cmp:
        tok = self.peek()
        if tok.kind == "SYM" and tok.text in Cmp._value2member_map_:
            self.advance()
            return Cmp(tok.text)
        raise self.fail("a comparison operator")

    def number(self) -> Decimal:
        tok = self.peek()
        if tok.kind != "NUMBER":
            raise self.fail("a number")
        self.advance()
        return parse_decimal(tok.text)

    def literal(self) -> Literal:
        tok = self.peek()
        if tok.kind == "NUMBER":
            return self.number()
        if tok.kind == "STRING":
            return self.advance().text
        if tok.kind == "IDENT" and tok.text.lower() in ("true", "false"):
            return self.advance().text.lower() == "true"
        raise self.fail("a number, double-quoted string, true, or false")

    def eof(self) -> None:
        if self.peek().kind != "EOF":
            raise self.fail("end of input")


def parse_constraint(text: str) -> AutoCheckConstraint:
    """Parse one constraint; raises ConstraintParseError with a byte offset."""
    p = _Parser(text)
    head = p.peek()
    if head.kind != "IDENT":
        raise p.fail("a constraint keyword")
    keyword = head.text.lower()

    if keyword in Agg._value2member_map_:
        p.advance()
        agg = Agg(keyword)
        p.expect_sym("(")
        tok = p.peek()
        if tok.kind == "SYM" and tok.text == "*":
            if agg is not Agg.COUNT:
                raise ConstraintParseError(
                    tok.offset, "a column name ('*' is count-only)", "'*'"
                )
            p.advance()
            column = "*"
        else:
            column = p.ident()
        p.expect_sym(")")
        cmp = p.cmp()
        bound = p.number()
        p.eof()
        expr: ConstraintExpr = Aggregate(agg=agg, column=column, cmp=cmp, bound=bound)
    elif keyword == "forall":
        p.advance()
        p.expect_sym(":")
        column = p.ident()
        cmp = p.cmp()
        literal = p.literal()
        p.eof()
        expr = ForAll(column=column, cmp=cmp, literal=literal)
    elif keyword in ("unique", "nonempty"):
        p.advance()
        p.expect_sym("(")
        column = p.ident()
        p.expect_sym(")")
        p.eof()
        expr = Unique(column=column) if keyword == "unique" else NonEmpty(column=column)
    else:
        raise p.fail("one of sum/count/min/max/avg/forall/unique/nonempty")

    return AutoCheckConstraint(source=text, expr=expr)


_PLAIN_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*$")


def _render_ident(name: str) -> str:
    return name if _PLAIN_IDENT.match(name) else f"`{name}`"


def _render_literal(value: Literal) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Decimal):
        return str(value)
    return f'"{value}"'


def render_constraint(constraint: AutoCheckConstraint | ConstraintExpr) -> str:
    """Canonical text for a constraint; parse_constraint(render(c)) == c."""
    expr = constraint.expr if isinstance(constraint, AutoCheckConstraint) else constraint
    if isinstance(expr, Aggregate):
        col = expr.column if expr.column == "*" else _render_ident(expr.column)
        return f"{expr.agg.value}({col}) {expr.cmp.value} {expr.bound}"
    if isinstance(expr, ForAll):
        return (
            f"forall: {_render_ident(expr.column)} {expr.cmp.value} "
            f"{_render_literal(expr.literal)}"
        )
    if isinstance(expr, Unique):
        return f"unique({_render_ident(expr.column)})"
    if isinstance(expr, NonEmpty):
        return f"nonempty({_render_ident(expr.column)})"
    raise TypeError(f"not a constraint expression: {expr!r}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Witness:
    """Explains a failed verdict: the offending rows and/or computed aggregate."""

    row_ids: tuple[str, ...] = ()
    aggregate: Decimal | None = None
    detail: str = ""


@dataclass(frozen=True)
class ConstraintVerdict:
    constraint: AutoCheckConstraint
    satisfied: bool
    witness: Witness | None = None


_AVG_QUANTUM = Decimal("0.000001")


def _compare(cell: Cell, cmp: Cmp, literal: Literal) -> bool:
    """Compare a non-Null cell to a literal; kind mismatches never satisfy."""
    if isinstance(literal, bool):
        if not isinstance(cell, bool):
            return False
        return _CMP_FNS[cmp](cell, literal)
    if isinstance(literal, Decimal):
        if not isinstance(cell, Decimal) or isinstance(cell, bool):
            return False
        return _CMP_FNS[cmp](cell, literal)
    if not isinstance(cell, str):
        return False
    return _CMP_FNS[cmp](cell, literal)


def _column_values(table: ReasoningTable, column: str) -> list[tuple[str, Cell]]:
    col = table.schema.column(column)
    if col is None:
        raise UnknownColumnError(column)
    return [(row.id, row.cells[col.normalized]) for row in table.rows]


def evaluate_constraint(
    constraint: AutoCheckConstraint, table: ReasoningTable
) -> ConstraintVerdict:
    """Evaluate one constraint; deterministic and total for schema-valid tables.

    Raises ConstraintEvalError (notably UnknownColumnError) when the
    constraint does not fit the table's schema.
    """
    expr = constraint.expr

    if isinstance(expr, Aggregate):
        if expr.column == "*":
            value: Decimal | None = Decimal(len(table.rows))
        else:
            pairs = _column_values(table, expr.column)
            present = [(rid, v) for rid, v in pairs if v is not None]
            if expr.agg is Agg.COUNT:
                value = Decimal(len(present))
            else:
                numbers: list[Decimal] = []
                for rid, v in present:
                    if not isinstance(v, Decimal) or isinstance(v, bool):
                        raise ConstraintEvalError(
                            f"{expr.agg.value}() needs a Number column, "
                            f"{expr.column!r} is not"
                        )
                    numbers.append(v)
                if not numbers and expr.agg is Agg.SUM:
                    value = Decimal(0)
                elif not numbers:
                    return ConstraintVerdict(
                        constraint,
                        satisfied=False,
                        witness=Witness(detail="no values to aggregate"),
                    )
                elif expr.agg is Agg.SUM:
                    value = sum(numbers, Decimal(0))
                elif expr.agg is Agg.MIN:
                    value = min(numbers)
                elif expr.agg is Agg.MAX:
                    value = max(numbers)
                else:  # AVG
                    value = (sum(numbers, Decimal(0)) / Decimal(len(numbers))).quantize(
                        _AVG_QUANTUM, rounding=ROUND_HALF_EVEN
                    )
        ok = _CMP_FNS[expr.cmp](value, expr.bound)
        witness = None if ok else Witness(aggregate=value, detail="aggregate value")
        return ConstraintVerdict(constraint, satisfied=ok, witness=witness)

    if isinstance(expr, ForAll):
        offenders = [
            rid
            for rid, v in _column_values(table, expr.column)
            if v is None or not _compare(v, expr.cmp, expr.literal)
        ]
        if offenders:
            return ConstraintVerdict(
                constraint,
                satisfied=False,
                witness=Witness(row_ids=tuple(offenders), detail="rows failing forall"),
            )
        return ConstraintVerdict(constraint, satisfied=True)

    if isinstance(expr, Unique):
        groups: dict[object, list[str]] = {}
        for rid, v in _column_values(table, expr.column):
            if v is None:
                continue
            groups.setdefault(v, []).append(rid)
        dupes = [rid for ids in groups.values() if len(ids) > 1 for rid in ids]
        if dupes:
            return ConstraintVerdict(
                constraint,
                satisfied=False,
                witness=Witness(row_ids=tuple(dupes), detail="duplicate values"),
            )
        return ConstraintVerdict(constraint, satisfied=True)

    if isinstance(expr, NonEmpty):
        offenders = [
            rid
            for rid, v in _column_values(table, expr.column)
            if v is None or (isinstance(v, str) and not v.strip())
        ]
        if offenders:
            return ConstraintVerdict(
                constraint,
                satisfied=False,
                witness=Witness(row_ids=tuple(offenders), detail="null or blank cells"),
            )
        return ConstraintVerdict(constraint, satisfied=True)

    raise TypeError(f"not a constraint expression: {expr!r}")


def evaluate_all(
    constraints: list[AutoCheckConstraint], table: ReasoningTable
) -> tuple[list[ConstraintVerdict], bool]:
    """Evaluate every constraint (verdicts in input order) plus the conjunction.

    A constraint that cannot be evaluated (e.g. unknown column) becomes an
    unsatisfied verdict carrying the reason, rather than aborting the rest.
    """
    verdicts: list[ConstraintVerdict] = []
    for constraint in constraints:
        try:
            verdicts.append(evaluate_constraint(constraint, table))
        except ConstraintEvalError as exc:
            verdicts.append(
                ConstraintVerdict(
                    constraint, satisfied=False, witness=Witness(detail=str(exc))
                )
            )
    return verdicts, all(v.satisfied for v in verdicts)
