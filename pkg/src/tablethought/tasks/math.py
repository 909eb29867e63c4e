"""Math-answer extraction and comparison for GSM8K/MATH500-style problems.

Answers are either numeric (compared within an absolute tolerance of 1e-6,
with currency signs and thousands commas stripped during parsing) or
normalized expression text (whitespace collapsed, common math delimiters
stripped). Expression comparison is deliberately string-level; symbolic
equivalence is out of scope.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Union

from ..table import Cell, ReasoningTable, TableSchema, parse_decimal
from . import ExtractionError

__all__ = [
    "ExpressionAnswer",
    "MathAnswer",
    "MathProblem",
    "NUMERIC_TOLERANCE",
    "NumericAnswer",
    "PACKAGED_PROBLEMS",
    "answer_from_gold",
    "compare_answers",
    "extract_math_answer",
    "normalize_expression",
    "parse_answer_text",
    "read_corpus",
    "render_answer",
    "robe_fixture_check",
]

NUMERIC_TOLERANCE = Decimal("0.000001")


@dataclass(frozen=True)
class NumericAnswer:
    value: Decimal

    def __post_init__(self) -> None:
        if not self.value.is_finite():
            raise ValueError("numeric answer must be finite")


@dataclass(frozen=True)
class ExpressionAnswer:
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("expression answer must be non-blank")


MathAnswer = Union[NumericAnswer, ExpressionAnswer]

_DELIMITERS = (("$", "$"), ("\\(", "\\)"), ("\\[", "\\]"), ("(", ")"), ("{", "}"))


def normalize_expression(text: str) -> str:
    """Collapse whitespace and strip surrounding math delimiters."""
    out = " ".join(text.split())
    changed = True
    while changed:
        changed = False
        for left, right in _DELIMITERS:
            if out.startswith(left) and out.endswith(right) and len(out) > len(left) + len(right):
                out = out[len(left): len(out) - len(right)].strip()
                changed = True
    return out


def _try_numeric(text: str) -> Decimal | None:
    try:
        return parse_decimal(text)
    except ValueError:
        return None


def parse_answer_text(text: str) -> MathAnswer:
    """Canonical-answer parsing: numeric when the text is one number."""
    normalized = normalize_expression(text)
    numeric = _try_numeric(normalized)
    if numeric is not None:
        return NumericAnswer(numeric)
    if not normalized:
        raise ExtractionError("blank answer text")
    return ExpressionAnswer(normalized)


def answer_from_gold(value) -> MathAnswer:
    """Build an answer from a corpus gold field (number or string)."""
    if isinstance(value, bool):
        raise ValueError("gold answers cannot be booleans")
    if isinstance(value, (int, float, Decimal)):
        return NumericAnswer(Decimal(str(value)))
    return parse_answer_text(str(value))


def render_answer(answer: MathAnswer) -> str:
    if isinstance(answer, NumericAnswer):
        return str(answer.value)
    return answer.text


_BOXED_RE = re.compile(r"\\boxed\{([^{}]*)\}")
_NUMBER_RE = re.compile(r"-?\$?\d[\d,]*(?:\.\d+)?")
_FINAL_ANSWER_COLUMN_RE = re.compile(r"final.*answer")


def _last_sentence(text: str) -> str:
    parts = [p for p in re.split(r"(?<=[.!?])\s+", text.strip()) if p.strip()]
    return parts[-1] if parts else text


def extract_math_answer(
    state: ReasoningTable | str | None, schema: TableSchema | None = None
) -> MathAnswer:
    """Pull the final answer out of a reasoning table or a text draft.

    Table mode prefers a final-answer column (last non-null value), else the
    last row's last Number cell. Text mode prefers the last ``\\boxed{...}``,
    else the last number in the final sentence. Raises ExtractionError when
    nothing qualifies.
    """
    if isinstance(state, ReasoningTable):
        for col in state.schema.columns:
            if _FINAL_ANSWER_COLUMN_RE.search(col.normalized):
                for row in reversed(state.rows):
                    value = row.cells[col.normalized]
                    if value is None:
                        continue
                    return _answer_from_cell(value)
                break
        if not state.rows:
            raise ExtractionError("empty table")
        last = state.rows[-1]
        for col in reversed(state.schema.columns):
            value = last.cells[col.normalized]
            if isinstance(value, Decimal):
                return NumericAnswer(value)
        raise ExtractionError("no final-answer column and no Number cell in last row")

    if isinstance(state, str):
        boxed = _BOXED_RE.findall(state)
        if boxed:
            content = boxed[-1].strip()
            numeric = _try_numeric(content)
            if numeric is not None:
                return NumericAnswer(numeric)
            if content:
                return ExpressionAnswer(normalize_expression(content))
        numbers = _NUMBER_RE.findall(_last_sentence(state))
        if numbers:
            return NumericAnswer(parse_decimal(numbers[-1]))
        raise ExtractionError("no boxed expression or trailing number in text")

    raise ExtractionError("no final state to extract from")


def _answer_from_cell(value: Cell) -> MathAnswer:
    if isinstance(value, Decimal):
        return NumericAnswer(value)
    if isinstance(value, bool):
        return ExpressionAnswer("true" if value else "false")
    text = str(value)
    numeric = _try_numeric(text.strip())
    if numeric is not None:
        return NumericAnswer(numeric)
    normalized = normalize_expression(text)
    if not normalized:
        raise ExtractionError("final-answer cell is blank")
    return ExpressionAnswer(normalized)


def compare_answers(pred: MathAnswer, gold: MathAnswer) -> bool:
    """Numeric answers match within 1e-6; expressions by normalized text.

    A numeric/expression mix matches only if the expression parses as the same
    number.
    """
    if isinstance(pred, NumericAnswer) and isinstance(gold, NumericAnswer):
        return abs(pred.value - gold.value) <= NUMERIC_TOLERANCE
    if isinstance(pred, ExpressionAnswer) and isinstance(gold, ExpressionAnswer):
        return normalize_expression(pred.text) == normalize_expression(gold.text)
    numeric = pred if isinstance(pred, NumericAnswer) else gold
    expr = pred if isinstance(pred, ExpressionAnswer) else gold
    parsed = _try_numeric(normalize_expression(expr.text))
    if parsed is None:
        return False
    return abs(numeric.value - parsed) <= NUMERIC_TOLERANCE


# ---------------------------------------------------------------------------
# Packaged problems (small built-in corpus for tests and demos)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MathProblem:
    id: str
    question: str
    gold: MathAnswer


PACKAGED_PROBLEMS = (
    MathProblem(
        id="robe",
        question=(
            "A robe takes 2 bolts of blue fiber and half that much white "
            "fiber. How many bolts in total does it take?"
        ),
        gold=NumericAnswer(Decimal(3)),
    ),
    MathProblem(
        id="ducks",
        question=(
            "Jamal's phone can hold 6 times more photographs than can "
            "Brittany's phone. The maximum number of photographs that "
            "Brittany's phone can hold is 50 times more than the number of "
            "birds in Jamal's photograph of the ducks at the zoo. If Jamal's "
            "phone can hold 1800 photographs, how many ducks can be seen in "
            "Jamal's photograph of ducks at the zoo?"
        ),
        gold=NumericAnswer(Decimal(6)),
    ),
    MathProblem(
        id="groceries",
        question=(
            "Stephen placed an online order for groceries. His final bill "
            "came to $40.00. Because this was through a delivery vendor, they "
            "tacked on a 25% fee to his final total and charged him $3.00 in "
            "delivery fees. Stephen also added a $4.00 tip. After the extra "
            "fees, what was the final price of Stephen's groceries?"
        ),
        gold=NumericAnswer(Decimal(57)),
    ),
)


def robe_fixture_check() -> None:
    """Recompute the robe answer from first principles and check the fixture."""
    blue = Decimal(2)
    white = blue / 2
    expected = blue + white
    packaged = PACKAGED_PROBLEMS[0]
    assert packaged.id == "robe"
    if not compare_answers(NumericAnswer(expected), packaged.gold):
        raise AssertionError(
            f"packaged robe gold {render_answer(packaged.gold)} != computed {expected}"
        )


def read_corpus(path: str | Path) -> list[MathProblem]:
    """Read a JSONL corpus: one {"id", "question", "gold"} per line."""
    problems: list[MathProblem] = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        doc = json.loads(line)
        problems.append(
            MathProblem(
                id=str(doc["id"]),
                question=str(doc["question"]),
                gold=answer_from_gold(doc["gold"]),
            )
        )
    return problems
