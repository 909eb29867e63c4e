from __future__ import annotations

import json
from pathlib import Path

import pytest

from tablethought.table import ReasoningTable, load_table

FIXTURES = Path(__file__).parent / "fixtures"

# The one-row calendar table used by the recorded end-to-end run: headers and
# values as in the reference transcript.
C1_ROW_CELLS = {
    "Meeting Duration": "30 minutes",
    "Work Hours Start": "9:00",
    "Work Hours End": "17:00",
    "Roy's Unavailable Times": "9:00-9:30, 10:00-10:30, 11:00-11:30, 12:30-13:00",
    "Kathryn's Unavailable Times": "9:30-10:00, 16:30-17:00",
    "Amy's Unavailable Times": "9:00-14:30, 15:00-16:00, 16:30-17:00",
    "Amy's Preference": "Prefers not to meet after 15:30",
    "Proposed Meeting Time": "14:30-15:00",
}

# Column headers the no-schema-design ablation is expected to produce.
NOSCHEMA_HEADERS = ("Participant", "Available Time Slots", "Selected Meeting Time")


@pytest.fixture(scope="session")
def c1_query() -> str:
    return (FIXTURES / "c1_query.txt").read_text()


@pytest.fixture(scope="session")
def c2_query() -> str:
    return (FIXTURES / "c2_query.txt").read_text()


@pytest.fixture(scope="session")
def b1_table() -> ReasoningTable:
    return load_table((FIXTURES / "b1_table.json").read_text())


@pytest.fixture(scope="session")
def b2_table() -> ReasoningTable:
    return load_table((FIXTURES / "b2_table.json").read_text())


# ---------------------------------------------------------------------------
# Scripted-call builders
# ---------------------------------------------------------------------------


def constraints_call(*constraints: str) -> dict:
    return {"payload": {"constraints": list(constraints)}}


def schema_call(*names: str, kinds: dict[str, str] | None = None) -> dict:
    kinds = kinds or {}
    return {
        "payload": {
            "columns": [
                {"name": name, "kind": kinds.get(name, "Text")} for name in names
            ]
        }
    }


def insert_call(rows: dict[str, dict]) -> dict:
    """One reflect payload inserting the given rows (id -> cells)."""
    return {
        "payload": {
            "operations": [
                {"op": "insert", "id": row_id, "cells": cells}
                for row_id, cells in rows.items()
            ]
        }
    }


def empty_ops_call() -> dict:
    return {"payload": {"operations": []}}


def verify_call(sufficient: bool, issues: list[str] | None = None) -> dict:
    return {"payload": {"sufficient": sufficient, "issues": issues or []}}


def c1_run_calls() -> list[dict]:
    """The recorded table-method run that rebuilds the one-row calendar table."""
    return [
        constraints_call(
            "The meeting lasts 30 minutes within 9:00 to 17:00 on Monday",
            "The slot must avoid every participant's blocked times",
            "Amy prefers not to meet after 15:30",
        ),
        schema_call(*C1_ROW_CELLS.keys()),
        insert_call({"1": dict(C1_ROW_CELLS)}),
        verify_call(True),
    ]


def noschema_run_calls() -> list[dict]:
    """The no-schema-design ablation run over the same query."""
    rows = {
        "1": {
            "Participant": "Roy",
            "Available Time Slots": "9:30-10:00, 10:30-11:00, 11:30-12:30, 13:00-17:00",
            "Selected Meeting Time": "14:30-15:00",
        },
        "2": {
            "Participant": "Kathryn",
            "Available Time Slots": "9:00-9:30, 10:00-16:30",
            "Selected Meeting Time": "14:30-15:00",
        },
        "3": {
            "Participant": "Amy",
            "Available Time Slots": "14:30-15:00, 16:00-16:30",
            "Selected Meeting Time": "14:30-15:00",
        },
    }
    return [insert_call(rows), verify_call(True)]


@pytest.fixture(scope="session")
def c1_fixture_file(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("scripted") / "c1_run.json"
    path.write_text(json.dumps({"calls": c1_run_calls()}, indent=2))
    return path
