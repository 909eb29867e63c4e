"""Versioned prompt templates.

Each template has a stable id recorded in run traces, so a persisted trace
names exactly the prompt text that produced every call. Bump the version
suffix when editing a template; never edit in place under the same id.
"""

from __future__ import annotations

__all__ = ["PROMPTS", "prompt"]

_SYSTEM_TABLE = (
    "You reason by filling in a table. Rows are individual reasoning steps; "
    "columns capture the information and constraints each step must track. "
    "Respond only with the requested JSON object."
)

_SYSTEM_TEXT = (
    "You are a careful reasoner. Respond only with the requested JSON object."
)

PROMPTS: dict[str, str] = {
    "system/table/v1": _SYSTEM_TABLE,
    "system/text/v1": _SYSTEM_TEXT,
    "constraint-extraction/v1": (
        "Read the query below and list every constraint a correct answer must "
        "satisfy, both those stated explicitly and those implied by common "
        "sense. State each constraint as one short sentence.\n\n"
        "Query:\n{query}"
    ),
    "schema-design/v1": (
        "Design a table schema for working through the query below. Columns "
        "must cover every piece of information needed to satisfy the "
        "constraints listed. Give each column a name, a kind (Text, Number, "
        "or Boolean), and a short description.{style_hint}\n\n"
        "Constraints:\n{constraints}\n\nQuery:\n{query}"
    ),
    "schema-design-autocheck/v1": (
        "Design a table schema for working through the query below. Columns "
        "must cover every piece of information needed to satisfy the "
        "constraints listed. Give each column a name, a kind (Text, Number, "
        "or Boolean), and a short description.{style_hint}\n"
        "Also propose machine-checkable rules over the table, one per line, "
        "using exactly this grammar: sum|count|min|max|avg(COLUMN) CMP NUMBER, "
        "forall: COLUMN CMP literal, unique(COLUMN), nonempty(COLUMN), where "
        "CMP is one of <= < >= > == !=. Example: sum(Cost) <= 1400.\n\n"
        "Constraints:\n{constraints}\n\nQuery:\n{query}"
    ),
    "schema-design-math/v1": (
        "Design a table schema for solving the problem below step by step. "
        "Columns should track the quantities and intermediate results the "
        "solution needs, and include a final-answer column.{style_hint}\n\n"
        "Problem:\n{query}"
    ),
    "reflect-table/v1": (
        "Current reasoning table (JSON):\n{table}\n\n"
        "Query:\n{query}\n\n"
        "Issues from the last check:\n{issues}\n\n"
        "Propose the next table edits as a list of operations. Each operation "
        "has op (insert, update, or delete), id (the row id), and cells (one "
        "value per column; use null where a value is unknown or, for updates, "
        "unchanged). Insert new reasoning steps, update wrong entries, delete "
        "entries that no longer belong. Return an empty list if the table "
        "already answers the query."
    ),
    "reflect-table-noschema/v1": (
        "Current reasoning table (JSON):\n{table}\n\n"
        "Query:\n{query}\n\n"
        "Issues from the last check:\n{issues}\n\n"
        "Build whatever table helps you answer the query. Propose edits as "
        "operations with op (insert, update, or delete), id (the row id), and "
        "cells (an object mapping column names to text values)."
    ),
    "reflect-text/v1": (
        "Current reasoning:\n{text}\n\n"
        "Query:\n{query}\n\n"
        "Issues from the last check:\n{issues}\n\n"
        "Revise the reasoning: fix mistakes, fill gaps, and finish with a "
        "clear final answer. Return the full revised reasoning."
    ),
    "verify-table/v1": (
        "Reasoning table (JSON):\n{table}\n\n"
        "Query:\n{query}\n\n"
        "Constraints to verify:\n{constraints}\n\n"
        "Is this table a complete and correct answer to the query, satisfying "
        "every constraint? Report sufficient=true only if nothing is missing "
        "or wrong; otherwise list each issue."
    ),
    "verify-text/v1": (
        "Reasoning:\n{text}\n\n"
        "Query:\n{query}\n\n"
        "Is this reasoning complete and correct, ending in a final answer to "
        "the query? Report sufficient=true only if nothing is missing or "
        "wrong; otherwise list each issue."
    ),
    "direct/v1": "Answer the query.\n\nQuery:\n{query}",
    "cot/v1": (
        "Think step by step, then answer the query. Show your reasoning and "
        "end with the final answer.\n\nQuery:\n{query}"
    ),
    "style/one-row/v1": (
        " Use a single-row design: one row summarises the whole solution, "
        "with one column per piece of information."
    ),
    "style/multi-row/v1": (
        " Use a multi-row design: one row per entity or per reasoning step, "
        "so the table grows as the reasoning proceeds."
    ),
}


def prompt(prompt_id: str) -> str:
    """Look up a template by id; KeyError for unknown ids."""
    return PROMPTS[prompt_id]
