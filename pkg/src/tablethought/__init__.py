"""Table-structured reasoning for language models.

The package centers on a reasoning loop that keeps model "thoughts" in a
schema-validated table: columns are designed per query, rows accumulate
through reflection, and machine-checkable constraints plus the model's own
verdict gate termination. Deterministic task harnesses (calendar scheduling,
travel-plan validation, math answer checking) and a batch evaluator round it
out; the ``tat`` CLI drives everything.
"""

from .constraints import (
    AutoCheckConstraint,
    ConstraintParseError,
    ConstraintVerdict,
    evaluate_all,
    evaluate_constraint,
    parse_constraint,
    render_constraint,
)
from .engine import (
    Method,
    MethodConfig,
    RunTrace,
    TaskKind,
    VerificationVerdict,
    run,
)
from .table import (
    ColumnKind,
    ColumnSpec,
    ReasoningTable,
    Row,
    TableSchema,
    apply_operations,
    coerce_cell,
    validate_row,
)

__version__ = "0.1.0"

__all__ = [
    "AutoCheckConstraint",
    "ColumnKind",
    "ColumnSpec",
    "ConstraintParseError",
    "ConstraintVerdict",
    "Method",
    "MethodConfig",
    "ReasoningTable",
    "Row",
    "RunTrace",
    "TableSchema",
    "TaskKind",
    "VerificationVerdict",
    "apply_operations",
    "coerce_cell",
    "evaluate_all",
    "evaluate_constraint",
    "parse_constraint",
    "render_constraint",
    "run",
    "validate_row",
    "__version__",
]
