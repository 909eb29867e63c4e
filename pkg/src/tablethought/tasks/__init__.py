"""Task adapters: deterministic parsing, checking, and scoring per benchmark style."""

from __future__ import annotations

__all__ = ["ExtractionError"]


class ExtractionError(ValueError):
    """No final answer could be read out of the reasoning state."""
