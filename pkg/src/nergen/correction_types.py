"""Directive vocabulary shared by the response parser and the corrector."""
from __future__ import annotations

from dataclasses import dataclass

KEEP = "keep"
DROP = "drop"
REVISE_SPAN = "revise_span"
REVISE_TYPE = "revise_type"

ACTIONS = (KEEP, DROP, REVISE_SPAN, REVISE_TYPE)


@dataclass(frozen=True)
class ParsedAction:
    """One model verdict for one correction item, before target binding."""

    action: str
    value: str | None = None

    def __post_init__(self) -> None:
        if self.action not in ACTIONS:
            raise ValueError(f"unknown correction action {self.action!r}")
        needs_value = self.action in (REVISE_SPAN, REVISE_TYPE)
        if needs_value and not self.value:
            raise ValueError(f"{self.action} requires a value")
        if not needs_value and self.value is not None:
            raise ValueError(f"{self.action} takes no value")


@dataclass(frozen=True)
class CorrectionDirective:
    """A verdict bound to one annotation of one sample."""

    sample_id: int
    annotation_index: int
    action: str
    value: str | None = None

    def __post_init__(self) -> None:
        ParsedAction(self.action, self.value)
        if self.sample_id < 0 or self.annotation_index < 0:
            raise ValueError("directive target indices must be >= 0")
