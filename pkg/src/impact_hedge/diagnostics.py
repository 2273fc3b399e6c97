"""Diagnostic report types shared by model checks and run diagnostics.

Diagnostics never raise: every check result is an issue on the report.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

MAX_ISSUES = 200


class DiagnosticIssue(BaseModel):
    """A single check failure located on the (t, x, z) lattice."""

    model_config = ConfigDict(frozen=True)

    code: str
    field: str
    message: str
    severity: Literal["error", "warning"]


class DiagnosticReport(BaseModel):
    """Result of the standing-assumption checks on a model."""

    model_config = ConfigDict(frozen=True)

    is_valid: bool
    convex: bool
    elliptic: bool
    positive_vol: bool
    zero_generator_at_zero: bool
    bounded_below: bool
    gamma_bound_infinite: bool
    gamma_bound_min: float
    checked_points: int
    issues: list[DiagnosticIssue] = Field(default_factory=list)
    truncated_issues: int = 0

    def codes(self) -> set[str]:
        return {issue.code for issue in self.issues}


class IssueCollector:
    """Accumulates issues up to MAX_ISSUES, counting the overflow."""

    def __init__(self, limit: int = MAX_ISSUES) -> None:
        self._limit = limit
        self.issues: list[DiagnosticIssue] = []
        self.truncated = 0
        self._codes: set[str] = set()

    def add(self, code: str, field: str, message: str, severity: Literal["error", "warning"] = "error") -> None:
        self._codes.add(code)
        if len(self.issues) >= self._limit:
            self.truncated += 1
            return
        self.issues.append(DiagnosticIssue(code=code, field=field, message=message, severity=severity))

    def has(self, code: str) -> bool:
        return code in self._codes
