"""Validation findings and reports shared by validators and hooks."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"
    INFO = "info"


class FindingCategory(str, Enum):
    PATH_MISSING = "path_missing"
    DEPENDENCY_MISSING = "dependency_missing"
    TASK_INFEASIBLE = "task_infeasible"
    ORDERING_VIOLATION = "ordering_violation"
    CHECK_FAILED = "check_failed"
    STRUCTURAL = "structural"


@dataclass(frozen=True)
class Location:
    path: str
    line: Optional[int] = None


@dataclass(frozen=True)
class Finding:
    severity: Severity
    category: FindingCategory
    message: str
    location: Optional[Location] = None


class Verdict(str, Enum):
    PASS = "pass"
    FAIL = "fail"


@dataclass
class ValidationReport:
    """Post-phase findings. Verdict is fail iff any error-severity finding."""

    phase: str
    findings: list[Finding] = field(default_factory=list)

    @property
    def verdict(self) -> Verdict:
        if any(f.severity is Severity.ERROR for f in self.findings):
            return Verdict.FAIL
        return Verdict.PASS

    @property
    def passed(self) -> bool:
        return self.verdict is Verdict.PASS

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "verdict": self.verdict.value,
            "findings": [
                {
                    "severity": f.severity.value,
                    "category": f.category.value,
                    "message": f.message,
                    "location": (
                        {"path": f.location.path, "line": f.location.line}
                        if f.location
                        else None
                    ),
                }
                for f in self.findings
            ],
        }

    @staticmethod
    def from_dict(data: dict) -> "ValidationReport":
        findings = [
            Finding(
                severity=Severity(f["severity"]),
                category=FindingCategory(f["category"]),
                message=f["message"],
                location=(
                    Location(f["location"]["path"], f["location"].get("line"))
                    if f.get("location")
                    else None
                ),
            )
            for f in data.get("findings", [])
        ]
        return ValidationReport(phase=data["phase"], findings=findings)
