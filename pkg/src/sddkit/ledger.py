"""Append-only run records: success criteria, failure taxonomy, storage.

Storage is newline-delimited JSON per run directory plus raw artifact
files alongside, so traces stay auditable and diff-friendly.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

from .workflow import ConfigKind, RunStatus


class FailureCategory(str, Enum):
    BUDGET_TIMEOUT = "budget_timeout"
    HUMAN_CHECKPOINT_TIMEOUT = "human_checkpoint_timeout"
    ARTIFACT_VALIDATION_FAILURE = "artifact_validation_failure"
    EXECUTION_OR_ENVIRONMENT_FAILURE = "execution_or_environment_failure"
    REPOSITORY_CHECK_FAILURE = "repository_check_failure"
    INCOMPLETE_IMPLEMENTATION = "incomplete_implementation"
    RATE_LIMITED_OR_INTERRUPTED = "rate_limited_or_interrupted"


@dataclass(frozen=True)
class Outcome:
    status: str  # success | failure
    category: Optional[FailureCategory] = None

    def __post_init__(self) -> None:
        if self.status == "failure" and self.category is None:
            raise ValueError("failed outcomes need a category")
        if self.status == "success" and self.category is not None:
            raise ValueError("successful outcomes carry no category")


@dataclass(frozen=True)
class PatchInfo:
    branch_name: str
    files_changed: int
    diff_digest: str


@dataclass
class PhaseTrace:
    phase: str
    started_at: float
    ended_at: float
    pre_hook: Optional[dict] = None  # serialized evidence bundle
    post_hook: Optional[dict] = None  # serialized validation report
    agent_turns: list[dict] = field(default_factory=list)


@dataclass(frozen=True)
class CriticalError:
    kind: str  # authentication_failure | tool_permission_violation |
    # backend_exhaustion | orchestrator_panic
    detail: str = ""


@dataclass
class RunRecord:
    run_id: str
    task_id: str
    repo_id: str
    config: ConfigKind
    started_at: float
    ended_at: float
    status: RunStatus
    phase_traces: list[PhaseTrace] = field(default_factory=list)
    patch: Optional[PatchInfo] = None
    checks: list[dict] = field(default_factory=list)  # CheckResult.to_dict()
    rate_limited: bool = False
    checkpoint_timed_out: bool = False
    validation_failed: bool = False
    critical_errors: list[CriticalError] = field(default_factory=list)
    outcome: Optional[Outcome] = None
    judge: Optional[dict] = None  # JudgeVerdict.to_dict(), filled post hoc
    duration_minutes: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "task_id": self.task_id,
            "repo_id": self.repo_id,
            "config": self.config.value,
            "started_at": self.started_at,
            "ended_at": self.ended_at,
            "status": self.status.value,
            "phase_traces": [
                {
                    "phase": t.phase,
                    "started_at": t.started_at,
                    "ended_at": t.ended_at,
                    "pre_hook": t.pre_hook,
                    "post_hook": t.post_hook,
                    "agent_turns": t.agent_turns,
                }
                for t in self.phase_traces
            ],
            "patch": vars(self.patch) if self.patch else None,
            "checks": self.checks,
            "rate_limited": self.rate_limited,
            "checkpoint_timed_out": self.checkpoint_timed_out,
            "validation_failed": self.validation_failed,
            "critical_errors": [vars(e) for e in self.critical_errors],
            "outcome": (
                {
                    "status": self.outcome.status,
                    "category": self.outcome.category.value if self.outcome.category else None,
                }
                if self.outcome
                else None
            ),
            "judge": self.judge,
            "duration_minutes": self.duration_minutes,
        }

    @staticmethod
    def from_dict(data: dict) -> "RunRecord":
        outcome = None
        if data.get("outcome"):
            raw = data["outcome"]
            outcome = Outcome(
                status=raw["status"],
                category=FailureCategory(raw["category"]) if raw.get("category") else None,
            )
        return RunRecord(
            run_id=data["run_id"],
            task_id=data["task_id"],
            repo_id=data["repo_id"],
            config=ConfigKind(data["config"]),
            started_at=data["started_at"],
            ended_at=data["ended_at"],
            status=RunStatus(data["status"]),
            phase_traces=[PhaseTrace(**t) for t in data.get("phase_traces", [])],
            patch=PatchInfo(**data["patch"]) if data.get("patch") else None,
            checks=data.get("checks", []),
            rate_limited=data.get("rate_limited", False),
            checkpoint_timed_out=data.get("checkpoint_timed_out", False),
            validation_failed=data.get("validation_failed", False),
            critical_errors=[CriticalError(**e) for e in data.get("critical_errors", [])],
            outcome=outcome,
            judge=data.get("judge"),
            duration_minutes=data.get("duration_minutes"),
        )


def _checks_passed(record: RunRecord) -> bool:
    return all(c.get("exit_status", 0) == 0 for c in record.checks)


def evaluate_success(record: RunRecord) -> Outcome:
    """Success criteria: completed, a branch+patch artifact with at least
    one file changed, no critical execution errors, checks green."""
    success = (
        record.status is RunStatus.COMPLETED
        and record.patch is not None
        and record.patch.files_changed >= 1
        and not record.critical_errors
        and not record.validation_failed
        and _checks_passed(record)
    )
    if success:
        return Outcome(status="success")
    return Outcome(status="failure", category=classify_failure(record))


def classify_failure(record: RunRecord) -> FailureCategory:
    """First-match precedence: timeouts and interrupts mask downstream
    signals, so they classify first."""
    if record.status is RunStatus.TERMINATED_BUDGET:
        return FailureCategory.BUDGET_TIMEOUT
    if record.checkpoint_timed_out:
        return FailureCategory.HUMAN_CHECKPOINT_TIMEOUT
    if record.rate_limited:
        return FailureCategory.RATE_LIMITED_OR_INTERRUPTED
    if record.critical_errors:
        return FailureCategory.EXECUTION_OR_ENVIRONMENT_FAILURE
    if record.validation_failed or record.status is RunStatus.TERMINATED_CHECKPOINT:
        # An explicit plan rejection is a human verdict that the artifact
        # failed review.
        return FailureCategory.ARTIFACT_VALIDATION_FAILURE
    if not _checks_passed(record):
        return FailureCategory.REPOSITORY_CHECK_FAILURE
    return FailureCategory.INCOMPLETE_IMPLEMENTATION


def latency_eligible(record: RunRecord) -> bool:
    """Only clean successes count toward latency comparisons."""
    return (
        record.outcome is not None
        and record.outcome.status == "success"
        and not record.rate_limited
    )


class DuplicateRunError(Exception):
    pass


class LedgerStore:
    """Run directory layout:

    runs/<run_id>/record.jsonl
    runs/<run_id>/artifacts/{SPEC.md,PLAN.md,TASKS.md}
    runs/<run_id>/patch.diff
    runs/<run_id>/evidence/<phase>.json
    runs/<run_id>/reports/<phase>.json
    """

    def __init__(self, runs_dir: Path) -> None:
        self.runs_dir = Path(runs_dir)
        self.runs_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def run_dir(self, run_id: str) -> Path:
        return self.runs_dir / run_id

    def exists(self, run_id: str) -> bool:
        return (self.run_dir(run_id) / "record.jsonl").exists()

    def append(self, record: RunRecord) -> None:
        with self._lock:
            if self.exists(record.run_id):
                raise DuplicateRunError(record.run_id)
            run_dir = self.run_dir(record.run_id)
            run_dir.mkdir(parents=True, exist_ok=True)
            with open(run_dir / "record.jsonl", "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")

    def save_artifact(self, run_id: str, filename: str, text: str) -> None:
        target = self.run_dir(run_id) / "artifacts" / filename
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")

    def save_patch(self, run_id: str, diff_text: str) -> None:
        run_dir = self.run_dir(run_id)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "patch.diff").write_text(diff_text, encoding="utf-8")

    def save_evidence(self, run_id: str, phase: str, bundle_dict: dict) -> None:
        target = self.run_dir(run_id) / "evidence" / f"{phase}.json"
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(bundle_dict, indent=2, sort_keys=True), encoding="utf-8")

    def save_report(self, run_id: str, phase: str, report_dict: dict) -> None:
        target = self.run_dir(run_id) / "reports" / f"{phase}.json"
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(report_dict, indent=2, sort_keys=True), encoding="utf-8")

    def load(self, run_id: str) -> Optional[RunRecord]:
        path = self.run_dir(run_id) / "record.jsonl"
        if not path.exists():
            return None
        lines = path.read_text(encoding="utf-8").strip().splitlines()
        return RunRecord.from_dict(json.loads(lines[-1])) if lines else None

    def load_artifact(self, run_id: str, kind: str) -> Optional[str]:
        names = {"spec": "SPEC.md", "plan": "PLAN.md", "tasks": "TASKS.md"}
        if kind == "patch":
            path = self.run_dir(run_id) / "patch.diff"
        else:
            path = self.run_dir(run_id) / "artifacts" / names[kind]
        return path.read_text(encoding="utf-8") if path.exists() else None

    def load_report(self, run_id: str, phase: str) -> Optional[dict]:
        path = self.run_dir(run_id) / "reports" / f"{phase}.json"
        return json.loads(path.read_text(encoding="utf-8")) if path.exists() else None

    def query(
        self,
        task_id: Optional[str] = None,
        config: Optional[ConfigKind] = None,
        repo_id: Optional[str] = None,
    ) -> list[RunRecord]:
        records = []
        for record_path in sorted(self.runs_dir.glob("*/record.jsonl")):
            lines = record_path.read_text(encoding="utf-8").strip().splitlines()
            if not lines:
                continue
            record = RunRecord.from_dict(json.loads(lines[-1]))
            if task_id is not None and record.task_id != task_id:
                continue
            if config is not None and record.config is not config:
                continue
            if repo_id is not None and record.repo_id != repo_id:
                continue
            records.append(record)
        return records
