"""Post-phase validation: artifact checks, repo check execution, repair loop."""

from __future__ import annotations

import re
import shlex
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from .artifacts import ArtifactSet, ChangeKind, PlanDoc, SpecDoc, TaskList
from .probe import Authorizer, DependencyRecord, Repo
from .reports import Finding, FindingCategory, Location, Severity, ValidationReport
from .workflow import Phase

# Revision turns granted after a failed post-hook before the run is
# classified as an artifact-validation failure.
DEFAULT_REPAIR_TURNS = 2


def validate_spec(spec: SpecDoc) -> ValidationReport:
    """Structural check plus a keyword-overlap heuristic (info only)."""
    findings: list[Finding] = []
    for msg in spec.invariant_errors():
        findings.append(Finding(Severity.ERROR, FindingCategory.STRUCTURAL, msg))
    criteria_words = set()
    for criterion in spec.acceptance_criteria:
        criteria_words.update(_words(criterion))
    for requirement in spec.requirements:
        if not _words(requirement) & criteria_words:
            findings.append(
                Finding(
                    Severity.INFO,
                    FindingCategory.STRUCTURAL,
                    f"no acceptance criterion shares keywords with requirement: {requirement!r}",
                )
            )
    return ValidationReport(phase=Phase.SPECIFY.value, findings=findings)


_WORD_RE = re.compile(r"[a-z0-9_]{3,}")


def _words(text: str) -> set[str]:
    return set(_WORD_RE.findall(text.lower()))


def validate_plan(
    plan: PlanDoc, repo: Repo, manifests: list[DependencyRecord]
) -> ValidationReport:
    """Referential check of touchpoints and dependencies against the repo."""
    findings: list[Finding] = []
    for msg in plan.invariant_errors():
        findings.append(Finding(Severity.ERROR, FindingCategory.STRUCTURAL, msg))

    created_earlier: set[str] = set()
    for tp in plan.touchpoints:
        target = repo.resolve(tp.path)
        if tp.change_kind in (ChangeKind.MODIFY, ChangeKind.DELETE):
            if not target.exists():
                findings.append(
                    Finding(
                        Severity.ERROR,
                        FindingCategory.PATH_MISSING,
                        f"{tp.change_kind.value} touchpoint targets a missing path: {tp.path}",
                        location=Location(tp.path),
                    )
                )
        else:  # CREATE
            if target.exists():
                findings.append(
                    Finding(
                        Severity.WARNING,
                        FindingCategory.PATH_MISSING,
                        f"create touchpoint targets an existing path: {tp.path}",
                        location=Location(tp.path),
                    )
                )
            parent = str(Path(tp.path).parent.as_posix())
            parent_created = any(
                c == parent or c.startswith(parent + "/") for c in created_earlier
            )
            if parent not in (".",) and not repo.resolve(parent).is_dir() and not parent_created:
                findings.append(
                    Finding(
                        Severity.ERROR,
                        FindingCategory.PATH_MISSING,
                        f"create touchpoint parent directory does not exist: {parent}",
                        location=Location(tp.path),
                    )
                )
            created_earlier.add(tp.path)

    available = {(m.ecosystem, m.name.lower()) for m in manifests}
    for dep in plan.dependencies:
        if dep.ecosystem.value == "other":
            continue  # no manifest parser for this ecosystem
        if (dep.ecosystem.value, dep.name.lower()) not in available:
            findings.append(
                Finding(
                    Severity.ERROR,
                    FindingCategory.DEPENDENCY_MISSING,
                    f"dependency {dep.name} ({dep.ecosystem.value}) not found in any manifest",
                )
            )
    return ValidationReport(phase=Phase.PLAN.value, findings=findings)


def find_cycle(tasks: TaskList) -> Optional[list[str]]:
    """A dependency cycle as a list of task ids, or None."""
    graph = {t.id: [d for d in t.depends_on] for t in tasks.tasks}
    color: dict[str, int] = {}  # 0 unvisited, 1 on stack, 2 done
    stack: list[str] = []

    def visit(node: str) -> Optional[list[str]]:
        color[node] = 1
        stack.append(node)
        for dep in graph.get(node, []):
            if dep not in graph:
                continue
            state = color.get(dep, 0)
            if state == 1:
                return stack[stack.index(dep):] + [dep]
            if state == 0:
                cycle = visit(dep)
                if cycle:
                    return cycle
        stack.pop()
        color[node] = 2
        return None

    for tid in graph:
        if color.get(tid, 0) == 0:
            cycle = visit(tid)
            if cycle:
                return cycle
    return None


_PATHISH_RE = re.compile(r"[\w./-]*/[\w./-]+|\b[\w-]+\.(?:py|js|ts|tsx|md|yaml|yml|json|toml)\b")


def validate_tasks(tasks: TaskList, plan: Optional[PlanDoc] = None) -> ValidationReport:
    """Feasibility and ordering: cycles and out-of-order dependencies are
    errors; task paths absent from the plan are warnings."""
    findings: list[Finding] = []
    for msg in tasks.invariant_errors():
        findings.append(Finding(Severity.ERROR, FindingCategory.STRUCTURAL, msg))
    if findings:
        return ValidationReport(phase=Phase.TASKS.value, findings=findings)

    cycle = find_cycle(tasks)
    if cycle:
        findings.append(
            Finding(
                Severity.ERROR,
                FindingCategory.TASK_INFEASIBLE,
                "dependency cycle: " + " -> ".join(cycle),
            )
        )
    else:
        position = {t.id: i for i, t in enumerate(tasks.tasks)}
        for task in tasks.tasks:
            for dep in task.depends_on:
                if position[dep] > position[task.id]:
                    findings.append(
                        Finding(
                            Severity.ERROR,
                            FindingCategory.ORDERING_VIOLATION,
                            f"task {task.id} is listed before its dependency {dep}",
                        )
                    )

    if plan is not None:
        plan_paths = {tp.path for tp in plan.touchpoints}
        for task in tasks.tasks:
            for ref in _PATHISH_RE.findall(task.description):
                if ref not in plan_paths:
                    findings.append(
                        Finding(
                            Severity.WARNING,
                            FindingCategory.PATH_MISSING,
                            f"task {task.id} references a path absent from the plan: {ref}",
                        )
                    )
    return ValidationReport(phase=Phase.TASKS.value, findings=findings)


@dataclass(frozen=True)
class CheckSpec:
    command: str
    kind: str  # test | lint
    timeout_seconds: float = 300.0


@dataclass(frozen=True)
class CheckResult:
    command: str
    exit_status: int
    duration: float
    stdout_tail: str
    stderr_tail: str
    kind: str
    timed_out: bool = False

    def to_dict(self) -> dict:
        return dict(vars(self))


TAIL_BYTE_CAP = 4096
TIMEOUT_EXIT_STATUS = -1


def run_repo_checks(
    repo: Repo,
    checks: list[CheckSpec],
    authorizer: Optional[Authorizer] = None,
    tail_cap: int = TAIL_BYTE_CAP,
) -> list[CheckResult]:
    """Execute configured checks in the repo root. Results are data; a
    timeout records TIMEOUT_EXIT_STATUS instead of raising."""
    results = []
    for check in checks:
        if authorizer is not None:
            authorizer("exec_command", {"command": check.command})
        start = time.monotonic()
        try:
            proc = subprocess.run(
                shlex.split(check.command),
                cwd=repo.root,
                capture_output=True,
                timeout=check.timeout_seconds,
                check=False,
            )
            exit_status, timed_out = proc.returncode, False
            stdout, stderr = proc.stdout, proc.stderr
        except subprocess.TimeoutExpired as exc:
            exit_status, timed_out = TIMEOUT_EXIT_STATUS, True
            stdout = exc.stdout or b""
            stderr = exc.stderr or b""
        except (OSError, ValueError) as exc:
            exit_status, timed_out = 127, False  # command not runnable
            stdout, stderr = b"", str(exc).encode()
        duration = time.monotonic() - start
        results.append(
            CheckResult(
                command=check.command,
                exit_status=exit_status,
                duration=duration,
                stdout_tail=stdout[-tail_cap:].decode("utf-8", errors="replace"),
                stderr_tail=stderr[-tail_cap:].decode("utf-8", errors="replace"),
                kind=check.kind,
                timed_out=timed_out,
            )
        )
    return results


def checks_report(results: list[CheckResult]) -> ValidationReport:
    """Fold check results into implement-phase findings."""
    findings = []
    for result in results:
        if result.exit_status != 0:
            detail = "timed out" if result.timed_out else f"exit {result.exit_status}"
            findings.append(
                Finding(
                    Severity.ERROR,
                    FindingCategory.CHECK_FAILED,
                    f"{result.kind} command failed ({detail}): {result.command}",
                )
            )
    return ValidationReport(phase=Phase.IMPLEMENT.value, findings=findings)


RepairFn = Callable[[Phase, ValidationReport], Optional[ArtifactSet]]


def run_post_hook(
    phase: Phase,
    artifacts: ArtifactSet,
    repo: Repo,
    manifests: list[DependencyRecord],
    checks: list[CheckSpec],
    repair: Optional[RepairFn] = None,
    max_repairs: int = DEFAULT_REPAIR_TURNS,
    authorizer: Optional[Authorizer] = None,
) -> tuple[ValidationReport, list[ValidationReport], ArtifactSet]:
    """Dispatch the phase validator, with up to `max_repairs` revision turns.

    Returns (final report, all reports oldest-first, possibly revised
    artifacts). A persistent fail is the caller's signal to classify the run
    as an artifact-validation failure.
    """
    reports: list[ValidationReport] = []
    current = artifacts
    for attempt in range(max_repairs + 1):
        report = _validate_phase(phase, current, repo, manifests, checks, authorizer)
        reports.append(report)
        if report.passed or repair is None or attempt == max_repairs:
            return report, reports, current
        revised = repair(phase, report)
        if revised is None:
            return report, reports, current
        current = revised
    return reports[-1], reports, current  # pragma: no cover


def _validate_phase(
    phase: Phase,
    artifacts: ArtifactSet,
    repo: Repo,
    manifests: list[DependencyRecord],
    checks: list[CheckSpec],
    authorizer: Optional[Authorizer],
) -> ValidationReport:
    if phase is Phase.SPECIFY:
        if artifacts.spec is None:
            return _missing(phase, "spec")
        return validate_spec(artifacts.spec)
    if phase is Phase.PLAN:
        if artifacts.plan is None:
            return _missing(phase, "plan")
        return validate_plan(artifacts.plan, repo, manifests)
    if phase is Phase.TASKS:
        if artifacts.tasks is None:
            return _missing(phase, "tasks")
        return validate_tasks(artifacts.tasks, artifacts.plan)
    results = run_repo_checks(repo, checks, authorizer=authorizer)
    return checks_report(results)


def _missing(phase: Phase, kind: str) -> ValidationReport:
    return ValidationReport(
        phase=phase.value,
        findings=[
            Finding(
                Severity.ERROR,
                FindingCategory.STRUCTURAL,
                f"no {kind} artifact was produced for the {phase.value} phase",
            )
        ],
    )
