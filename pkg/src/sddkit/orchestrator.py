"""End-to-end run driver: phases, hooks, agents, checkpoint, patch, ledger."""

from __future__ import annotations

import hashlib
import subprocess
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import artifacts as art
from .agents import (
    AgentTurn,
    Backend,
    BackendExhausted,
    BackoffPolicy,
    PermissionViolationForTurn,
    invoke_agent,
)
from .artifacts import ArtifactSet, ARTIFACT_FOR_PHASE
from .events import CheckpointGate, RunHandle, RunRegistry
from .ledger import (
    CriticalError,
    LedgerStore,
    PatchInfo,
    PhaseTrace,
    RunRecord,
    evaluate_success,
)
from .permissions import (
    PermissionMatrix,
    PermissionViolation,
    Principal,
    ToolId,
    check_permission,
    default_matrix,
)
from .probe import EvidenceCaps, Repo, discover, read_manifests
from .prompts import PromptLibrary, artifact_mapping, render
from .reports import Finding, FindingCategory, Severity, ValidationReport
from .validation import (
    CheckSpec,
    DEFAULT_REPAIR_TURNS,
    checks_report,
    run_repo_checks,
    validate_plan,
    validate_spec,
    validate_tasks,
)
from .workflow import (
    Budget,
    BudgetStatus,
    CheckpointState,
    Clock,
    ConfigKind,
    Event,
    Phase,
    RunStatus,
    WorkflowState,
    advance,
    budget_for,
    check_budget,
    hook_schedule_for,
    initial_state,
    phases_for,
)

ARTIFACT_FILENAMES = {"spec": "SPEC.md", "plan": "PLAN.md", "tasks": "TASKS.md"}
DEFAULT_CHECKPOINT_TIMEOUT = 600.0  # seconds


@dataclass
class RunSettings:
    run_id: str
    task_id: str
    repo_id: str
    task_description: str
    config: ConfigKind
    repo_path: Path
    checks: list[CheckSpec] = field(default_factory=list)
    auto_approve: bool = True
    checkpoint_timeout: float = DEFAULT_CHECKPOINT_TIMEOUT
    budget: Optional[Budget] = None
    backoff: BackoffPolicy = BackoffPolicy()
    caps: EvidenceCaps = EvidenceCaps()
    repair_turns: int = DEFAULT_REPAIR_TURNS


def _hook_authorizer(matrix: PermissionMatrix, principal: Principal, recorder):
    """Route a hook's probe calls through the permission layer."""

    def authorize(tool: str, arguments: dict) -> None:
        tool_id = ToolId(tool)
        decision = check_permission(matrix, principal, tool_id, arguments)
        recorder(principal, tool_id, arguments, decision.allowed, decision.reason or "")
        if not decision.allowed:
            raise PermissionViolation(principal, tool_id, decision.reason or "denied")

    return authorize


class Orchestrator:
    """Drives one run at a time; instances are cheap, one per run is fine."""

    def __init__(
        self,
        store: LedgerStore,
        backend: Backend,
        clock: Optional[Clock] = None,
        matrix: Optional[PermissionMatrix] = None,
        prompt_library: Optional[PromptLibrary] = None,
        registry: Optional[RunRegistry] = None,
    ) -> None:
        self.store = store
        self.backend = backend
        self.clock = clock or Clock()
        self.matrix = matrix
        self.prompts = prompt_library or PromptLibrary()
        self.registry = registry or RunRegistry()

    # -- public entry ------------------------------------------------------

    def execute_run(self, settings: RunSettings) -> RunRecord:
        handle = self.registry.create(settings.run_id)
        matrix = self.matrix or default_matrix(
            tuple(c.command for c in settings.checks)
        )
        repo = Repo(settings.repo_path)
        budget = settings.budget or budget_for(settings.config)
        schedule = hook_schedule_for(settings.config)
        started = self.clock.now()
        state = initial_state(settings.config, started)
        handle.update_state(state)

        record = RunRecord(
            run_id=settings.run_id,
            task_id=settings.task_id,
            repo_id=settings.repo_id,
            config=settings.config,
            started_at=started,
            ended_at=started,
            status=RunStatus.RUNNING,
        )
        artifacts = ArtifactSet()
        base_ref = _git_base(repo)

        try:
            while state.status is RunStatus.RUNNING:
                state = self._run_phase(
                    settings, state, schedule, budget, matrix, repo,
                    artifacts, record, handle,
                )
                handle.update_state(state)
        except PermissionViolationForTurn as exc:
            record.critical_errors.append(
                CriticalError(kind="tool_permission_violation", detail=exc.reason)
            )
            state = advance(state, Event.fatal_error(), self.clock.now())
        except PermissionViolation as exc:
            record.critical_errors.append(
                CriticalError(kind="tool_permission_violation", detail=exc.reason)
            )
            state = advance(state, Event.fatal_error(), self.clock.now())
        except BackendExhausted as exc:
            record.critical_errors.append(
                CriticalError(kind="backend_exhaustion", detail=str(exc))
            )
            state = advance(state, Event.fatal_error(), self.clock.now())

        handle.update_state(state)
        record.status = state.status
        record.ended_at = self.clock.now()
        record.duration_minutes = (record.ended_at - record.started_at) / 60.0
        self._collect_patch(settings, repo, base_ref, record)
        record.outcome = evaluate_success(record)
        self.store.append(record)
        handle.done = True
        handle.events.emit(
            "terminal",
            {
                "status": state.status.value,
                "outcome": record.outcome.status,
                "category": (
                    record.outcome.category.value if record.outcome.category else None
                ),
            },
        )
        return record

    # -- phase driver ------------------------------------------------------

    def _run_phase(
        self,
        settings: RunSettings,
        state: WorkflowState,
        schedule,
        budget: Budget,
        matrix: PermissionMatrix,
        repo: Repo,
        artifacts: ArtifactSet,
        record: RunRecord,
        handle: RunHandle,
    ) -> WorkflowState:
        phase = state.phase
        assert phase is not None
        flags = schedule.get(phase)
        trace = PhaseTrace(
            phase=phase.value, started_at=self.clock.now(), ended_at=self.clock.now()
        )
        record.phase_traces.append(trace)
        handle.events.emit("phase_started", {"phase": phase.value})

        evidence_text = ""
        if flags and flags.pre:
            bundle = self._pre_hook(settings, phase, matrix, repo, artifacts, trace)
            evidence_text = bundle.to_prompt_text()
            handle.events.emit("hook_completed", {"phase": phase.value, "hook": "pre"})

        over = check_budget(state, budget, self.clock.now())
        if over is not BudgetStatus.OK:
            return advance(state, Event.budget_exceeded(), self.clock.now())

        turn = self._agent_turn(settings, phase, matrix, repo, artifacts, evidence_text, "")
        trace.agent_turns.append(_turn_dict(turn))
        if turn.rate_limited:
            record.rate_limited = True
        self._absorb_artifact(settings, phase, turn, artifacts)

        over = check_budget(state, budget, self.clock.now())
        if over is not BudgetStatus.OK:
            trace.ended_at = self.clock.now()
            return advance(state, Event.budget_exceeded(), self.clock.now())

        if phase is Phase.IMPLEMENT:
            self._implement_checks(settings, phase, flags, matrix, repo, artifacts,
                                   record, trace, handle, evidence_text)
        elif flags and flags.post:
            self._post_hook(settings, phase, matrix, repo, artifacts, record, trace,
                            handle, evidence_text)

        trace.ended_at = self.clock.now()

        over = check_budget(state, budget, self.clock.now())
        if over is not BudgetStatus.OK:
            return advance(state, Event.budget_exceeded(), self.clock.now())

        next_state = advance(
            state, Event.phase_completed(), self.clock.now(), auto_approve=settings.auto_approve
        )
        handle.events.emit("phase_completed", {"phase": phase.value})
        if next_state.checkpoint is CheckpointState.PENDING_PLAN_REVIEW:
            next_state = self._await_checkpoint(settings, next_state, record, handle)
        return next_state

    def _await_checkpoint(
        self,
        settings: RunSettings,
        state: WorkflowState,
        record: RunRecord,
        handle: RunHandle,
    ) -> WorkflowState:
        gate = CheckpointGate()
        handle.gate = gate
        handle.update_state(state)
        handle.events.emit("checkpoint_pending", {"phase": Phase.PLAN.value})
        decision = gate.wait(settings.checkpoint_timeout)
        if decision is None:
            record.checkpoint_timed_out = True
            handle.events.emit("checkpoint_decided", {"decision": "timeout"})
            return advance(state, Event.checkpoint_decision(False), self.clock.now())
        handle.events.emit(
            "checkpoint_decided", {"decision": "approve" if decision else "reject"}
        )
        return advance(state, Event.checkpoint_decision(decision), self.clock.now())

    # -- hooks and turns ---------------------------------------------------

    def _pre_hook(self, settings, phase, matrix, repo, artifacts, trace):
        calls: list[dict] = []

        def recorder(principal, tool, arguments, allowed, reason):
            calls.append(
                {
                    "principal": principal.value,
                    "tool": tool.value,
                    "allowed": allowed,
                    "reason": reason,
                }
            )

        authorizer = _hook_authorizer(matrix, Principal.DISCOVERY_HOOK, recorder)
        bundle = discover(
            repo,
            phase,
            settings.task_description,
            artifacts=artifacts,
            caps=settings.caps,
            now=self.clock.now(),
            authorizer=authorizer,
        )
        trace.pre_hook = {"bundle": bundle.to_dict(), "tool_calls": calls}
        self.store.save_evidence(settings.run_id, phase.value, bundle.to_dict())
        return bundle

    def _agent_turn(
        self, settings, phase, matrix, repo, artifacts, evidence_text, findings_text
    ) -> AgentTurn:
        template = self.prompts.phase_prompt(phase)
        mapping = {
            "task": settings.task_description,
            "evidence": evidence_text,
            "findings": findings_text,
            **artifact_mapping(artifacts),
        }
        prompt = render(template, mapping)
        principal = (
            Principal.DEVELOPER_AGENT if phase is Phase.IMPLEMENT else Principal.PM_AGENT
        )
        return invoke_agent(
            self.backend,
            principal,
            phase,
            prompt,
            matrix,
            repo,
            clock=self.clock,
            backoff=settings.backoff,
        )

    def _absorb_artifact(self, settings, phase, turn: AgentTurn, artifacts: ArtifactSet):
        kind = ARTIFACT_FOR_PHASE.get(phase)
        if kind is None or not turn.response_text.strip():
            return
        self.store.save_artifact(
            settings.run_id, ARTIFACT_FILENAMES[kind], turn.response_text
        )
        try:
            doc = art.PARSERS[kind](turn.response_text)
        except art.ArtifactParseError:
            return  # unparseable artifact surfaces through validation
        setattr(artifacts, kind, doc)
        turn.produced_artifact = kind

    def _validate(self, phase, artifacts, repo) -> ValidationReport:
        if phase is Phase.SPECIFY:
            if artifacts.spec is None:
                return _missing_artifact_report(phase, "spec")
            return validate_spec(artifacts.spec)
        if phase is Phase.PLAN:
            if artifacts.plan is None:
                return _missing_artifact_report(phase, "plan")
            return validate_plan(artifacts.plan, repo, read_manifests(repo))
        if artifacts.tasks is None:
            return _missing_artifact_report(phase, "tasks")
        return validate_tasks(artifacts.tasks, artifacts.plan)

    def _post_hook(
        self, settings, phase, matrix, repo, artifacts, record, trace, handle,
        evidence_text,
    ) -> None:
        report = self._validate(phase, artifacts, repo)
        for _ in range(settings.repair_turns):
            if report.passed:
                break
            findings_text = _findings_text(report)
            turn = self._agent_turn(
                settings, phase, matrix, repo, artifacts, evidence_text, findings_text
            )
            trace.agent_turns.append(_turn_dict(turn))
            if turn.rate_limited:
                record.rate_limited = True
            self._absorb_artifact(settings, phase, turn, artifacts)
            report = self._validate(phase, artifacts, repo)
        trace.post_hook = report.to_dict()
        self.store.save_report(settings.run_id, phase.value, report.to_dict())
        handle.events.emit("hook_completed", {"phase": phase.value, "hook": "post"})
        if not report.passed:
            record.validation_failed = True

    def _implement_checks(
        self, settings, phase, flags, matrix, repo, artifacts, record, trace, handle,
        evidence_text,
    ) -> None:
        """Repository checks always run after implement; with a post hook
        enabled, failures grant repair turns and count as hook output."""
        authorizer = None
        calls: list[dict] = []
        if settings.checks:
            def recorder(principal, tool, arguments, allowed, reason):
                calls.append(
                    {
                        "principal": principal.value,
                        "tool": tool.value,
                        "allowed": allowed,
                        "reason": reason,
                    }
                )
            authorizer = _hook_authorizer(matrix, Principal.VALIDATION_HOOK, recorder)

        results = run_repo_checks(repo, settings.checks, authorizer=authorizer)
        report = checks_report(results)
        if flags and flags.post:
            for _ in range(settings.repair_turns):
                if report.passed:
                    break
                turn = self._agent_turn(
                    settings, phase, matrix, repo, artifacts, evidence_text,
                    _findings_text(report),
                )
                trace.agent_turns.append(_turn_dict(turn))
                if turn.rate_limited:
                    record.rate_limited = True
                results = run_repo_checks(repo, settings.checks, authorizer=authorizer)
                report = checks_report(results)
            trace.post_hook = report.to_dict() | {"tool_calls": calls}
            self.store.save_report(settings.run_id, phase.value, report.to_dict())
            handle.events.emit("hook_completed", {"phase": phase.value, "hook": "post"})
            if not report.passed:
                record.validation_failed = True
        record.checks = [r.to_dict() for r in results]

    # -- patch artifact ----------------------------------------------------

    def _collect_patch(self, settings, repo: Repo, base_ref: Optional[str], record) -> None:
        if base_ref is None:
            return
        branch = f"run/{settings.run_id}"
        _git(repo, "checkout", "-B", branch)
        _git(repo, "add", "-A")
        diff = _git(repo, "diff", "--cached", base_ref)
        names = _git(repo, "diff", "--cached", "--name-only", base_ref)
        files_changed = len([n for n in (names or "").splitlines() if n.strip()])
        if files_changed == 0:
            return
        _git(
            repo,
            "-c", "user.name=sddkit", "-c", "user.email=sddkit@localhost",
            "commit", "-m", f"run {settings.run_id}",
        )
        self.store.save_patch(settings.run_id, diff or "")
        record.patch = PatchInfo(
            branch_name=branch,
            files_changed=files_changed,
            diff_digest=hashlib.sha256((diff or "").encode()).hexdigest(),
        )


def _missing_artifact_report(phase: Phase, kind: str) -> ValidationReport:
    return ValidationReport(
        phase=phase.value,
        findings=[
            Finding(
                Severity.ERROR,
                FindingCategory.STRUCTURAL,
                f"no parseable {kind} artifact was produced",
            )
        ],
    )


def _findings_text(report) -> str:
    return "\n".join(
        f"- [{f.severity.value}] {f.category.value}: {f.message}" for f in report.findings
    )


def _turn_dict(turn: AgentTurn) -> dict:
    return {
        "principal": turn.principal.value,
        "phase": turn.phase.value,
        "prompt_digest": turn.prompt_digest,
        "response_text": turn.response_text[:4096],
        "tool_calls": [c.to_dict() for c in turn.tool_calls],
        "produced_artifact": turn.produced_artifact,
        "retries": turn.retries,
        "rate_limited": turn.rate_limited,
    }


def _git(repo: Repo, *args: str) -> Optional[str]:
    proc = subprocess.run(
        ["git", *args], cwd=repo.root, capture_output=True, text=True, check=False
    )
    if proc.returncode != 0:
        return None
    return proc.stdout


def _git_base(repo: Repo) -> Optional[str]:
    head = _git(repo, "rev-parse", "HEAD")
    return head.strip() if head else None


def new_run_id(task_id: str, config: ConfigKind) -> str:
    return f"{task_id}__{config.value}__{uuid.uuid4().hex[:8]}"
