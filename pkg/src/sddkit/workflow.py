"""Orchestrator state machine: phase sequencing, checkpoints, budgets.

A run walks an ordered list of phases determined by its configuration.
Timestamps are injected (never sampled inside transitions) so budget logic
is testable with a simulated clock.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional


class Phase(str, Enum):
    SPECIFY = "specify"
    PLAN = "plan"
    TASKS = "tasks"
    IMPLEMENT = "implement"


PHASE_ORDER: list[Phase] = [Phase.SPECIFY, Phase.PLAN, Phase.TASKS, Phase.IMPLEMENT]


class ConfigKind(str, Enum):
    BASELINE = "baseline"
    AUGMENTED = "augmented"
    FULL = "full"
    FULL_AUGMENTED = "full_augmented"
    DISCOVERY_ONLY = "discovery_only"
    VALIDATION_ONLY = "validation_only"


# Direct-to-implementation configurations run under the short budget;
# the staged ones run under the long budget.
SHORT_BUDGET_FAMILY = frozenset({ConfigKind.BASELINE, ConfigKind.AUGMENTED})


def phases_for(config: ConfigKind) -> list[Phase]:
    """Ordered phase list for a configuration."""
    if config in SHORT_BUDGET_FAMILY:
        return [Phase.IMPLEMENT]
    return list(PHASE_ORDER)


@dataclass(frozen=True)
class HookFlags:
    pre: bool = False
    post: bool = False


def hook_schedule_for(config: ConfigKind) -> dict[Phase, HookFlags]:
    """Which discovery (pre) and validation (post) hooks run at each phase."""
    phases = phases_for(config)
    if config in (ConfigKind.BASELINE, ConfigKind.FULL):
        flags = {p: HookFlags(False, False) for p in phases}
    elif config == ConfigKind.AUGMENTED:
        flags = {Phase.IMPLEMENT: HookFlags(True, True)}
    elif config == ConfigKind.FULL_AUGMENTED:
        flags = {p: HookFlags(True, True) for p in phases}
    elif config == ConfigKind.DISCOVERY_ONLY:
        flags = {p: HookFlags(True, False) for p in phases}
    elif config == ConfigKind.VALIDATION_ONLY:
        flags = {p: HookFlags(False, True) for p in phases}
    else:  # pragma: no cover - closed enum
        raise ValueError(f"unknown configuration: {config}")
    return flags


# Default per-phase limits (minutes). The implement phase dominates cost.
_STAGED_PHASE_LIMITS = {
    Phase.SPECIFY: 10.0,
    Phase.PLAN: 15.0,
    Phase.TASKS: 10.0,
    Phase.IMPLEMENT: 55.0,
}
_DIRECT_PHASE_LIMITS = {Phase.IMPLEMENT: 40.0}


@dataclass(frozen=True)
class Budget:
    """Wall-clock limits in minutes: one total, one per phase."""

    total_limit: float
    per_phase_limit: dict[Phase, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.total_limit <= 0:
            raise ValueError("total_limit must be positive")
        for phase, limit in self.per_phase_limit.items():
            if limit <= 0:
                raise ValueError(f"per-phase limit for {phase.value} must be positive")
        if sum(self.per_phase_limit.values()) > self.total_limit:
            raise ValueError("per-phase limits exceed the total budget")


def budget_for(
    config: ConfigKind,
    overrides: Optional[dict[Phase, float]] = None,
    total_override: Optional[float] = None,
) -> Budget:
    """Built-in budget for a configuration, with optional per-run overrides."""
    if config in SHORT_BUDGET_FAMILY:
        total, per_phase = 40.0, dict(_DIRECT_PHASE_LIMITS)
    else:
        total, per_phase = 90.0, dict(_STAGED_PHASE_LIMITS)
    if total_override is not None:
        total = total_override
    if overrides:
        per_phase.update(overrides)
    per_phase = {p: per_phase[p] for p in phases_for(config)}
    return Budget(total_limit=total, per_phase_limit=per_phase)


class CheckpointState(str, Enum):
    NONE = "none"
    PENDING_PLAN_REVIEW = "pending_plan_review"
    APPROVED = "approved"
    REJECTED = "rejected"


class RunStatus(str, Enum):
    RUNNING = "running"
    COMPLETED = "completed"
    TERMINATED_BUDGET = "terminated_budget"
    TERMINATED_CHECKPOINT = "terminated_checkpoint"
    FAILED = "failed"


TERMINAL_STATUSES = frozenset(
    {
        RunStatus.COMPLETED,
        RunStatus.TERMINATED_BUDGET,
        RunStatus.TERMINATED_CHECKPOINT,
        RunStatus.FAILED,
    }
)


class EventKind(str, Enum):
    PHASE_COMPLETED = "phase_completed"
    CHECKPOINT_DECISION = "checkpoint_decision"
    BUDGET_EXCEEDED = "budget_exceeded"
    FATAL_ERROR = "fatal_error"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    approve: Optional[bool] = None  # only for CHECKPOINT_DECISION

    @staticmethod
    def phase_completed() -> "Event":
        return Event(EventKind.PHASE_COMPLETED)

    @staticmethod
    def checkpoint_decision(approve: bool) -> "Event":
        return Event(EventKind.CHECKPOINT_DECISION, approve=approve)

    @staticmethod
    def budget_exceeded() -> "Event":
        return Event(EventKind.BUDGET_EXCEEDED)

    @staticmethod
    def fatal_error() -> "Event":
        return Event(EventKind.FATAL_ERROR)


@dataclass(frozen=True)
class WorkflowState:
    config: ConfigKind
    phase: Optional[Phase]
    started_at: float
    phase_started_at: float
    checkpoint: CheckpointState = CheckpointState.NONE
    status: RunStatus = RunStatus.RUNNING

    @property
    def terminal(self) -> bool:
        return self.status in TERMINAL_STATUSES


def initial_state(config: ConfigKind, now: float) -> WorkflowState:
    return WorkflowState(
        config=config,
        phase=phases_for(config)[0],
        started_at=now,
        phase_started_at=now,
    )


class IllegalEventError(Exception):
    """An event that the current state cannot legally receive.

    Signals an orchestrator bug, not a run failure.
    """


def advance(
    state: WorkflowState,
    event: Event,
    now: float,
    auto_approve: bool = True,
) -> WorkflowState:
    """Apply one event to the state machine and return the successor state.

    Deterministic: identical (state, event, now, auto_approve) yield
    identical successors. Plan review applies only to staged configurations.
    """
    if state.terminal:
        # Late budget/fatal signals race benignly against termination.
        if event.kind in (EventKind.BUDGET_EXCEEDED, EventKind.FATAL_ERROR):
            return state
        raise IllegalEventError(f"event {event.kind.value} on terminal state {state.status.value}")

    if event.kind == EventKind.BUDGET_EXCEEDED:
        return replace(state, status=RunStatus.TERMINATED_BUDGET)
    if event.kind == EventKind.FATAL_ERROR:
        return replace(state, status=RunStatus.FAILED)

    phases = phases_for(state.config)

    if event.kind == EventKind.CHECKPOINT_DECISION:
        if state.checkpoint is not CheckpointState.PENDING_PLAN_REVIEW:
            raise IllegalEventError("checkpoint decision without a pending checkpoint")
        if event.approve:
            next_phase = phases[phases.index(Phase.PLAN) + 1]
            return replace(
                state,
                checkpoint=CheckpointState.APPROVED,
                phase=next_phase,
                phase_started_at=now,
            )
        return replace(
            state,
            checkpoint=CheckpointState.REJECTED,
            status=RunStatus.TERMINATED_CHECKPOINT,
        )

    if event.kind == EventKind.PHASE_COMPLETED:
        if state.phase is None:
            raise IllegalEventError("phase_completed with no active phase")
        idx = phases.index(state.phase)
        if state.phase is phases[-1]:
            return replace(state, status=RunStatus.COMPLETED)
        if state.phase is Phase.PLAN and state.config not in SHORT_BUDGET_FAMILY:
            if auto_approve:
                return replace(
                    state,
                    checkpoint=CheckpointState.APPROVED,
                    phase=phases[idx + 1],
                    phase_started_at=now,
                )
            return replace(state, checkpoint=CheckpointState.PENDING_PLAN_REVIEW)
        return replace(state, phase=phases[idx + 1], phase_started_at=now)

    raise IllegalEventError(f"unhandled event kind {event.kind}")  # pragma: no cover


class BudgetStatus(str, Enum):
    OK = "ok"
    PHASE_EXCEEDED = "phase_exceeded"
    TOTAL_EXCEEDED = "total_exceeded"


def check_budget(state: WorkflowState, budget: Budget, now: float) -> BudgetStatus:
    """Compare elapsed wall clock against the budget. Total takes precedence."""
    if (now - state.started_at) / 60.0 > budget.total_limit:
        return BudgetStatus.TOTAL_EXCEEDED
    if state.phase is not None:
        phase_limit = budget.per_phase_limit.get(state.phase)
        if phase_limit is not None and (now - state.phase_started_at) / 60.0 > phase_limit:
            return BudgetStatus.PHASE_EXCEEDED
    return BudgetStatus.OK


class Clock:
    """Injectable time source. Production uses the wall clock."""

    def now(self) -> float:
        return time.time()


class SimClock(Clock):
    """Manually advanced clock for tests."""

    def __init__(self, start: float = 0.0) -> None:
        self._now = start

    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> None:
        self._now += seconds

    def advance_minutes(self, minutes: float) -> None:
        self._now += minutes * 60.0
