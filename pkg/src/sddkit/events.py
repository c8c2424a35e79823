"""Per-run event streams and live-run handles for the service layer."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Optional

from .workflow import WorkflowState


@dataclass(frozen=True)
class RunEvent:
    seq: int
    run_id: str
    kind: str  # phase_started | phase_completed | hook_completed |
    # checkpoint_pending | checkpoint_decided | terminal
    payload: dict

    def to_dict(self) -> dict:
        return {"seq": self.seq, "run_id": self.run_id, "kind": self.kind, **self.payload}


class RunEventLog:
    """Append-only event sequence per run; replayable from sequence 0."""

    def __init__(self, run_id: str) -> None:
        self.run_id = run_id
        self._events: list[RunEvent] = []
        self._lock = threading.Lock()

    def emit(self, kind: str, payload: Optional[dict] = None) -> RunEvent:
        with self._lock:
            event = RunEvent(
                seq=len(self._events), run_id=self.run_id, kind=kind, payload=payload or {}
            )
            self._events.append(event)
            return event

    def since(self, seq: int = 0) -> list[RunEvent]:
        with self._lock:
            return self._events[seq:]


class CheckpointGate:
    """Blocking handoff for one plan-review decision."""

    def __init__(self) -> None:
        self._event = threading.Event()
        self._lock = threading.Lock()
        self.decision: Optional[bool] = None  # True approve, False reject
        self.decided_by: Optional[str] = None

    @property
    def decided(self) -> bool:
        return self._event.is_set()

    def decide(self, approve: bool, decided_by: str = "") -> bool:
        """Deliver a decision; returns False if one was already recorded."""
        with self._lock:
            if self._event.is_set():
                return False
            self.decision = approve
            self.decided_by = decided_by
            self._event.set()
            return True

    def wait(self, timeout: Optional[float]) -> Optional[bool]:
        if self._event.wait(timeout):
            return self.decision
        return None


@dataclass
class RunHandle:
    """Live view of one run shared with the service API."""

    run_id: str
    events: RunEventLog
    state: Optional[WorkflowState] = None
    gate: Optional[CheckpointGate] = None
    done: bool = False

    lock: threading.Lock = field(default_factory=threading.Lock)

    def update_state(self, state: WorkflowState) -> None:
        with self.lock:
            self.state = state


class RunRegistry:
    """Process-local registry of live and completed run handles."""

    def __init__(self) -> None:
        self._handles: dict[str, RunHandle] = {}
        self._lock = threading.Lock()

    def create(self, run_id: str) -> RunHandle:
        with self._lock:
            handle = RunHandle(run_id=run_id, events=RunEventLog(run_id))
            self._handles[run_id] = handle
            return handle

    def get(self, run_id: str) -> Optional[RunHandle]:
        with self._lock:
            return self._handles.get(run_id)

    def all(self) -> list[RunHandle]:
        with self._lock:
            return list(self._handles.values())
