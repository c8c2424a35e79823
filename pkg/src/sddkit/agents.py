"""Agent backends, tool dispatch with auditing, and retry policy.

A backend is a turn-based message source: each message either requests a
tool call or finishes the turn with text. The scripted backend replays
canned messages for deterministic tests; the HTTP backend talks to a
chat-completion-style endpoint.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import re
import shlex
import subprocess
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import httpx

from . import probe
from .permissions import (
    PermissionMatrix,
    PermissionViolation,
    Principal,
    ToolId,
    check_permission,
)
from .probe import Repo
from .workflow import Clock, Phase

REDACTION_BYTE_LIMIT = 16 * 1024


class TransportError(Exception):
    """Transient backend transport failure; retried per BackoffPolicy."""


class RateLimitSignal(TransportError):
    """Throttling response; retried, and the run is marked rate-limited."""


class BackendExhausted(Exception):
    """Retries exhausted; a critical execution error for the run."""


@dataclass(frozen=True)
class BackoffPolicy:
    base_delay: float = 1.0
    multiplier: float = 2.0
    max_retries: int = 3
    jitter: float = 0.0

    def __post_init__(self) -> None:
        if self.base_delay <= 0:
            raise ValueError("base_delay must be positive")
        if self.multiplier < 1:
            raise ValueError("multiplier must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if not 0 <= self.jitter <= 1:
            raise ValueError("jitter must be within [0, 1]")


def next_delay(
    policy: BackoffPolicy, attempt: int, rng: Optional[random.Random] = None
) -> float:
    """Delay before retry number `attempt` (0-based): base * multiplier^attempt,
    spread by +/- jitter fraction."""
    if attempt > policy.max_retries:
        raise BackendExhausted(f"attempt {attempt} exceeds max_retries {policy.max_retries}")
    delay = policy.base_delay * policy.multiplier**attempt
    if policy.jitter:
        rng = rng or random.Random()
        delay *= 1 + policy.jitter * (2 * rng.random() - 1)
    return delay


@dataclass(frozen=True)
class ToolRequest:
    tool: ToolId
    arguments: dict


@dataclass(frozen=True)
class FinalResponse:
    text: str


BackendMessage = "ToolRequest | FinalResponse"


class Backend:
    """Turn-based backend contract."""

    id: str = "backend"

    def next_message(self, role: str, phase: Phase, turn_index: int, prompt: str):
        raise NotImplementedError


class ScriptedBackend(Backend):
    """Replays canned messages keyed by (phase, turn index).

    Scripts map phase name -> list of messages. A message is either
    {"tool": name, "arguments": {...}} or {"final": text}. Optional
    {"transport_error": true} and {"rate_limit": true} entries simulate
    transient failures.
    """

    def __init__(self, script: dict[str, list[dict]], backend_id: str = "scripted") -> None:
        self.id = backend_id
        self._script = script
        self._cursor: dict[str, int] = {}

    def next_message(self, role: str, phase: Phase, turn_index: int, prompt: str):
        key = f"{role}:{phase.value}"
        messages = self._script.get(key, self._script.get(phase.value, []))
        idx = self._cursor.get(key, 0)
        if idx >= len(messages):
            return FinalResponse("")
        self._cursor[key] = idx + 1
        msg = messages[idx]
        if msg.get("transport_error"):
            raise TransportError("scripted transport failure")
        if msg.get("rate_limit"):
            raise RateLimitSignal("scripted rate limit")
        if "tool" in msg:
            return ToolRequest(tool=ToolId(msg["tool"]), arguments=dict(msg.get("arguments", {})))
        return FinalResponse(msg.get("final", ""))


_TOOL_BLOCK_RE = re.compile(r"```tool\s*\n(.*?)\n```", re.DOTALL)


class HttpBackend(Backend):
    """Chat-completion-style HTTP backend.

    Endpoint, credential, and model come from the environment:
    SDDKIT_BACKEND_URL, SDDKIT_BACKEND_TOKEN, SDDKIT_BACKEND_MODEL.
    A response whose body contains a fenced ```tool block with a JSON
    {"tool", "arguments"} object is a tool request; anything else is final.
    """

    def __init__(
        self,
        base_url: Optional[str] = None,
        model: Optional[str] = None,
        token: Optional[str] = None,
        backend_id: str = "http",
        timeout: float = 120.0,
    ) -> None:
        self.id = backend_id
        self.base_url = base_url or os.environ.get("SDDKIT_BACKEND_URL", "")
        self.model = model or os.environ.get("SDDKIT_BACKEND_MODEL", "")
        self.token = token or os.environ.get("SDDKIT_BACKEND_TOKEN", "")
        self.timeout = timeout

    def next_message(self, role: str, phase: Phase, turn_index: int, prompt: str):
        if not self.base_url:
            raise TransportError("no backend URL configured")
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        try:
            response = httpx.post(
                f"{self.base_url.rstrip('/')}/v1/chat/completions",
                json={
                    "model": self.model,
                    "messages": [{"role": "user", "content": prompt}],
                },
                headers=headers,
                timeout=self.timeout,
            )
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if response.status_code == 429:
            raise RateLimitSignal("rate limited by backend")
        if response.status_code >= 500:
            raise TransportError(f"backend returned {response.status_code}")
        if response.status_code != 200:
            raise BackendExhausted(f"backend returned {response.status_code}")
        text = response.json()["choices"][0]["message"]["content"]
        block = _TOOL_BLOCK_RE.search(text)
        if block:
            try:
                payload = json.loads(block.group(1))
                return ToolRequest(ToolId(payload["tool"]), dict(payload.get("arguments", {})))
            except (json.JSONDecodeError, KeyError, ValueError):
                pass
        return FinalResponse(text)


@dataclass(frozen=True)
class ToolCallRecord:
    principal: Principal
    tool: ToolId
    arguments: dict
    started_at: float
    duration: float
    outcome: str  # ok | error | denied
    output_digest: str = ""
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "principal": self.principal.value,
            "tool": self.tool.value,
            "arguments": self.arguments,
            "started_at": self.started_at,
            "duration": self.duration,
            "outcome": self.outcome,
            "output_digest": self.output_digest,
            "detail": self.detail,
        }


@dataclass
class AgentTurn:
    principal: Principal
    phase: Phase
    prompt_digest: str
    response_text: str = ""
    tool_calls: list[ToolCallRecord] = field(default_factory=list)
    produced_artifact: Optional[str] = None
    retries: int = 0
    rate_limited: bool = False


def _digest(data: Any) -> str:
    if isinstance(data, bytes):
        raw = data
    elif isinstance(data, str):
        raw = data.encode("utf-8", errors="replace")
    else:
        raw = repr(data).encode("utf-8", errors="replace")
    return hashlib.sha256(raw).hexdigest()


def redact_arguments(arguments: dict) -> dict:
    """Hash oversized string values so ledgers stay bounded."""
    redacted = {}
    for key, value in arguments.items():
        if isinstance(value, str) and len(value.encode("utf-8")) > REDACTION_BYTE_LIMIT:
            redacted[key] = f"sha256:{_digest(value.encode('utf-8'))}"
        else:
            redacted[key] = value
    return redacted


def _safe_repo_path(repo: Repo, rel: str) -> Any:
    target = (repo.root / rel).resolve()
    root = repo.root.resolve()
    if not str(target).startswith(str(root) + os.sep) and target != root:
        raise ValueError(f"path escapes the working copy: {rel}")
    return target


def _execute_tool(tool: ToolId, arguments: dict, repo: Repo) -> Any:
    if tool is ToolId.READ_FILE:
        return _safe_repo_path(repo, arguments["path"]).read_text(encoding="utf-8")
    if tool is ToolId.GLOB:
        return probe.glob_files(repo, arguments["pattern"])
    if tool is ToolId.GREP:
        return probe.grep(repo, arguments["pattern"], arguments.get("scope"))
    if tool is ToolId.GIT_INSPECT:
        return probe.history(repo, arguments.get("path"), int(arguments.get("limit", 20)))
    if tool is ToolId.READ_MANIFEST:
        return probe.read_manifests(repo)
    if tool is ToolId.WRITE_FILE:
        target = _safe_repo_path(repo, arguments["path"])
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(arguments["content"], encoding="utf-8")
        return {"written": arguments["path"]}
    if tool is ToolId.APPLY_PATCH:
        proc = subprocess.run(
            ["git", "apply", "--whitespace=nowarn", "-"],
            cwd=repo.root,
            input=arguments["patch"].encode("utf-8"),
            capture_output=True,
            check=False,
        )
        if proc.returncode != 0:
            raise RuntimeError(f"patch failed: {proc.stderr.decode(errors='replace')}")
        return {"applied": True}
    if tool is ToolId.EXEC_COMMAND:
        proc = subprocess.run(
            shlex.split(arguments["command"]),
            cwd=repo.root,
            capture_output=True,
            timeout=float(arguments.get("timeout", 300.0)),
            check=False,
        )
        return {
            "exit_status": proc.returncode,
            "stdout": proc.stdout.decode("utf-8", errors="replace")[-4096:],
            "stderr": proc.stderr.decode("utf-8", errors="replace")[-4096:],
        }
    raise ValueError(f"unknown tool: {tool}")  # pragma: no cover - closed enum


def dispatch_tool(
    matrix: PermissionMatrix,
    principal: Principal,
    tool: ToolId,
    arguments: dict,
    repo: Repo,
    clock: Optional[Clock] = None,
) -> tuple[ToolCallRecord, Any]:
    """Permission check, then execution against the run's working copy.

    A denied call is recorded with no side effects; the caller decides
    whether denial is fatal for the run.
    """
    clock = clock or Clock()
    started = clock.now()
    decision = check_permission(matrix, principal, tool, arguments)
    if not decision.allowed:
        record = ToolCallRecord(
            principal=principal,
            tool=tool,
            arguments=redact_arguments(arguments),
            started_at=started,
            duration=0.0,
            outcome="denied",
            detail=decision.reason or "",
        )
        return record, None
    t0 = time.monotonic()
    try:
        result = _execute_tool(tool, arguments, repo)
        outcome, detail = "ok", ""
    except Exception as exc:
        result, outcome, detail = None, "error", str(exc)
    record = ToolCallRecord(
        principal=principal,
        tool=tool,
        arguments=redact_arguments(arguments),
        started_at=started,
        duration=time.monotonic() - t0,
        outcome=outcome,
        output_digest=_digest(result) if result is not None else "",
        detail=detail,
    )
    return record, result


Sleeper = Callable[[float], None]


def invoke_agent(
    backend: Backend,
    principal: Principal,
    phase: Phase,
    prompt: str,
    matrix: PermissionMatrix,
    repo: Repo,
    clock: Optional[Clock] = None,
    backoff: BackoffPolicy = BackoffPolicy(),
    sleep: Sleeper = time.sleep,
    rng: Optional[random.Random] = None,
    max_turns: int = 64,
) -> AgentTurn:
    """Drive one agent turn: loop on tool requests until a final response.

    Transport failures retry per the backoff policy; exhaustion raises
    BackendExhausted. A denied tool call raises PermissionViolation after
    being recorded on the turn.
    """
    turn = AgentTurn(principal=principal, phase=phase, prompt_digest=_digest(prompt))
    for turn_index in range(max_turns):
        message = _next_with_retries(backend, principal, phase, turn_index, prompt, turn,
                                     backoff, sleep, rng)
        if isinstance(message, FinalResponse):
            turn.response_text = message.text
            return turn
        record, _ = dispatch_tool(matrix, principal, message.tool, message.arguments,
                                  repo, clock)
        turn.tool_calls.append(record)
        if record.outcome == "denied":
            raise PermissionViolationForTurn(turn, message.tool, record.detail)
    turn.response_text = ""
    return turn


class PermissionViolationForTurn(PermissionViolation):
    """Permission violation carrying the partially recorded turn."""

    def __init__(self, turn: AgentTurn, tool: ToolId, reason: str) -> None:
        super().__init__(turn.principal, tool, reason)
        self.turn = turn


def _next_with_retries(
    backend: Backend,
    principal: Principal,
    phase: Phase,
    turn_index: int,
    prompt: str,
    turn: AgentTurn,
    backoff: BackoffPolicy,
    sleep: Sleeper,
    rng: Optional[random.Random],
):
    attempt = 0
    while True:
        try:
            return backend.next_message(principal.value, phase, turn_index, prompt)
        except TransportError as exc:
            if isinstance(exc, RateLimitSignal):
                turn.rate_limited = True
            if attempt >= backoff.max_retries:
                raise BackendExhausted(str(exc)) from exc
            sleep(next_delay(backoff, attempt, rng))
            attempt += 1
            turn.retries += 1
