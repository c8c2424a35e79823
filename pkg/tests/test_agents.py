import hashlib
import json
import random
import subprocess
from pathlib import Path

import pytest

from sddkit.agents import (
    AgentTurn,
    BackendExhausted,
    BackoffPolicy,
    FinalResponse,
    PermissionViolationForTurn,
    RateLimitSignal,
    ScriptedBackend,
    ToolRequest,
    TransportError,
    dispatch_tool,
    invoke_agent,
    next_delay,
    redact_arguments,
)
from sddkit.permissions import Principal, ToolId, default_matrix
from sddkit.probe import Repo
from sddkit.workflow import Phase


@pytest.fixture
def work_repo(tmp_path: Path) -> Repo:
    (tmp_path / "src").mkdir()
    (tmp_path / "src" / "a.py").write_text("value = 1\n")
    subprocess.run(["git", "init", "-q"], cwd=tmp_path, check=True)
    return Repo(tmp_path)


MATRIX = default_matrix(("true",))


# -- backoff ------------------------------------------------------------------

def test_next_delay_deterministic_without_jitter():
    policy = BackoffPolicy(base_delay=1.0, multiplier=2.0, max_retries=3, jitter=0.0)
    assert next_delay(policy, 0) == 1.0
    assert next_delay(policy, 1) == 2.0
    assert next_delay(policy, 3) == 8.0


def test_next_delay_jitter_bounds():
    policy = BackoffPolicy(base_delay=1.0, multiplier=2.0, max_retries=3, jitter=0.5)
    rng = random.Random(0)
    for _ in range(200):
        delay = next_delay(policy, 1, rng)
        assert 1.0 <= delay <= 3.0


def test_backoff_policy_validation():
    with pytest.raises(ValueError):
        BackoffPolicy(base_delay=0.0)
    with pytest.raises(ValueError):
        BackoffPolicy(multiplier=0.5)
    with pytest.raises(ValueError):
        BackoffPolicy(jitter=1.5)


# -- scripted backend -----------------------------------------------------------

def test_scripted_backend_sequences_messages():
    backend = ScriptedBackend({
        "pm_agent:specify": [
            {"tool": "read_file", "arguments": {"path": "src/a.py"}},
            {"final": "# Spec\n"},
        ],
    })
    first = backend.next_message("pm_agent", Phase.SPECIFY, 0, "")
    assert isinstance(first, ToolRequest) and first.tool is ToolId.READ_FILE
    second = backend.next_message("pm_agent", Phase.SPECIFY, 1, "")
    assert isinstance(second, FinalResponse) and second.text == "# Spec\n"
    # exhausted scripts fall back to an empty final response
    assert isinstance(backend.next_message("pm_agent", Phase.SPECIFY, 2, ""), FinalResponse)


def test_scripted_backend_phase_fallback_key():
    backend = ScriptedBackend({"plan": [{"final": "x"}]})
    msg = backend.next_message("pm_agent", Phase.PLAN, 0, "")
    assert isinstance(msg, FinalResponse) and msg.text == "x"


# -- dispatch ---------------------------------------------------------------------

def test_dispatch_denied_has_no_side_effects(work_repo):
    target = work_repo.root / "src" / "a.py"
    before = target.read_text()
    record, result = dispatch_tool(
        MATRIX, Principal.PM_AGENT, ToolId.WRITE_FILE,
        {"path": "src/a.py", "content": "clobbered"}, work_repo,
    )
    assert record.outcome == "denied"
    assert result is None
    assert target.read_text() == before


def test_dispatch_write_and_read(work_repo):
    record, result = dispatch_tool(
        MATRIX, Principal.DEVELOPER_AGENT, ToolId.WRITE_FILE,
        {"path": "src/new.py", "content": "y = 2\n"}, work_repo,
    )
    assert record.outcome == "ok"
    assert (work_repo.root / "src" / "new.py").read_text() == "y = 2\n"

    record, content = dispatch_tool(
        MATRIX, Principal.PM_AGENT, ToolId.READ_FILE, {"path": "src/new.py"}, work_repo,
    )
    assert record.outcome == "ok"
    assert content == "y = 2\n"
    assert record.output_digest == hashlib.sha256(b"y = 2\n").hexdigest()


def test_dispatch_apply_patch(work_repo):
    patch = (
        "diff --git a/src/a.py b/src/a.py\n"
        "--- a/src/a.py\n"
        "+++ b/src/a.py\n"
        "@@ -1 +1 @@\n"
        "-value = 1\n"
        "+value = 2\n"
    )
    record, _ = dispatch_tool(
        MATRIX, Principal.DEVELOPER_AGENT, ToolId.APPLY_PATCH, {"patch": patch}, work_repo,
    )
    assert record.outcome == "ok"
    assert "value = 2" in (work_repo.root / "src" / "a.py").read_text()


def test_dispatch_escaping_path_is_error(work_repo):
    record, _ = dispatch_tool(
        MATRIX, Principal.PM_AGENT, ToolId.READ_FILE, {"path": "../outside"}, work_repo,
    )
    assert record.outcome == "error"


def test_redaction_hashes_large_values():
    small = redact_arguments({"path": "a.py", "content": "short"})
    assert small["content"] == "short"
    big = "x" * (17 * 1024)
    redacted = redact_arguments({"content": big})
    assert redacted["content"].startswith("sha256:")
    assert hashlib.sha256(big.encode()).hexdigest() in redacted["content"]


# -- invoke_agent -----------------------------------------------------------------

def test_invoke_agent_tool_loop(work_repo):
    backend = ScriptedBackend({
        "developer_agent:implement": [
            {"tool": "glob", "arguments": {"pattern": "**/*.py"}},
            {"tool": "write_file", "arguments": {"path": "src/b.py", "content": "z = 3\n"}},
            {"final": "done"},
        ],
    })
    turn = invoke_agent(backend, Principal.DEVELOPER_AGENT, Phase.IMPLEMENT,
                        "prompt", MATRIX, work_repo)
    assert turn.response_text == "done"
    assert [c.tool for c in turn.tool_calls] == [ToolId.GLOB, ToolId.WRITE_FILE]
    assert all(c.outcome == "ok" for c in turn.tool_calls)
    assert (work_repo.root / "src" / "b.py").exists()


def test_invoke_agent_denied_tool_raises_with_turn(work_repo):
    backend = ScriptedBackend({
        "pm_agent:specify": [
            {"tool": "write_file", "arguments": {"path": "x", "content": "y"}},
        ],
    })
    with pytest.raises(PermissionViolationForTurn) as err:
        invoke_agent(backend, Principal.PM_AGENT, Phase.SPECIFY, "p", MATRIX, work_repo)
    assert err.value.turn.tool_calls[-1].outcome == "denied"
    assert not (work_repo.root / "x").exists()


def test_invoke_agent_retries_then_succeeds(work_repo):
    backend = ScriptedBackend({
        "pm_agent:plan": [
            {"transport_error": True},
            {"transport_error": True},
            {"final": "ok"},
        ],
    })
    slept = []
    policy = BackoffPolicy(base_delay=1.0, multiplier=2.0, max_retries=3, jitter=0.0)
    turn = invoke_agent(backend, Principal.PM_AGENT, Phase.PLAN, "p", MATRIX,
                        work_repo, backoff=policy, sleep=slept.append)
    assert turn.response_text == "ok"
    assert turn.retries == 2
    assert slept == [1.0, 2.0]


def test_invoke_agent_exhaustion_raises(work_repo):
    backend = ScriptedBackend({
        "pm_agent:plan": [{"transport_error": True}] * 5,
    })
    policy = BackoffPolicy(base_delay=1.0, multiplier=2.0, max_retries=2, jitter=0.0)
    with pytest.raises(BackendExhausted):
        invoke_agent(backend, Principal.PM_AGENT, Phase.PLAN, "p", MATRIX,
                     work_repo, backoff=policy, sleep=lambda _: None)


def test_rate_limit_marks_turn(work_repo):
    backend = ScriptedBackend({
        "pm_agent:plan": [{"rate_limit": True}, {"final": "ok"}],
    })
    turn = invoke_agent(backend, Principal.PM_AGENT, Phase.PLAN, "p", MATRIX,
                        work_repo, sleep=lambda _: None)
    assert turn.rate_limited
    assert turn.response_text == "ok"


def test_replay_determinism(work_repo):
    script = {
        "developer_agent:implement": [
            {"tool": "write_file", "arguments": {"path": "out.txt", "content": "same\n"}},
            {"final": "done"},
        ],
    }

    def run_once():
        (work_repo.root / "out.txt").unlink(missing_ok=True)
        turn = invoke_agent(ScriptedBackend(script), Principal.DEVELOPER_AGENT,
                            Phase.IMPLEMENT, "p", MATRIX, work_repo)
        return (
            (work_repo.root / "out.txt").read_bytes(),
            [(c.tool, c.outcome) for c in turn.tool_calls],
            turn.response_text,
        )

    assert run_once() == run_once()
