"""Shared fixtures: a git-backed fixture repository, canonical artifact
texts that validate against it, and scripted backends for full runs."""

from __future__ import annotations

import subprocess
import sys
from pathlib import Path

import pytest

from sddkit.agents import ScriptedBackend
from sddkit.workflow import ConfigKind


def _git(cwd: Path, *args: str) -> None:
    subprocess.run(
        ["git", "-c", "user.name=t", "-c", "user.email=t@t", *args],
        cwd=cwd, check=True, capture_output=True,
    )


@pytest.fixture
def fixture_repo(tmp_path: Path) -> Path:
    """Small Python project under git with a passing check command."""
    root = tmp_path / "repo"
    (root / "app").mkdir(parents=True)
    (root / "tests").mkdir()
    (root / "app" / "__init__.py").write_text("")
    (root / "app" / "main.py").write_text(
        "import logging\n\n"
        "logger = logging.getLogger(__name__)\n\n\n"
        "def run(flag: bool = False) -> int:\n"
        "    return 1 if flag else 0\n"
    )
    (root / "tests" / "test_main.py").write_text(
        "from app.main import run\n\n\n"
        "def test_run():\n"
        "    assert run() == 0\n"
    )
    (root / "requirements.txt").write_text("click\npyyaml\n")
    (root / "README.md").write_text("# Fixture app\n")
    _git(root, "init", "-q")
    _git(root, "add", "-A")
    _git(root, "commit", "-q", "-m", "initial")
    return root


SPEC_TEXT = """# Spec

## Requirements
- Add a --json flag that switches run output to JSON
- Keep the default plain-text output unchanged

## Acceptance Criteria
- Running with --json emits a JSON document
- Running without --json emits the current plain text output unchanged
"""

PLAN_TEXT = """# Plan

## Overview
Teach the entry point about a --json flag and thread it to the formatter.

## Touchpoints
| Path | Change | Rationale |
| --- | --- | --- |
| app/main.py | modify | add the flag and JSON branch |
| tests/test_main.py | modify | cover the new flag |

## Dependencies
- click (python)
"""

TASKS_TEXT = """# Tasks

- [ ] T1: add json flag parsing to app/main.py
- [ ] T2: emit JSON when the flag is set (depends: T1)
- [ ] T3: extend tests/test_main.py for both modes (depends: T2)
"""


def phase_script(include_staged: bool = True, implement_write: bool = True) -> dict:
    """Scripted backend messages for a complete run.

    The implement phase writes a file through the tool loop so the run
    produces a nonempty patch.
    """
    script: dict[str, list[dict]] = {}
    if include_staged:
        script["pm_agent:specify"] = [{"final": SPEC_TEXT}]
        script["pm_agent:plan"] = [{"final": PLAN_TEXT}]
        script["pm_agent:tasks"] = [{"final": TASKS_TEXT}]
    implement: list[dict] = []
    if implement_write:
        implement.append(
            {
                "tool": "write_file",
                "arguments": {
                    "path": "app/json_out.py",
                    "content": "import json\n\n\ndef dump(payload):\n"
                               "    return json.dumps(payload)\n",
                },
            }
        )
    implement.append({"final": "done"})
    script["developer_agent:implement"] = implement
    return script


@pytest.fixture
def scripted_backend() -> ScriptedBackend:
    return ScriptedBackend(phase_script())


ALL_CONFIGS = list(ConfigKind)


@pytest.fixture
def python_exe() -> str:
    return sys.executable
