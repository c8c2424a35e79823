"""Role-scoped tool permissions.

Four principals, a closed tool set, and an allow/deny matrix with a
per-principal exec allowlist of command prefixes. The matrix is immutable
after construction and freely shared across runs.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional


class Principal(str, Enum):
    PM_AGENT = "pm_agent"
    DEVELOPER_AGENT = "developer_agent"
    DISCOVERY_HOOK = "discovery_hook"
    VALIDATION_HOOK = "validation_hook"


class ToolId(str, Enum):
    READ_FILE = "read_file"
    GLOB = "glob"
    GREP = "grep"
    GIT_INSPECT = "git_inspect"
    READ_MANIFEST = "read_manifest"
    WRITE_FILE = "write_file"
    APPLY_PATCH = "apply_patch"
    EXEC_COMMAND = "exec_command"


READ_TOOLS = frozenset(
    {ToolId.READ_FILE, ToolId.GLOB, ToolId.GREP, ToolId.GIT_INSPECT, ToolId.READ_MANIFEST}
)
WRITE_TOOLS = frozenset({ToolId.WRITE_FILE, ToolId.APPLY_PATCH})


@dataclass(frozen=True)
class Decision:
    allowed: bool
    reason: Optional[str] = None


@dataclass(frozen=True)
class PermissionMatrix:
    grants: dict[tuple[Principal, ToolId], bool]
    exec_allowlist: dict[Principal, tuple[str, ...]] = field(default_factory=dict)

    def lookup(self, principal: Principal, tool: ToolId) -> bool:
        return self.grants.get((principal, tool), False)


def default_matrix(check_command_prefixes: tuple[str, ...] = ()) -> PermissionMatrix:
    """The standard matrix: analysts read, hooks probe, the developer edits.

    `check_command_prefixes` is the exec allowlist shared by the validation
    hook and the developer agent (the repo's configured check commands).
    """
    grants: dict[tuple[Principal, ToolId], bool] = {}
    for tool in READ_TOOLS:
        for principal in Principal:
            grants[(principal, tool)] = True
    for tool in WRITE_TOOLS:
        grants[(Principal.DEVELOPER_AGENT, tool)] = True
    grants[(Principal.DEVELOPER_AGENT, ToolId.EXEC_COMMAND)] = True
    grants[(Principal.VALIDATION_HOOK, ToolId.EXEC_COMMAND)] = True
    return PermissionMatrix(
        grants=grants,
        exec_allowlist={
            Principal.VALIDATION_HOOK: tuple(check_command_prefixes),
            Principal.DEVELOPER_AGENT: tuple(check_command_prefixes),
        },
    )


def check_permission(
    matrix: PermissionMatrix,
    principal: Principal,
    tool: ToolId,
    arguments: Optional[dict] = None,
) -> Decision:
    """Pure matrix lookup plus exec-allowlist prefix match."""
    if not matrix.lookup(principal, tool):
        return Decision(False, f"{principal.value} is not granted {tool.value}")
    if tool is ToolId.EXEC_COMMAND:
        command = (arguments or {}).get("command", "")
        allowlist = matrix.exec_allowlist.get(principal, ())
        if not _command_allowlisted(command, allowlist):
            return Decision(
                False,
                f"{principal.value} exec of {command!r} does not match any allowlisted prefix",
            )
    return Decision(True)


def _command_allowlisted(command: str, allowlist: tuple[str, ...]) -> bool:
    if not command:
        return False
    try:
        argv = shlex.split(command)
    except ValueError:
        return False
    for prefix in allowlist:
        prefix_argv = shlex.split(prefix)
        if argv[: len(prefix_argv)] == prefix_argv:
            return True
    return False


class PermissionViolation(Exception):
    """A principal attempted a tool call the matrix denies."""

    def __init__(self, principal: Principal, tool: ToolId, reason: str) -> None:
        super().__init__(reason)
        self.principal = principal
        self.tool = tool
        self.reason = reason
