"""Typed model, markdown grammar, and structural checks for SPEC/PLAN/TASKS.

The grammar is heading-based and deliberately small so validators get
machine-readable structure. Headings match case-insensitively in a fixed
order; unknown sections are preserved verbatim and round-trip.
"""

from __future__ import annotations

import posixpath
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .reports import Finding, FindingCategory, Severity, ValidationReport
from .workflow import ConfigKind, Phase, phases_for


class ArtifactParseError(Exception):
    """Input does not match the artifact grammar."""


class StructuralParseError(ArtifactParseError):
    def __init__(self, heading: str) -> None:
        super().__init__(f"missing mandatory heading: {heading}")
        self.heading = heading


class DuplicateTaskIdError(ArtifactParseError):
    def __init__(self, task_id: str) -> None:
        super().__init__(f"duplicate task id: {task_id}")
        self.task_id = task_id


class SerializationError(Exception):
    """Document violates its invariants and cannot be serialized."""


class ChangeKind(str, Enum):
    MODIFY = "modify"
    CREATE = "create"
    DELETE = "delete"


class Ecosystem(str, Enum):
    PYTHON = "python"
    JAVASCRIPT = "javascript"
    OTHER = "other"


@dataclass(frozen=True)
class Touchpoint:
    path: str
    change_kind: ChangeKind
    rationale: str


@dataclass(frozen=True)
class Dependency:
    name: str
    ecosystem: Ecosystem


@dataclass(frozen=True)
class Task:
    id: str
    description: str
    depends_on: tuple[str, ...] = ()
    done: bool = False


@dataclass
class SpecDoc:
    title: str
    requirements: list[str]
    acceptance_criteria: list[str]
    clarifications: Optional[list[str]] = None
    extra_sections: list[str] = field(default_factory=list)

    def invariant_errors(self) -> list[str]:
        errors = []
        if not self.requirements:
            errors.append("requirements must be nonempty")
        if not self.acceptance_criteria:
            errors.append("acceptance criteria must be nonempty")
        line_fields = [*self.requirements, *self.acceptance_criteria]
        if self.clarifications:
            line_fields.extend(self.clarifications)
        errors.extend(_line_field_errors(line_fields))
        if "\n" in self.title or "\r" in self.title or self.title != self.title.strip():
            errors.append("title must be a single stripped line")
        if self.title.startswith("#"):
            errors.append("title must not look like a heading")
        errors.extend(
            _extra_section_errors(
                self.extra_sections,
                {"requirements", "acceptance criteria", "clarifications"},
            )
        )
        return errors


@dataclass
class PlanDoc:
    overview: str
    touchpoints: list[Touchpoint]
    dependencies: list[Dependency] = field(default_factory=list)
    extra_sections: list[str] = field(default_factory=list)

    def invariant_errors(self) -> list[str]:
        errors = []
        if not self.touchpoints:
            errors.append("touchpoints must be nonempty")
        seen: set[tuple[str, ChangeKind]] = set()
        for tp in self.touchpoints:
            problem = path_problem(tp.path)
            if problem:
                errors.append(f"touchpoint path {tp.path!r}: {problem}")
            key = (tp.path, tp.change_kind)
            if key in seen:
                errors.append(f"duplicate touchpoint: {tp.path} ({tp.change_kind.value})")
            seen.add(key)
        for dep in self.dependencies:
            if not dep.name:
                errors.append("dependency name must be nonempty")
        line_fields = [
            *(tp.path for tp in self.touchpoints),
            *(tp.rationale for tp in self.touchpoints),
            *(dep.name for dep in self.dependencies),
        ]
        errors.extend(_line_field_errors(line_fields))
        errors.extend(
            f"touchpoint cell contains '|': {text!r}"
            for tp in self.touchpoints
            for text in (tp.path, tp.rationale)
            if "|" in text
        )
        errors.extend(_block_field_errors(self.overview, "overview"))
        errors.extend(
            _extra_section_errors(
                self.extra_sections, {"overview", "touchpoints", "dependencies"}
            )
        )
        return errors


@dataclass
class TaskList:
    tasks: list[Task]
    extra_sections: list[str] = field(default_factory=list)

    def invariant_errors(self) -> list[str]:
        errors = []
        ids = [t.id for t in self.tasks]
        seen: set[str] = set()
        for tid in ids:
            if tid in seen:
                errors.append(f"duplicate task id: {tid}")
            seen.add(tid)
            if not _TASK_ID_RE.fullmatch(tid):
                errors.append(f"invalid task id: {tid!r}")
        for task in self.tasks:
            for dep in task.depends_on:
                if dep not in seen:
                    errors.append(f"task {task.id} depends on unknown task {dep}")
        errors.extend(_line_field_errors([t.description for t in self.tasks]))
        errors.extend(
            f"task description contains a depends suffix: {t.description!r}"
            for t in self.tasks
            if _DEPENDS_SUFFIX_RE.search(t.description)
        )
        errors.extend(_extra_section_errors(self.extra_sections, set()))
        return errors


@dataclass
class ArtifactSet:
    spec: Optional[SpecDoc] = None
    plan: Optional[PlanDoc] = None
    tasks: Optional[TaskList] = None

    def get(self, kind: str):
        return {"spec": self.spec, "plan": self.plan, "tasks": self.tasks}[kind]


def path_problem(path: str) -> Optional[str]:
    """Why a path is not a safe repo-relative path, or None if it is."""
    if not path or path.strip() != path:
        return "empty or unstripped"
    if path.startswith("/") or path.startswith("\\") or re.match(r"^[A-Za-z]:", path):
        return "absolute prefix"
    normalized = posixpath.normpath(path)
    if normalized != path:
        return "not normalized"
    parts = normalized.split("/")
    if ".." in parts:
        return "parent-escape segment"
    return None


_TASK_ID_RE = re.compile(r"[A-Za-z0-9_-]+")
_DEPENDS_SUFFIX_RE = re.compile(r"\s*\(depends:\s*([^)]*)\)\s*$")
_HEADING_RE = re.compile(r"^(#{1,6})\s+(.*?)\s*$")
_BULLET_RE = re.compile(r"^-\s+(.*)$")
_TASK_LINE_RE = re.compile(r"^- \[([ xX])\] ([A-Za-z0-9_-]+):\s*(.*)$")
_DEP_BULLET_RE = re.compile(r"^(.*?)\s*\((python|javascript|other)\)\s*$")


def _line_field_errors(values: list[str]) -> list[str]:
    return [
        f"field contains a line break or is empty: {v!r}"
        for v in values
        if not v or "\n" in v or "\r" in v or v.strip() != v
    ]


def _block_field_errors(value: str, label: str) -> list[str]:
    """Multi-line prose fields: no surrounding whitespace, no heading lines."""
    errors = []
    if value != value.strip():
        errors.append(f"{label} has leading or trailing whitespace")
    if "\r" in value:
        errors.append(f"{label} contains a carriage return")
    if any(line.startswith(("# ", "## ")) for line in value.splitlines()):
        errors.append(f"{label} contains a heading line")
    return errors


def _extra_section_errors(extras: list[str], reserved: set[str]) -> list[str]:
    errors = []
    for raw in extras:
        lines = raw.splitlines()
        if not lines or not lines[0].startswith("## "):
            errors.append(f"extra section must start with a '## ' heading: {raw!r}")
            continue
        heading = lines[0][3:].strip()
        if heading.lower() in reserved:
            errors.append(f"extra section shadows a reserved heading: {heading!r}")
        if any(line.startswith("## ") or line.startswith("# ") for line in lines[1:]):
            errors.append(f"extra section body contains a heading line: {heading!r}")
        if raw != raw.rstrip("\n"):
            errors.append(f"extra section has trailing newlines: {heading!r}")
    return errors


def _split_sections(text: str) -> tuple[str, str, list[tuple[str, str]]]:
    """Split markdown into (top heading text, preamble body, level-2 sections).

    Each section is (heading text, raw body). Raises on a missing top heading.
    """
    lines = text.splitlines()
    idx = 0
    while idx < len(lines) and not lines[idx].strip():
        idx += 1
    if idx >= len(lines):
        raise StructuralParseError("# <document>")
    m = _HEADING_RE.match(lines[idx])
    if not m or len(m.group(1)) != 1:
        raise StructuralParseError("# <document>")
    title_heading = m.group(2)
    idx += 1

    preamble: list[str] = []
    sections: list[tuple[str, list[str]]] = []
    current: Optional[list[str]] = None
    for line in lines[idx:]:
        hm = _HEADING_RE.match(line)
        if hm and len(hm.group(1)) == 2:
            current = []
            sections.append((hm.group(2), current))
        elif current is None:
            preamble.append(line)
        else:
            current.append(line)
    body = "\n".join(preamble).strip("\n")
    return title_heading, body, [(h, "\n".join(b).strip("\n")) for h, b in sections]


def _bullets(body: str) -> list[str]:
    items = []
    for line in body.splitlines():
        m = _BULLET_RE.match(line.strip())
        if m:
            items.append(m.group(1).strip())
    return items


def _raw_section(heading: str, body: str) -> str:
    return f"## {heading}\n{body}".rstrip("\n") if body else f"## {heading}"


def parse_spec(markdown: str) -> SpecDoc:
    top, preamble, sections = _split_sections(markdown)
    if top.lower() != "spec":
        raise StructuralParseError("# Spec")
    known = {h.lower(): (h, body) for h, body in sections}
    if "requirements" not in known:
        raise StructuralParseError("## Requirements")
    if "acceptance criteria" not in known:
        raise StructuralParseError("## Acceptance Criteria")
    clarifications: Optional[list[str]] = None
    if "clarifications" in known:
        clarifications = _bullets(known["clarifications"][1])
    extras = [
        _raw_section(h, body)
        for h, body in sections
        if h.lower() not in ("requirements", "acceptance criteria", "clarifications")
    ]
    title_lines = [line.strip() for line in preamble.splitlines() if line.strip()]
    return SpecDoc(
        title=" ".join(title_lines),
        requirements=_bullets(known["requirements"][1]),
        acceptance_criteria=_bullets(known["acceptance criteria"][1]),
        clarifications=clarifications,
        extra_sections=extras,
    )


def _parse_table_rows(body: str) -> list[list[str]]:
    rows = []
    for line in body.splitlines():
        stripped = line.strip()
        if not stripped.startswith("|"):
            continue
        cells = [c.strip() for c in stripped.strip("|").split("|")]
        if cells and all(re.fullmatch(r":?-{3,}:?", c) for c in cells):
            continue  # separator row
        rows.append(cells)
    return rows


def parse_plan(markdown: str) -> PlanDoc:
    top, _, sections = _split_sections(markdown)
    if top.lower() != "plan":
        raise StructuralParseError("# Plan")
    known = {h.lower(): body for h, body in sections}
    if "overview" not in known:
        raise StructuralParseError("## Overview")
    if "touchpoints" not in known:
        raise StructuralParseError("## Touchpoints")

    touchpoints: list[Touchpoint] = []
    rows = _parse_table_rows(known["touchpoints"])
    for row in rows:
        if len(row) != 3:
            raise ArtifactParseError(f"touchpoint row needs 3 cells: {row!r}")
        path, change, rationale = row
        if path.lower() == "path" and change.lower() == "change":
            continue  # header row
        try:
            kind = ChangeKind(change.lower())
        except ValueError:
            raise ArtifactParseError(f"unknown change kind: {change!r}") from None
        touchpoints.append(Touchpoint(path=path, change_kind=kind, rationale=rationale))

    dependencies: list[Dependency] = []
    for item in _bullets(known.get("dependencies", "")):
        m = _DEP_BULLET_RE.match(item)
        if not m:
            raise ArtifactParseError(f"dependency bullet needs 'name (ecosystem)': {item!r}")
        dependencies.append(Dependency(name=m.group(1).strip(), ecosystem=Ecosystem(m.group(2))))

    extras = [
        _raw_section(h, body)
        for h, body in sections
        if h.lower() not in ("overview", "touchpoints", "dependencies")
    ]
    return PlanDoc(
        overview=known["overview"].strip(),
        touchpoints=touchpoints,
        dependencies=dependencies,
        extra_sections=extras,
    )


def parse_tasks(markdown: str) -> TaskList:
    top, preamble, sections = _split_sections(markdown)
    if top.lower() != "tasks":
        raise StructuralParseError("# Tasks")
    tasks: list[Task] = []
    seen: set[str] = set()
    for line in preamble.splitlines():
        m = _TASK_LINE_RE.match(line.strip())
        if not m:
            continue
        done = m.group(1).lower() == "x"
        tid = m.group(2)
        rest = m.group(3)
        depends: tuple[str, ...] = ()
        dm = _DEPENDS_SUFFIX_RE.search(rest)
        if dm:
            depends = tuple(d.strip() for d in dm.group(1).split(",") if d.strip())
            rest = rest[: dm.start()].rstrip()
        if tid in seen:
            raise DuplicateTaskIdError(tid)
        seen.add(tid)
        tasks.append(Task(id=tid, description=rest, depends_on=depends, done=done))
    extras = [_raw_section(h, body) for h, body in sections]
    return TaskList(tasks=tasks, extra_sections=extras)


def _require_valid(doc) -> None:
    errors = doc.invariant_errors()
    if errors:
        raise SerializationError("; ".join(errors))


def serialize_spec(doc: SpecDoc) -> str:
    _require_valid(doc)
    parts = ["# Spec"]
    if doc.title:
        parts.append("\n" + doc.title)
    parts.append("\n## Requirements")
    parts.extend(f"- {r}" for r in doc.requirements)
    parts.append("\n## Acceptance Criteria")
    parts.extend(f"- {c}" for c in doc.acceptance_criteria)
    if doc.clarifications is not None:
        parts.append("\n## Clarifications")
        parts.extend(f"- {c}" for c in doc.clarifications)
    parts.extend("\n" + s for s in doc.extra_sections)
    return "\n".join(parts) + "\n"


def serialize_plan(doc: PlanDoc) -> str:
    _require_valid(doc)
    parts = ["# Plan", "\n## Overview"]
    if doc.overview:
        parts.append(doc.overview)
    parts.append("\n## Touchpoints")
    parts.append("| Path | Change | Rationale |")
    parts.append("| --- | --- | --- |")
    parts.extend(
        f"| {tp.path} | {tp.change_kind.value} | {tp.rationale} |" for tp in doc.touchpoints
    )
    parts.append("\n## Dependencies")
    parts.extend(f"- {d.name} ({d.ecosystem.value})" for d in doc.dependencies)
    parts.extend("\n" + s for s in doc.extra_sections)
    return "\n".join(parts) + "\n"


def serialize_tasks(doc: TaskList) -> str:
    _require_valid(doc)
    parts = ["# Tasks", ""]
    for task in doc.tasks:
        box = "x" if task.done else " "
        line = f"- [{box}] {task.id}: {task.description}"
        if task.depends_on:
            line += f" (depends: {', '.join(task.depends_on)})"
        parts.append(line)
    parts.extend("\n" + s for s in doc.extra_sections)
    return "\n".join(parts) + "\n"


def serialize(doc) -> str:
    if isinstance(doc, SpecDoc):
        return serialize_spec(doc)
    if isinstance(doc, PlanDoc):
        return serialize_plan(doc)
    if isinstance(doc, TaskList):
        return serialize_tasks(doc)
    raise TypeError(f"not an artifact document: {type(doc)!r}")


PARSERS = {"spec": parse_spec, "plan": parse_plan, "tasks": parse_tasks}

# Phase -> artifact kind produced by that phase (implement produces a patch).
ARTIFACT_FOR_PHASE = {Phase.SPECIFY: "spec", Phase.PLAN: "plan", Phase.TASKS: "tasks"}


def validate_structure(
    artifacts: ArtifactSet,
    config: ConfigKind,
    completed_phases: list[Phase],
) -> ValidationReport:
    """Structure-only check: required artifacts present and internally valid.

    Repository-referential checks (paths, dependencies) live in validation
    hooks, not here.
    """
    findings: list[Finding] = []
    expected = {
        ARTIFACT_FOR_PHASE[p]
        for p in completed_phases
        if p in ARTIFACT_FOR_PHASE and p in phases_for(config)
    }
    for kind in ("spec", "plan", "tasks"):
        doc = artifacts.get(kind)
        if kind in expected and doc is None:
            findings.append(
                Finding(
                    Severity.ERROR,
                    FindingCategory.STRUCTURAL,
                    f"artifact {kind} missing for completed phase",
                )
            )
        if doc is not None:
            findings.extend(
                Finding(Severity.ERROR, FindingCategory.STRUCTURAL, msg)
                for msg in doc.invariant_errors()
            )
    return ValidationReport(phase="structure", findings=findings)
