"""Read-only repository inspection and evidence assembly.

Primitives (glob, grep, history, manifests) are pure reads over a repo
snapshot; `discover` composes them into a bounded evidence bundle for
pre-phase grounding. Every call can be routed through an authorizer so
the permission layer can assert the zero-write property.
"""

from __future__ import annotations

import json
import re
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

try:
    import tomllib
except ImportError:  # pragma: no cover - py3.10
    import tomli as tomllib  # type: ignore

from .artifacts import ArtifactSet
from .workflow import Phase

VCS_DIRS = {".git", ".hg", ".svn"}


class PatternError(Exception):
    """Malformed glob or regular-expression pattern."""


@dataclass(frozen=True)
class FileMatch:
    path: str
    excerpt: str
    match_reason: str


@dataclass(frozen=True)
class Convention:
    kind: str  # logging | testing | layout | style
    evidence_path: str
    note: str


@dataclass(frozen=True)
class DependencyRecord:
    name: str
    ecosystem: str  # python | javascript | other
    manifest_path: str
    version_constraint: Optional[str] = None


@dataclass(frozen=True)
class HistoryEntry:
    commit_id: str
    summary: str
    touched_paths: tuple[str, ...]


@dataclass
class EvidenceBundle:
    phase: Phase
    generated_at: float
    relevant_files: list[FileMatch] = field(default_factory=list)
    conventions: list[Convention] = field(default_factory=list)
    dependencies: list[DependencyRecord] = field(default_factory=list)
    history: list[HistoryEntry] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "phase": self.phase.value,
            "generated_at": self.generated_at,
            "relevant_files": [vars(f) for f in self.relevant_files],
            "conventions": [vars(c) for c in self.conventions],
            "dependencies": [vars(d) for d in self.dependencies],
            "history": [
                {
                    "commit_id": h.commit_id,
                    "summary": h.summary,
                    "touched_paths": list(h.touched_paths),
                }
                for h in self.history
            ],
            "notes": list(self.notes),
        }

    def to_prompt_text(self) -> str:
        """Serialized bundle injected verbatim into the next agent prompt."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class EvidenceCaps:
    max_files: int = 30
    excerpt_lines: int = 40
    max_history: int = 20


@dataclass(frozen=True)
class Repo:
    root: Path

    def resolve(self, rel: str) -> Path:
        return self.root / rel


Authorizer = Callable[[str, dict], None]


def _authorize(authorizer: Optional[Authorizer], tool: str, arguments: dict) -> None:
    if authorizer is not None:
        authorizer(tool, arguments)


def _walk_files(root: Path) -> list[Path]:
    """All regular files under root, VCS metadata excluded, sorted."""
    out = []
    for p in root.rglob("*"):
        if any(part in VCS_DIRS for part in p.relative_to(root).parts):
            continue
        if p.is_file():
            out.append(p)
    # lexicographic on the relative posix path, not on path components
    out.sort(key=lambda p: p.relative_to(root).as_posix())
    return out


def glob_files(repo: Repo, pattern: str, authorizer: Optional[Authorizer] = None) -> list[str]:
    """Repo-relative file paths matching the glob, lexicographically sorted."""
    _authorize(authorizer, "glob", {"pattern": pattern})
    if not pattern or pattern.startswith("/"):
        raise PatternError(f"malformed glob pattern: {pattern!r}")
    regex = _glob_to_regex(pattern)
    out = []
    for p in _walk_files(repo.root):
        rel = p.relative_to(repo.root).as_posix()
        if regex.fullmatch(rel):
            out.append(rel)
    return out


def _glob_to_regex(pattern: str) -> re.Pattern:
    """Translate a glob with `**` support to a regex over posix paths."""
    i, n = 0, len(pattern)
    parts: list[str] = []
    while i < n:
        ch = pattern[i]
        if ch == "*":
            if pattern[i : i + 2] == "**":
                # `**/` may match zero directories
                if pattern[i : i + 3] == "**/":
                    parts.append(r"(?:[^/]+/)*")
                    i += 3
                else:
                    parts.append(r".*")
                    i += 2
            else:
                parts.append(r"[^/]*")
                i += 1
        elif ch == "?":
            parts.append(r"[^/]")
            i += 1
        elif ch == "[":
            j = pattern.find("]", i + 1)
            if j == -1:
                raise PatternError(f"unterminated character class in {pattern!r}")
            parts.append(pattern[i : j + 1])
            i = j + 1
        else:
            parts.append(re.escape(ch))
            i += 1
    try:
        return re.compile("".join(parts))
    except re.error as exc:
        raise PatternError(f"malformed glob pattern: {pattern!r}") from exc


@dataclass(frozen=True)
class GrepMatch:
    path: str
    line_number: int
    line_text: str


def grep(
    repo: Repo,
    pattern: str,
    scope: Optional[str] = None,
    authorizer: Optional[Authorizer] = None,
) -> list[GrepMatch]:
    """Regex search over the repo, ordered by (path, line). Binary files skipped."""
    _authorize(authorizer, "grep", {"pattern": pattern, "scope": scope})
    try:
        regex = re.compile(pattern)
    except re.error as exc:
        raise PatternError(f"invalid regular expression: {pattern!r}") from exc
    paths = glob_files(repo, scope) if scope else [
        p.relative_to(repo.root).as_posix() for p in _walk_files(repo.root)
    ]
    matches = []
    for rel in paths:
        raw = repo.resolve(rel).read_bytes()
        if b"\0" in raw[:8192]:
            continue
        text = raw.decode("utf-8", errors="replace")
        for lineno, line in enumerate(text.splitlines(), start=1):
            if regex.search(line):
                matches.append(GrepMatch(rel, lineno, line))
    return matches


def history(
    repo: Repo,
    path: Optional[str] = None,
    limit: int = 20,
    authorizer: Optional[Authorizer] = None,
) -> list[HistoryEntry]:
    """Newest-first commit history via the git CLI; empty when no VCS."""
    _authorize(authorizer, "git_inspect", {"path": path, "limit": limit})
    if limit <= 0:
        return []
    cmd = [
        "git", "log", f"-n{limit}",
        "--format=%x1e%H%x1f%s", "--name-only",
    ]
    if path:
        cmd += ["--", path]
    proc = subprocess.run(
        cmd, cwd=repo.root, capture_output=True, text=True, check=False
    )
    if proc.returncode != 0:
        return []
    entries = []
    for block in proc.stdout.split("\x1e"):
        block = block.strip("\n")
        if not block:
            continue
        head, _, rest = block.partition("\n")
        commit_id, _, summary = head.partition("\x1f")
        touched = tuple(line.strip() for line in rest.splitlines() if line.strip())
        entries.append(HistoryEntry(commit_id=commit_id, summary=summary, touched_paths=touched))
    return entries


_REQ_NAME_RE = re.compile(r"^\s*([A-Za-z0-9._-]+)\s*(\[[^\]]*\])?\s*(.*?)\s*$")


def read_manifests(repo: Repo, authorizer: Optional[Authorizer] = None) -> list[DependencyRecord]:
    """Dependency records from Python and JavaScript manifests.

    Malformed manifests contribute nothing but never raise; unknown manifest
    kinds are ignored.
    """
    _authorize(authorizer, "read_manifest", {})
    records: list[DependencyRecord] = []
    for p in _walk_files(repo.root):
        rel = p.relative_to(repo.root).as_posix()
        name = p.name
        if name.startswith("requirements") and name.endswith(".txt"):
            records.extend(_parse_requirements(p, rel))
        elif name == "pyproject.toml":
            records.extend(_parse_pyproject(p, rel))
        elif name == "package.json":
            records.extend(_parse_package_json(p, rel))
    return records


def _parse_requirements(path: Path, rel: str) -> list[DependencyRecord]:
    records = []
    for line in path.read_text(encoding="utf-8", errors="replace").splitlines():
        line = line.split("#", 1)[0].strip()
        if not line or line.startswith("-"):
            continue
        m = _REQ_NAME_RE.match(line)
        if m and m.group(1):
            constraint = m.group(3) or None
            records.append(
                DependencyRecord(
                    name=m.group(1), ecosystem="python",
                    manifest_path=rel, version_constraint=constraint,
                )
            )
    return records


_SPEC_SPLIT_RE = re.compile(r"[<>=!~;\[ ]")


def _parse_pyproject(path: Path, rel: str) -> list[DependencyRecord]:
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError):
        return []
    deps = data.get("project", {}).get("dependencies", [])
    records = []
    for spec in deps:
        if not isinstance(spec, str) or not spec.strip():
            continue
        name = _SPEC_SPLIT_RE.split(spec.strip(), 1)[0]
        constraint = spec.strip()[len(name):].strip() or None
        if name:
            records.append(
                DependencyRecord(
                    name=name, ecosystem="python",
                    manifest_path=rel, version_constraint=constraint,
                )
            )
    return records


def _parse_package_json(path: Path, rel: str) -> list[DependencyRecord]:
    try:
        data = json.loads(path.read_text(encoding="utf-8", errors="replace"))
    except json.JSONDecodeError:
        return []
    if not isinstance(data, dict):
        return []
    records = []
    for section in ("dependencies", "devDependencies"):
        block = data.get(section, {})
        if not isinstance(block, dict):
            continue
        for name, constraint in sorted(block.items()):
            records.append(
                DependencyRecord(
                    name=name, ecosystem="javascript",
                    manifest_path=rel,
                    version_constraint=constraint if isinstance(constraint, str) else None,
                )
            )
    return records


_STOPWORDS = frozenset(
    """a an and are as at be by for from has have in into is it its of on or
    that the their this to use using with add adds new support mode make
    should will when""".split()
)
_TOKEN_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]{2,}")

_CONVENTION_PROBES = [
    ("logging", r"\bimport logging\b|\blogger\s*=|\bloguru\b", "existing logging usage"),
    ("testing", r"\bdef test_|\bimport pytest\b|\bdescribe\(", "existing test conventions"),
    ("style", r"^\[tool\.(ruff|black|flake8|isort)\]", "configured style tooling"),
]


def extract_keywords(task_description: str, artifacts: Optional[ArtifactSet] = None) -> list[str]:
    """Deterministic relevance keywords: task tokens minus stopwords, plus
    identifiers mentioned in prior artifacts."""
    seen: dict[str, None] = {}
    for tok in _TOKEN_RE.findall(task_description.lower()):
        if tok not in _STOPWORDS:
            seen.setdefault(tok, None)
    if artifacts:
        if artifacts.plan:
            for tp in artifacts.plan.touchpoints:
                stem = tp.path.rsplit("/", 1)[-1].split(".")[0].lower()
                if stem and stem not in _STOPWORDS:
                    seen.setdefault(stem, None)
        if artifacts.tasks:
            for task in artifacts.tasks.tasks:
                for tok in _TOKEN_RE.findall(task.description.lower()):
                    if tok not in _STOPWORDS:
                        seen.setdefault(tok, None)
    return list(seen)


def discover(
    repo: Repo,
    phase: Phase,
    task_description: str,
    artifacts: Optional[ArtifactSet] = None,
    caps: EvidenceCaps = EvidenceCaps(),
    now: float = 0.0,
    authorizer: Optional[Authorizer] = None,
) -> EvidenceBundle:
    """Assemble a bounded, deterministic evidence bundle for one phase.

    Degraded evidence (no VCS, no manifests, no keyword hits) shrinks the
    bundle; it never fails.
    """
    bundle = EvidenceBundle(phase=phase, generated_at=now)
    keywords = extract_keywords(task_description, artifacts)

    all_files = glob_files(repo, "**/*", authorizer=authorizer)
    matched: dict[str, FileMatch] = {}
    for keyword in keywords:
        if len(matched) >= caps.max_files:
            break
        try:
            hits = grep(repo, re.escape(keyword), authorizer=authorizer)
        except PatternError:  # pragma: no cover - escaped keywords are valid
            continue
        for hit in hits:
            if hit.path in matched:
                continue
            if len(matched) >= caps.max_files:
                break
            excerpt = _excerpt(repo, hit.path, hit.line_number, caps.excerpt_lines)
            matched[hit.path] = FileMatch(
                path=hit.path, excerpt=excerpt, match_reason=f"keyword: {keyword}"
            )
    bundle.relevant_files = [matched[p] for p in sorted(matched)]

    for kind, pattern, note in _CONVENTION_PROBES:
        hits = grep(repo, pattern, authorizer=authorizer)
        if hits:
            bundle.conventions.append(
                Convention(kind=kind, evidence_path=hits[0].path, note=note)
            )
    if any(f.startswith(("tests/", "test/")) for f in all_files):
        bundle.conventions.append(
            Convention(kind="layout", evidence_path="tests", note="dedicated test directory")
        )

    bundle.dependencies = read_manifests(repo, authorizer=authorizer)
    bundle.history = history(repo, limit=caps.max_history, authorizer=authorizer)
    if not bundle.history:
        bundle.notes.append("no VCS history available")
    return bundle


def _excerpt(repo: Repo, rel: str, line_number: int, max_lines: int) -> str:
    lines = repo.resolve(rel).read_text(encoding="utf-8", errors="replace").splitlines()
    half = max_lines // 2
    start = max(0, line_number - 1 - half)
    return "\n".join(lines[start : start + max_lines])
