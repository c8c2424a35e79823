"""Prompt templates: external text files with placeholder substitution.

Layout: prompts/<phase>.md, prompts/hooks/<phase>_{discovery,validation}.md,
prompts/judge.md. Placeholders use {{name}} syntax; artifact bodies are
addressed as {{artifact:spec}} etc.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path
from typing import Optional

from .artifacts import ArtifactSet, serialize
from .workflow import Phase

_PLACEHOLDER_RE = re.compile(r"\{\{([a-z_:]+)\}\}")


def render(template: str, mapping: dict[str, str]) -> str:
    """Substitute {{placeholders}}; unknown placeholders render empty."""
    return _PLACEHOLDER_RE.sub(lambda m: mapping.get(m.group(1), ""), template)


def artifact_mapping(artifacts: ArtifactSet) -> dict[str, str]:
    mapping = {}
    for kind in ("spec", "plan", "tasks"):
        doc = artifacts.get(kind)
        mapping[f"artifact:{kind}"] = serialize(doc) if doc is not None else ""
    return mapping


class PromptLibrary:
    """Loads templates from a directory, falling back to the built-ins."""

    def __init__(self, directory: Optional[Path] = None) -> None:
        self.directory = Path(directory) if directory else None

    def _load(self, relpath: str) -> str:
        if self.directory is not None:
            candidate = self.directory / relpath
            if candidate.exists():
                return candidate.read_text(encoding="utf-8")
        packaged = resources.files("sddkit").joinpath("prompts").joinpath(relpath)
        return packaged.read_text(encoding="utf-8")

    def phase_prompt(self, phase: Phase) -> str:
        return self._load(f"{phase.value}.md")

    def hook_prompt(self, phase: Phase, kind: str) -> str:
        # kind: discovery | validation
        return self._load(f"hooks/{phase.value}_{kind}.md")

    def judge_prompt(self) -> str:
        return self._load("judge.md")
