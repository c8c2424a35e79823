"""System-level configuration (config.yaml): budgets, timeouts, permissions,
backends, and per-repo check commands."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .agents import Backend, BackoffPolicy, HttpBackend, ScriptedBackend
from .probe import EvidenceCaps
from .validation import CheckSpec
from .workflow import Phase


class ConfigError(Exception):
    pass


@dataclass
class BackendConfig:
    kind: str = "http"  # http | scripted
    id: str = "http"
    script_file: Optional[Path] = None
    base_url: Optional[str] = None
    model: Optional[str] = None

    def build(self) -> Backend:
        if self.kind == "scripted":
            if self.script_file is None:
                raise ConfigError("scripted backend needs script_file")
            raw = Path(self.script_file).read_text(encoding="utf-8")
            script = (
                json.loads(raw)
                if str(self.script_file).endswith(".json")
                else yaml.safe_load(raw)
            )
            return ScriptedBackend(script or {}, backend_id=self.id)
        if self.kind == "http":
            return HttpBackend(base_url=self.base_url, model=self.model, backend_id=self.id)
        raise ConfigError(f"unknown backend kind: {self.kind}")


@dataclass
class RepoConfig:
    path: Path
    checks: list[CheckSpec] = field(default_factory=list)


@dataclass
class AppConfig:
    runs_dir: Path = Path("runs")
    auto_approve: bool = True
    checkpoint_timeout_seconds: float = 600.0
    per_phase_timeouts: dict[Phase, float] = field(default_factory=dict)
    backoff: BackoffPolicy = field(default_factory=BackoffPolicy)
    evidence_caps: EvidenceCaps = field(default_factory=EvidenceCaps)
    backend: BackendConfig = field(default_factory=BackendConfig)
    judge_backend: BackendConfig = field(
        default_factory=lambda: BackendConfig(id="judge-http")
    )
    repos: dict[str, RepoConfig] = field(default_factory=dict)
    prompts_dir: Optional[Path] = None
    extra_exec_prefixes: list[str] = field(default_factory=list)

    def validate(self) -> None:
        # Scoring must be isolated from generation.
        if self.backend.id == self.judge_backend.id:
            raise ConfigError(
                "generation and judge backends must be distinct "
                f"(both are {self.backend.id!r})"
            )


def _backend_config(raw: dict, default_id: str) -> BackendConfig:
    return BackendConfig(
        kind=raw.get("kind", "http"),
        id=raw.get("id", default_id),
        script_file=Path(raw["script_file"]) if raw.get("script_file") else None,
        base_url=raw.get("base_url"),
        model=raw.get("model"),
    )


def load_config(path: Optional[Path] = None) -> AppConfig:
    """Parse config.yaml; absent file yields defaults."""
    raw: dict = {}
    if path is not None and Path(path).exists():
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}

    timeouts = {}
    for name, minutes in (raw.get("per_phase_timeouts") or {}).items():
        try:
            timeouts[Phase(name)] = float(minutes)
        except ValueError as exc:
            raise ConfigError(f"unknown phase in per_phase_timeouts: {name}") from exc

    backoff_raw = raw.get("backoff") or {}
    backoff = BackoffPolicy(
        base_delay=float(backoff_raw.get("base_delay", 1.0)),
        multiplier=float(backoff_raw.get("multiplier", 2.0)),
        max_retries=int(backoff_raw.get("max_retries", 3)),
        jitter=float(backoff_raw.get("jitter", 0.0)),
    )
    caps_raw = raw.get("evidence_caps") or {}
    caps = EvidenceCaps(
        max_files=int(caps_raw.get("max_files", 30)),
        excerpt_lines=int(caps_raw.get("excerpt_lines", 40)),
        max_history=int(caps_raw.get("max_history", 20)),
    )

    repos = {}
    for repo_id, repo_raw in (raw.get("repos") or {}).items():
        checks = [
            CheckSpec(
                command=c["command"],
                kind=c.get("kind", "test"),
                timeout_seconds=float(c.get("timeout_seconds", 300.0)),
            )
            for c in repo_raw.get("checks", [])
        ]
        repos[repo_id] = RepoConfig(path=Path(repo_raw["path"]), checks=checks)

    config = AppConfig(
        runs_dir=Path(raw.get("runs_dir", "runs")),
        auto_approve=bool(raw.get("auto_approve", True)),
        checkpoint_timeout_seconds=float(raw.get("checkpoint_timeout_seconds", 600.0)),
        per_phase_timeouts=timeouts,
        backoff=backoff,
        evidence_caps=caps,
        backend=_backend_config(raw.get("backend") or {}, "http"),
        judge_backend=_backend_config(raw.get("judge_backend") or {}, "judge-http"),
        repos=repos,
        prompts_dir=Path(raw["prompts_dir"]) if raw.get("prompts_dir") else None,
        extra_exec_prefixes=list(raw.get("tool_allowlist", [])),
    )
    config.validate()
    return config
