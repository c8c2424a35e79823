"""Operator entry points: run, experiment, report, serve, validate-artifact.

Exit codes: 0 success/pass, 1 run or validation failure, 2 invocation error.
Machine output goes to stdout as JSON when --json is passed.
"""

from __future__ import annotations

import json
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Optional

import click

from . import artifacts as art
from .config import AppConfig, ConfigError, load_config
from .events import RunRegistry
from .experiment import (
    ExperimentPlan,
    FeatureLoadError,
    FeatureTask,
    build_report,
    load_features,
    run_id_for,
    run_matrix,
)
from .ledger import LedgerStore, RunRecord
from .orchestrator import Orchestrator, RunSettings
from .probe import Repo
from .prompts import PromptLibrary
from .validation import validate_plan, validate_spec, validate_tasks
from .probe import read_manifests
from .workflow import ConfigKind, budget_for


class CliError(click.ClickException):
    exit_code = 2


@click.group()
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None,
              help="Path to config.yaml.")
@click.option("--json", "as_json", is_flag=True, default=False,
              help="Emit machine-readable JSON on stdout.")
@click.pass_context
def main(ctx: click.Context, config_path: Optional[Path], as_json: bool) -> None:
    """Context-grounded spec-driven development orchestrator."""
    ctx.ensure_object(dict)
    try:
        ctx.obj["config"] = load_config(config_path)
    except (ConfigError, OSError) as exc:
        raise CliError(str(exc)) from exc
    ctx.obj["json"] = as_json


def _emit(ctx: click.Context, payload: dict, human: str) -> None:
    if ctx.obj["json"]:
        click.echo(json.dumps(payload, indent=2, sort_keys=True))
    else:
        click.echo(human)


def _parse_config_kind(name: str) -> ConfigKind:
    try:
        return ConfigKind(name)
    except ValueError:
        raise CliError(
            f"unknown configuration: {name!r} "
            f"(choose from {', '.join(c.value for c in ConfigKind)})"
        ) from None


def _find_task(config: AppConfig, features_path: Optional[Path], task_id: str) -> FeatureTask:
    if features_path is None:
        raise CliError("--features is required to resolve the task")
    try:
        tasks = load_features(features_path)
    except (FeatureLoadError, OSError) as exc:
        raise CliError(str(exc)) from exc
    for task in tasks:
        if task.task_id == task_id:
            return task
    raise CliError(f"unknown task: {task_id}")


def _build_orchestrator(config: AppConfig, runs_dir: Path,
                        registry: Optional[RunRegistry] = None) -> Orchestrator:
    store = LedgerStore(runs_dir)
    backend = config.backend.build()
    prompts = PromptLibrary(config.prompts_dir)
    return Orchestrator(
        store=store, backend=backend, prompt_library=prompts,
        registry=registry or RunRegistry(),
    )


def _settings_for(config: AppConfig, task: FeatureTask, kind: ConfigKind,
                  repo_path: Path, auto_approve: bool, run_id: str) -> RunSettings:
    repo_config = config.repos.get(task.repo_id)
    checks = repo_config.checks if repo_config else []
    return RunSettings(
        run_id=run_id,
        task_id=task.task_id,
        repo_id=task.repo_id,
        task_description=task.description,
        config=kind,
        repo_path=repo_path,
        checks=checks,
        auto_approve=auto_approve,
        checkpoint_timeout=config.checkpoint_timeout_seconds,
        budget=budget_for(kind, overrides=config.per_phase_timeouts or None),
        backoff=config.backoff,
        caps=config.evidence_caps,
    )


@main.command("run")
@click.argument("task_id")
@click.argument("config_kind")
@click.option("--repo", "repo_path", type=click.Path(path_type=Path), default=None,
              help="Working copy; defaults to the repo configured for the task.")
@click.option("--features", type=click.Path(path_type=Path), default=None)
@click.option("--runs-dir", type=click.Path(path_type=Path), default=None)
@click.option("--auto-approve/--interactive", default=True)
@click.pass_context
def cmd_run(ctx, task_id, config_kind, repo_path, features, runs_dir, auto_approve):
    """Execute one run end-to-end."""
    config: AppConfig = ctx.obj["config"]
    kind = _parse_config_kind(config_kind)
    task = _find_task(config, features, task_id)
    if repo_path is None:
        repo_config = config.repos.get(task.repo_id)
        if repo_config is None:
            raise CliError(f"no repo configured for {task.repo_id!r}; pass --repo")
        repo_path = repo_config.path
    if not Path(repo_path).is_dir():
        raise CliError(f"repository path does not exist: {repo_path}")

    runs = runs_dir or config.runs_dir
    orchestrator = _build_orchestrator(config, runs)
    run_id = run_id_for(task_id, kind)
    if orchestrator.store.exists(run_id):
        raise CliError(f"run already recorded: {run_id}")
    settings = _settings_for(config, task, kind, Path(repo_path), auto_approve, run_id)
    record = orchestrator.execute_run(settings)
    outcome = record.outcome
    assert outcome is not None
    payload = {
        "run_id": record.run_id,
        "status": record.status.value,
        "outcome": outcome.status,
        "category": outcome.category.value if outcome.category else None,
    }
    category = f" ({outcome.category.value})" if outcome.category else ""
    _emit(ctx, payload, f"run {record.run_id}: {outcome.status}{category}")
    sys.exit(0 if outcome.status == "success" else 1)


@main.command("experiment")
@click.option("--features", type=click.Path(path_type=Path), required=True)
@click.option("--configs", default="baseline,augmented,full,full_augmented",
              help="Comma-separated configuration kinds.")
@click.option("--parallelism", type=int, default=1)
@click.option("--runs-dir", type=click.Path(path_type=Path), default=None)
@click.option("--seed", type=int, default=0)
@click.option("--resume", is_flag=True, default=False)
@click.pass_context
def cmd_experiment(ctx, features, configs, parallelism, runs_dir, seed, resume):
    """Run the full task x configuration matrix."""
    config: AppConfig = ctx.obj["config"]
    try:
        tasks = load_features(features)
    except (FeatureLoadError, OSError) as exc:
        raise CliError(str(exc)) from exc
    kinds = [_parse_config_kind(c.strip()) for c in configs.split(",") if c.strip()]
    plan = ExperimentPlan(tasks=tasks, configs=kinds, seed=seed)
    runs = runs_dir or config.runs_dir
    store = LedgerStore(runs)
    prompts = PromptLibrary(config.prompts_dir)

    def runner(task: FeatureTask, kind: ConfigKind) -> RunRecord:
        repo_config = config.repos.get(task.repo_id)
        if repo_config is None:
            raise CliError(f"no repo configured for {task.repo_id!r}")
        # each cell runs on a fresh working copy
        scratch = Path(tempfile.mkdtemp(prefix=f"sddkit-{task.task_id}-"))
        work = scratch / "repo"
        shutil.copytree(repo_config.path, work)
        orchestrator = Orchestrator(
            store=store, backend=config.backend.build(), prompt_library=prompts,
        )
        settings = _settings_for(
            config, task, kind, work, True, run_id_for(task.task_id, kind)
        )
        record = orchestrator.execute_run(settings)
        return record

    # the orchestrator already appends; run_matrix must not double-append
    records = run_matrix(
        plan, runner, _passthrough_store(store), parallelism=parallelism, resume=resume
    )
    payload = {
        "runs": len(records),
        "successes": sum(
            1 for r in records if r.outcome and r.outcome.status == "success"
        ),
    }
    _emit(ctx, payload, f"experiment complete: {payload['runs']} runs, "
                        f"{payload['successes']} successes")


def _passthrough_store(store: LedgerStore) -> LedgerStore:
    """run_matrix appends results, but the orchestrator already did; give it
    a view whose append tolerates existing records."""

    class View(LedgerStore):
        def __init__(self) -> None:
            self.runs_dir = store.runs_dir
            self._lock = store._lock

        def append(self, record: RunRecord) -> None:
            if self.exists(record.run_id):
                return
            super().append(record)

    return View()


@main.command("report")
@click.option("--runs-dir", type=click.Path(path_type=Path), default=None)
@click.option("--features", type=click.Path(path_type=Path), default=None)
@click.option("--out-dir", type=click.Path(path_type=Path), default=None,
              help="Where report.json and report.md are written (default: runs dir).")
@click.pass_context
def cmd_report(ctx, runs_dir, features, out_dir):
    """Aggregate the ledger into report.json and report.md."""
    config: AppConfig = ctx.obj["config"]
    runs = Path(runs_dir or config.runs_dir)
    store = LedgerStore(runs)
    plan = None
    if features:
        try:
            tasks = load_features(features)
        except (FeatureLoadError, OSError) as exc:
            raise CliError(str(exc)) from exc
        plan = ExperimentPlan(tasks=tasks, configs=list(ConfigKind))
    report = build_report(store, plan)
    target = Path(out_dir) if out_dir else runs
    target.mkdir(parents=True, exist_ok=True)
    (target / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
    )
    (target / "report.md").write_text(report.to_markdown(), encoding="utf-8")
    _emit(ctx, report.to_dict(), report.to_markdown())


@main.command("serve")
@click.option("--port", type=int, default=8787)
@click.option("--host", default="127.0.0.1")
@click.option("--runs-dir", type=click.Path(path_type=Path), default=None)
@click.option("--assets", type=click.Path(path_type=Path), default=None,
              help="Static dashboard assets directory (mounted at /ui).")
@click.pass_context
def cmd_serve(ctx, port, host, runs_dir, assets):
    """Host the HTTP API (and the dashboard, when assets are given)."""
    import uvicorn
    from .service import create_app

    config: AppConfig = ctx.obj["config"]
    store = LedgerStore(Path(runs_dir or config.runs_dir))
    app = create_app(store, RunRegistry())
    assets_dir = Path(assets) if assets else Path("frontend/dist")
    if assets_dir.is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=assets_dir, html=True), name="ui")
    uvicorn.run(app, host=host, port=port)


@main.command("validate-artifact")
@click.argument("kind", type=click.Choice(["spec", "plan", "tasks"]))
@click.argument("file", type=click.Path(path_type=Path))
@click.option("--repo", "repo_path", type=click.Path(path_type=Path), default=None,
              help="Repository for referential checks (plan validation).")
@click.pass_context
def cmd_validate_artifact(ctx, kind, file, repo_path):
    """Run the matching validator standalone. Exit 0 pass, 1 fail."""
    path = Path(file)
    if not path.exists():
        raise CliError(f"file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        doc = art.PARSERS[kind](text)
    except art.ArtifactParseError as exc:
        _emit(ctx, {"verdict": "fail", "findings": [str(exc)]}, f"parse error: {exc}")
        sys.exit(1)

    if kind == "spec":
        report = validate_spec(doc)
    elif kind == "plan":
        if repo_path is None:
            raise CliError("plan validation requires --repo")
        repo = Repo(Path(repo_path))
        report = validate_plan(doc, repo, read_manifests(repo))
    else:
        report = validate_tasks(doc)

    human = "\n".join(
        f"[{f.severity.value}] {f.category.value}: {f.message}" for f in report.findings
    ) or "no findings"
    _emit(ctx, report.to_dict(), f"{report.verdict.value}\n{human}")
    sys.exit(0 if report.passed else 1)


if __name__ == "__main__":
    main()
