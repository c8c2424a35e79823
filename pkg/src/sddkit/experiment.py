"""Task definitions, the run matrix, and aggregation math for reports."""

from __future__ import annotations

import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import yaml

from .ledger import (
    CriticalError,
    FailureCategory,
    LedgerStore,
    Outcome,
    RunRecord,
    latency_eligible,
)
from .stats import Pair, PairedSample, WilcoxonResult, wilcoxon_signed_rank
from .workflow import ConfigKind, RunStatus, SHORT_BUDGET_FAMILY

TASK_CATEGORIES = frozenset(
    {"config_change", "new_module", "api_endpoint", "refactor", "test"}
)


class FeatureLoadError(Exception):
    pass


@dataclass(frozen=True)
class FeatureTask:
    task_id: str
    repo_id: str
    category: str
    description: str


def load_features(path: Path) -> list[FeatureTask]:
    """Parse the features file: a YAML list of task entries."""
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if raw is None:
        return []
    if isinstance(raw, dict):
        raw = raw.get("features", [])
    tasks: list[FeatureTask] = []
    seen: set[str] = set()
    for entry in raw:
        task_id = entry.get("task_id") or entry.get("id")
        if not task_id:
            raise FeatureLoadError(f"entry missing task_id: {entry!r}")
        if task_id in seen:
            raise FeatureLoadError(f"duplicate task_id: {task_id}")
        seen.add(task_id)
        category = entry.get("category", "")
        if category not in TASK_CATEGORIES:
            raise FeatureLoadError(f"task {task_id} has unknown category: {category!r}")
        tasks.append(
            FeatureTask(
                task_id=task_id,
                repo_id=entry.get("repository") or entry.get("repo_id") or "",
                category=category,
                description=entry.get("description", ""),
            )
        )
    return tasks


@dataclass
class ExperimentPlan:
    tasks: list[FeatureTask]
    configs: list[ConfigKind]
    seed: int = 0


def run_id_for(task_id: str, config: ConfigKind) -> str:
    return f"{task_id}__{config.value}"


CellRunner = Callable[[FeatureTask, ConfigKind], RunRecord]


def run_matrix(
    plan: ExperimentPlan,
    runner: CellRunner,
    store: LedgerStore,
    parallelism: int = 1,
    resume: bool = False,
) -> list[RunRecord]:
    """One run per (task, config) cell, appended to the ledger.

    Cells shuffle with the plan seed for load spreading; per-run failures
    are recorded and never abort the matrix.
    """
    cells = [(task, config) for task in plan.tasks for config in plan.configs]
    random.Random(plan.seed).shuffle(cells)

    def run_cell(cell: tuple[FeatureTask, ConfigKind]) -> Optional[RunRecord]:
        task, config = cell
        run_id = run_id_for(task.task_id, config)
        if resume and store.exists(run_id):
            return None
        started = time.time()
        try:
            record = runner(task, config)
        except Exception as exc:  # never abort the matrix
            record = RunRecord(
                run_id=run_id,
                task_id=task.task_id,
                repo_id=task.repo_id,
                config=config,
                started_at=started,
                ended_at=time.time(),
                status=RunStatus.FAILED,
                critical_errors=[CriticalError(kind="orchestrator_panic", detail=str(exc))],
                outcome=Outcome(
                    status="failure",
                    category=FailureCategory.EXECUTION_OR_ENVIRONMENT_FAILURE,
                ),
            )
        store.append(record)
        return record

    if parallelism <= 1:
        results = [run_cell(c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(run_cell, cells))
    return [r for r in results if r is not None]


def weighted_overall(per_repo: list[tuple[float, int]]) -> float:
    """Feature-count-weighted average of per-repo means."""
    if not per_repo:
        raise ValueError("weighted_overall needs at least one repo")
    if any(n < 1 for _, n in per_repo):
        raise ValueError("feature counts must be >= 1")
    total = sum(n for _, n in per_repo)
    return sum(mean * n for mean, n in per_repo) / total


def delta_pct(q: float, base: float) -> float:
    """Percentage change relative to base, reported to 2 decimals."""
    if base <= 0:
        raise ValueError("base must be positive")
    return round((q - base) / base * 100.0, 2)


@dataclass(frozen=True)
class LatencyDelta:
    mean_a: float
    mean_b: float
    delta: float
    n_pairs: int

    def to_dict(self) -> dict:
        return dict(vars(self))


def latency_delta(sample: PairedSample) -> LatencyDelta:
    """Means over paired latencies and their difference (b - a)."""
    if not sample.pairs:
        raise ValueError("latency_delta needs at least one pair")
    mean_a = sum(p.a for p in sample.pairs) / len(sample.pairs)
    mean_b = sum(p.b for p in sample.pairs) / len(sample.pairs)
    return LatencyDelta(
        mean_a=mean_a, mean_b=mean_b, delta=mean_b - mean_a, n_pairs=len(sample.pairs)
    )


def budget_family(config: ConfigKind) -> str:
    return "40min" if config in SHORT_BUDGET_FAMILY else "90min"


def assert_same_family(a: ConfigKind, b: ConfigKind) -> None:
    """Latency comparisons are valid only within one budget family."""
    if budget_family(a) != budget_family(b):
        raise ValueError(
            f"cross-family latency comparison rejected: {a.value} vs {b.value}"
        )


QUALITY_COMPARISONS: list[tuple[ConfigKind, ConfigKind]] = [
    (ConfigKind.BASELINE, ConfigKind.AUGMENTED),
    (ConfigKind.FULL, ConfigKind.FULL_AUGMENTED),
    (ConfigKind.FULL, ConfigKind.DISCOVERY_ONLY),
    (ConfigKind.FULL, ConfigKind.VALIDATION_ONLY),
]

LATENCY_COMPARISONS: list[tuple[ConfigKind, ConfigKind]] = [
    (ConfigKind.BASELINE, ConfigKind.AUGMENTED),
    (ConfigKind.FULL, ConfigKind.FULL_AUGMENTED),
]


@dataclass
class QualityDelta:
    delta: float
    delta_pct: float
    p_value: Optional[float]
    n_pairs: int
    wilcoxon: Optional[WilcoxonResult] = None

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "delta_pct": self.delta_pct,
            "p_value": self.p_value,
            "n_pairs": self.n_pairs,
        }


@dataclass
class AggregateReport:
    per_repo: dict[str, dict]
    overall: Optional[float]
    deltas: dict[str, QualityDelta]
    latency: dict[str, LatencyDelta]
    failures: dict[str, int]
    gaps: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_repo": self.per_repo,
            "overall": self.overall,
            "deltas": {k: v.to_dict() for k, v in self.deltas.items()},
            "latency": {k: v.to_dict() for k, v in self.latency.items()},
            "failures": self.failures,
            "gaps": self.gaps,
        }

    def to_markdown(self) -> str:
        lines = ["# Experiment Report", "", "## Quality", ""]
        lines.append("| Repository | Mean quality | Features |")
        lines.append("| --- | --- | --- |")
        for repo, stats in sorted(self.per_repo.items()):
            lines.append(f"| {repo} | {stats['mean_quality']:.2f} | {stats['n_features']} |")
        if self.overall is not None:
            lines.append(f"\nOverall (feature-count weighted): **{self.overall:.2f}**")
        lines.append("\n## Paired deltas\n")
        lines.append("| Comparison | Delta | Delta % | p (two-sided) | Pairs |")
        lines.append("| --- | --- | --- | --- | --- |")
        for name, d in self.deltas.items():
            p = f"{d.p_value:.4f}" if d.p_value is not None else "n/a"
            lines.append(f"| {name} | {d.delta:+.2f} | {d.delta_pct:+.2f}% | {p} | {d.n_pairs} |")
        lines.append("\n## Latency (within family, minutes)\n")
        lines.append("| Comparison | A | B | Delta | Pairs |")
        lines.append("| --- | --- | --- | --- | --- |")
        for name, l in self.latency.items():
            lines.append(
                f"| {name} | {l.mean_a:.1f} | {l.mean_b:.1f} | {l.delta:+.1f} | {l.n_pairs} |"
            )
        lines.append("\n## Failures\n")
        lines.append("| Category | Count |")
        lines.append("| --- | --- |")
        for category, count in sorted(self.failures.items()):
            lines.append(f"| {category} | {count} |")
        if self.gaps:
            lines.append("\n## Gaps\n")
            lines.extend(f"- {gap}" for gap in self.gaps)
        return "\n".join(lines) + "\n"


def _judged_quality(record: RunRecord) -> Optional[float]:
    if record.judge and "composite" in record.judge:
        return float(record.judge["composite"])
    return None


def build_report(store: LedgerStore, plan: Optional[ExperimentPlan] = None) -> AggregateReport:
    """Aggregate the ledger: per-repo quality, paired deltas with Wilcoxon p,
    within-family latency deltas, and the failure histogram."""
    records = store.query()
    gaps: list[str] = []

    if plan:
        for task in plan.tasks:
            for config in plan.configs:
                if not any(
                    r.task_id == task.task_id and r.config is config for r in records
                ):
                    gaps.append(f"missing cell: {task.task_id} x {config.value}")

    # Rate-limited successes stay in quality aggregation (judged-quality
    # retention); they are excluded from latency below.
    by_repo: dict[str, list[float]] = {}
    for record in records:
        quality = _judged_quality(record)
        if quality is not None:
            by_repo.setdefault(record.repo_id, []).append(quality)
    per_repo = {
        repo: {
            "mean_quality": sum(scores) / len(scores),
            "n_features": len({r.task_id for r in records
                               if r.repo_id == repo and _judged_quality(r) is not None}),
        }
        for repo, scores in by_repo.items()
    }
    overall = None
    if per_repo:
        overall = weighted_overall(
            [(s["mean_quality"], s["n_features"]) for s in per_repo.values()]
        )

    deltas: dict[str, QualityDelta] = {}
    for config_a, config_b in QUALITY_COMPARISONS:
        pairs = _paired_values(records, config_a, config_b, _judged_quality)
        name = f"{config_a.value}_vs_{config_b.value}"
        if not pairs:
            gaps.append(f"no paired quality data for {name}")
            continue
        sample = PairedSample(pairs)
        mean_a = sum(p.a for p in pairs) / len(pairs)
        mean_b = sum(p.b for p in pairs) / len(pairs)
        result = wilcoxon_signed_rank(sample)
        deltas[name] = QualityDelta(
            delta=mean_b - mean_a,
            delta_pct=delta_pct(mean_b, mean_a) if mean_a > 0 else 0.0,
            p_value=result.p_two_sided,
            n_pairs=len(pairs),
            wilcoxon=result,
        )

    latency: dict[str, LatencyDelta] = {}
    for config_a, config_b in LATENCY_COMPARISONS:
        assert_same_family(config_a, config_b)
        pairs = _paired_values(
            records,
            config_a,
            config_b,
            lambda r: r.duration_minutes if latency_eligible(r) else None,
        )
        name = f"{config_a.value}_vs_{config_b.value}"
        if not pairs:
            gaps.append(f"no paired latency data for {name}")
            continue
        latency[name] = latency_delta(PairedSample(pairs))

    failures: dict[str, int] = {}
    for record in records:
        if record.outcome and record.outcome.status == "failure":
            category = record.outcome.category.value  # type: ignore[union-attr]
            failures[category] = failures.get(category, 0) + 1

    return AggregateReport(
        per_repo=per_repo,
        overall=overall,
        deltas=deltas,
        latency=latency,
        failures=failures,
        gaps=gaps,
    )


def _paired_values(
    records: list[RunRecord],
    config_a: ConfigKind,
    config_b: ConfigKind,
    value_of: Callable[[RunRecord], Optional[float]],
) -> list[Pair]:
    values: dict[tuple[str, ConfigKind], float] = {}
    for record in records:
        if record.config not in (config_a, config_b):
            continue
        value = value_of(record)
        if value is not None:
            values[(record.task_id, record.config)] = value
    pairs = []
    task_ids = sorted({task for task, _ in values})
    for task_id in task_ids:
        a = values.get((task_id, config_a))
        b = values.get((task_id, config_b))
        if a is not None and b is not None:
            pairs.append(Pair(task_id=task_id, a=a, b=b))
    return pairs
