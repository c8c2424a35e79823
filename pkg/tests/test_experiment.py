import pytest

from sddkit.experiment import (
    ExperimentPlan,
    FeatureLoadError,
    FeatureTask,
    LATENCY_COMPARISONS,
    QUALITY_COMPARISONS,
    assert_same_family,
    budget_family,
    build_report,
    delta_pct,
    latency_delta,
    load_features,
    run_id_for,
    run_matrix,
    weighted_overall,
)
from sddkit.ledger import LedgerStore, Outcome, PatchInfo, RunRecord, evaluate_success
from sddkit.stats import Pair, PairedSample
from sddkit.workflow import ConfigKind, RunStatus

FEATURES_YAML = """\
- task_id: cli-json
  repository: alpha
  category: config_change
  description: Add --json flag for JSON output
- task_id: api-health
  repository: beta
  category: api_endpoint
  description: Add a health endpoint
"""


def test_load_features(tmp_path):
    path = tmp_path / "features.yaml"
    path.write_text(FEATURES_YAML)
    tasks = load_features(path)
    assert [t.task_id for t in tasks] == ["cli-json", "api-health"]
    assert tasks[0].repo_id == "alpha"
    assert tasks[1].category == "api_endpoint"


def test_load_features_rejects_bad_input(tmp_path):
    dup = tmp_path / "dup.yaml"
    dup.write_text(
        "- {task_id: a, repository: r, category: test, description: d}\n"
        "- {task_id: a, repository: r, category: test, description: d}\n"
    )
    with pytest.raises(FeatureLoadError) as err:
        load_features(dup)
    assert "a" in str(err.value)

    bad_cat = tmp_path / "cat.yaml"
    bad_cat.write_text(
        "- {task_id: b, repository: r, category: chore, description: d}\n"
    )
    with pytest.raises(FeatureLoadError) as err:
        load_features(bad_cat)
    assert "b" in str(err.value)


# -- arithmetic ---------------------------------------------------------------

def test_delta_pct_table_values():
    assert delta_pct(3.53, 3.51) == pytest.approx(0.57, abs=0.005)
    assert delta_pct(3.57, 3.51) == pytest.approx(1.71, abs=0.005)
    assert delta_pct(3.66, 3.51) == pytest.approx(4.27, abs=0.005)
    with pytest.raises(ValueError):
        delta_pct(1.0, 0.0)


def test_latency_deltas_exact():
    first = latency_delta(PairedSample([Pair("t", 14.4, 15.5)]))
    assert first.delta == pytest.approx(1.1, abs=1e-12)
    second = latency_delta(PairedSample([Pair("t", 24.0, 37.2)]))
    assert second.delta == pytest.approx(13.2, abs=1e-12)


def test_weighted_overall():
    assert weighted_overall([(4.0, 1), (2.0, 3)]) == 2.5
    assert weighted_overall([(3.3, 7)]) == 3.3
    with pytest.raises(ValueError):
        weighted_overall([])
    with pytest.raises(ValueError):
        weighted_overall([(3.0, 0)])


def test_budget_family_guard():
    assert budget_family(ConfigKind.BASELINE) == "40min"
    assert budget_family(ConfigKind.FULL_AUGMENTED) == "90min"
    assert_same_family(ConfigKind.FULL, ConfigKind.VALIDATION_ONLY)
    with pytest.raises(ValueError):
        assert_same_family(ConfigKind.BASELINE, ConfigKind.FULL)
    for a, b in LATENCY_COMPARISONS:
        assert_same_family(a, b)  # the built-in pairs are always in-family


# -- matrix driver ------------------------------------------------------------------

def _task(i: int) -> FeatureTask:
    return FeatureTask(task_id=f"t{i}", repo_id="alpha", category="test",
                       description=f"task {i}")


def _completed(task: FeatureTask, config: ConfigKind, minutes: float = 10.0,
               composite: float = 3.5, rate_limited: bool = False) -> RunRecord:
    record = RunRecord(
        run_id=run_id_for(task.task_id, config), task_id=task.task_id,
        repo_id=task.repo_id, config=config, started_at=0.0,
        ended_at=minutes * 60, status=RunStatus.COMPLETED,
        patch=PatchInfo("b", 1, "d"), rate_limited=rate_limited,
        duration_minutes=minutes,
        judge={"composite": composite},
    )
    record.outcome = evaluate_success(record)
    return record


def test_run_matrix_runs_every_cell(tmp_path):
    store = LedgerStore(tmp_path / "runs")
    plan = ExperimentPlan(tasks=[_task(1), _task(2)],
                          configs=[ConfigKind.BASELINE, ConfigKind.AUGMENTED], seed=3)
    seen = []

    def runner(task, config):
        seen.append((task.task_id, config))
        return _completed(task, config)

    records = run_matrix(plan, runner, store, parallelism=2)
    assert len(records) == 4
    assert len(set(seen)) == 4
    assert len(store.query()) == 4


def test_run_matrix_resume_skips_existing(tmp_path):
    store = LedgerStore(tmp_path / "runs")
    store.append(_completed(_task(1), ConfigKind.BASELINE))
    plan = ExperimentPlan(tasks=[_task(1)],
                          configs=[ConfigKind.BASELINE, ConfigKind.AUGMENTED])
    calls = []

    def runner(task, config):
        calls.append(config)
        return _completed(task, config)

    run_matrix(plan, runner, store, resume=True)
    assert calls == [ConfigKind.AUGMENTED]


def test_run_matrix_survives_runner_crash(tmp_path):
    store = LedgerStore(tmp_path / "runs")
    plan = ExperimentPlan(tasks=[_task(1), _task(2)], configs=[ConfigKind.BASELINE])

    def runner(task, config):
        if task.task_id == "t1":
            raise RuntimeError("boom")
        return _completed(task, config)

    records = run_matrix(plan, runner, store)
    assert len(records) == 2
    crashed = store.load(run_id_for("t1", ConfigKind.BASELINE))
    assert crashed.status is RunStatus.FAILED
    assert crashed.outcome.status == "failure"
    assert any(e.kind == "orchestrator_panic" for e in crashed.critical_errors)


# -- report -----------------------------------------------------------------------------

def _seeded_store(tmp_path) -> LedgerStore:
    store = LedgerStore(tmp_path / "runs")
    quality = {ConfigKind.BASELINE: 3.2, ConfigKind.AUGMENTED: 3.4,
               ConfigKind.FULL: 3.5, ConfigKind.FULL_AUGMENTED: 3.7}
    minutes = {ConfigKind.BASELINE: 14.0, ConfigKind.AUGMENTED: 15.0,
               ConfigKind.FULL: 24.0, ConfigKind.FULL_AUGMENTED: 37.0}
    for i in range(4):
        for config, q in quality.items():
            store.append(_completed(_task(i), config, minutes=minutes[config],
                                    composite=q + 0.1 * i))
    return store


def test_build_report_deltas_and_latency(tmp_path):
    report = build_report(_seeded_store(tmp_path))
    assert set(report.deltas) == {f"{a.value}_vs_{b.value}" for a, b in QUALITY_COMPARISONS
                                  if f"{a.value}_vs_{b.value}" in report.deltas}
    ba = report.deltas["baseline_vs_augmented"]
    assert ba.n_pairs == 4
    assert ba.delta == pytest.approx(0.2, abs=1e-9)
    latency = report.latency["full_vs_full_augmented"]
    assert latency.delta == pytest.approx(13.0, abs=1e-9)
    assert report.overall is not None
    assert not report.failures


def test_rate_limited_runs_kept_for_quality_dropped_for_latency(tmp_path):
    store = LedgerStore(tmp_path / "runs")
    for i in range(3):
        store.append(_completed(_task(i), ConfigKind.BASELINE, minutes=10.0))
        store.append(_completed(_task(i), ConfigKind.AUGMENTED, minutes=12.0,
                                rate_limited=(i == 0)))
    report = build_report(store)
    assert report.deltas["baseline_vs_augmented"].n_pairs == 3
    assert report.latency["baseline_vs_augmented"].n_pairs == 2


def test_build_report_flags_gaps(tmp_path):
    store = LedgerStore(tmp_path / "runs")
    store.append(_completed(_task(1), ConfigKind.BASELINE))
    plan = ExperimentPlan(tasks=[_task(1)],
                          configs=[ConfigKind.BASELINE, ConfigKind.FULL])
    report = build_report(store, plan)
    assert any("t1 x full" in gap for gap in report.gaps)


def test_report_markdown_renders(tmp_path):
    report = build_report(_seeded_store(tmp_path))
    text = report.to_markdown()
    assert "baseline_vs_augmented" in text
    assert "| " in text
    payload = report.to_dict()
    assert "per_repo" in payload and "failures" in payload
