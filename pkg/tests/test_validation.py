import random
import sys
from pathlib import Path

from sddkit.artifacts import (
    ArtifactSet,
    ChangeKind,
    Dependency,
    Ecosystem,
    PlanDoc,
    SpecDoc,
    Task,
    TaskList,
    Touchpoint,
)
from sddkit.probe import DependencyRecord, Repo
from sddkit.reports import FindingCategory, Severity
from sddkit.validation import (
    CheckSpec,
    checks_report,
    find_cycle,
    run_post_hook,
    run_repo_checks,
    validate_plan,
    validate_spec,
    validate_tasks,
)
from sddkit.workflow import Phase


def _repo(tmp_path: Path) -> Repo:
    (tmp_path / "src").mkdir()
    (tmp_path / "src" / "app.py").write_text("x = 1\n")
    (tmp_path / "src" / "old.py").write_text("legacy = True\n")
    return Repo(tmp_path)


def _manifests() -> list[DependencyRecord]:
    return [DependencyRecord(name="click", ecosystem="python",
                             manifest_path="requirements.txt")]


def _passing_plan() -> PlanDoc:
    return PlanDoc(
        overview="change app",
        touchpoints=[
            Touchpoint("src/app.py", ChangeKind.MODIFY, "edit"),
            Touchpoint("src/new_mod.py", ChangeKind.CREATE, "add"),
            Touchpoint("src/old.py", ChangeKind.DELETE, "drop"),
        ],
        dependencies=[Dependency("click", Ecosystem.PYTHON)],
    )


# -- spec ---------------------------------------------------------------------

def test_validate_spec_pass_and_info():
    spec = SpecDoc(
        title="",
        requirements=["emit json output"],
        acceptance_criteria=["the json output is a valid document"],
    )
    report = validate_spec(spec)
    assert report.passed
    assert not report.findings

    uncovered = SpecDoc(
        title="",
        requirements=["support colored terminal text"],
        acceptance_criteria=["the json output is valid"],
    )
    report = validate_spec(uncovered)
    assert report.passed  # info findings do not fail the verdict
    assert any(f.severity is Severity.INFO for f in report.findings)


# -- plan mutations --------------------------------------------------------------

def test_plan_passes_then_renamed_path_flips_to_fail(tmp_path):
    repo = _repo(tmp_path)
    plan = _passing_plan()
    assert validate_plan(plan, repo, _manifests()).passed

    mutated = PlanDoc(
        overview=plan.overview,
        touchpoints=[
            Touchpoint("src/not_there.py", ChangeKind.MODIFY, "edit"),
            *plan.touchpoints[1:],
        ],
        dependencies=plan.dependencies,
    )
    report = validate_plan(mutated, repo, _manifests())
    assert not report.passed
    assert any(
        f.category is FindingCategory.PATH_MISSING and f.severity is Severity.ERROR
        for f in report.findings
    )


def test_plan_dependency_missing_from_manifest(tmp_path):
    repo = _repo(tmp_path)
    plan = PlanDoc(
        overview="o",
        touchpoints=[Touchpoint("src/app.py", ChangeKind.MODIFY, "r")],
        dependencies=[Dependency("numpy", Ecosystem.PYTHON)],
    )
    report = validate_plan(plan, repo, _manifests())
    assert not report.passed
    assert any(f.category is FindingCategory.DEPENDENCY_MISSING for f in report.findings)


def test_plan_other_ecosystem_dependency_skipped(tmp_path):
    repo = _repo(tmp_path)
    plan = PlanDoc(
        overview="o",
        touchpoints=[Touchpoint("src/app.py", ChangeKind.MODIFY, "r")],
        dependencies=[Dependency("erlang-thing", Ecosystem.OTHER)],
    )
    assert validate_plan(plan, repo, _manifests()).passed


def test_plan_create_rules(tmp_path):
    repo = _repo(tmp_path)
    existing = PlanDoc(
        overview="o",
        touchpoints=[Touchpoint("src/app.py", ChangeKind.CREATE, "r")],
    )
    report = validate_plan(existing, repo, [])
    assert report.passed  # warning only
    assert any(f.severity is Severity.WARNING for f in report.findings)

    orphan_parent = PlanDoc(
        overview="o",
        touchpoints=[Touchpoint("ghost/pkg/mod.py", ChangeKind.CREATE, "r")],
    )
    assert not validate_plan(orphan_parent, repo, []).passed


# -- tasks --------------------------------------------------------------------------

def test_tasks_two_cycle_flips_to_fail():
    ok = TaskList(tasks=[
        Task(id="a", description="first"),
        Task(id="b", description="second", depends_on=("a",)),
    ])
    assert validate_tasks(ok).passed

    cyclic = TaskList(tasks=[
        Task(id="a", description="first", depends_on=("b",)),
        Task(id="b", description="second", depends_on=("a",)),
    ])
    report = validate_tasks(cyclic)
    assert not report.passed
    assert any(f.category is FindingCategory.TASK_INFEASIBLE for f in report.findings)


def test_tasks_ordering_violation():
    out_of_order = TaskList(tasks=[
        Task(id="b", description="second", depends_on=("a",)),
        Task(id="a", description="first"),
    ])
    report = validate_tasks(out_of_order)
    assert not report.passed
    assert any(f.category is FindingCategory.ORDERING_VIOLATION for f in report.findings)


def test_tasks_path_outside_plan_is_warning_only():
    plan = PlanDoc(
        overview="o",
        touchpoints=[Touchpoint("src/app.py", ChangeKind.MODIFY, "r")],
    )
    tasks = TaskList(tasks=[Task(id="a", description="edit src/other.py first")])
    report = validate_tasks(tasks, plan)
    assert report.passed
    assert any(f.severity is Severity.WARNING for f in report.findings)


def _kahn_is_acyclic(ids: list[str], edges: dict[str, tuple[str, ...]]) -> bool:
    """Topological-sort oracle: True when every node can be output."""
    indegree = {i: 0 for i in ids}
    for tid in ids:
        for _dep in edges[tid]:
            indegree[tid] += 1
    dependents: dict[str, list[str]] = {i: [] for i in ids}
    for tid in ids:
        for dep in edges[tid]:
            dependents[dep].append(tid)
    queue = [i for i in ids if indegree[i] == 0]
    seen = 0
    while queue:
        node = queue.pop()
        seen += 1
        for follower in dependents[node]:
            indegree[follower] -= 1
            if indegree[follower] == 0:
                queue.append(follower)
    return seen == len(ids)


def test_random_graphs_match_topological_oracle():
    rng = random.Random(1234)
    for _ in range(1000):
        n = rng.randint(1, 50)
        ids = [f"t{i}" for i in range(n)]
        order = {tid: i for i, tid in enumerate(ids)}
        edges: dict[str, tuple[str, ...]] = {}
        tasks = []
        for tid in ids:
            pool = [other for other in ids if other != tid]
            k = rng.randint(0, min(3, len(pool)))
            deps = tuple(rng.sample(pool, k))
            edges[tid] = deps
            tasks.append(Task(id=tid, description="work item", depends_on=deps))
        doc = TaskList(tasks=tasks)

        acyclic = _kahn_is_acyclic(ids, edges)
        ordered = all(order[d] < order[t] for t in ids for d in edges[t])
        expected_pass = acyclic and ordered
        report = validate_tasks(doc)
        assert report.passed == expected_pass
        assert (find_cycle(doc) is None) == acyclic


# -- repo checks ------------------------------------------------------------------

def test_run_repo_checks_outcomes(tmp_path):
    repo = Repo(tmp_path)
    py = sys.executable
    checks = [
        CheckSpec(command=f"{py} -c pass", kind="test"),
        CheckSpec(command=f"{py} -c \"import sys; sys.exit(3)\"", kind="lint"),
        CheckSpec(command="definitely-not-a-binary-xyz", kind="test"),
        CheckSpec(
            command=f"{py} -c \"import time; time.sleep(5)\"",
            kind="test", timeout_seconds=0.2,
        ),
    ]
    results = run_repo_checks(repo, checks)
    assert [r.exit_status for r in results] == [0, 3, 127, -1]
    assert results[3].timed_out
    report = checks_report(results)
    assert not report.passed
    assert sum(1 for f in report.findings
               if f.category is FindingCategory.CHECK_FAILED) == 3


def test_check_output_tails_are_capped(tmp_path):
    repo = Repo(tmp_path)
    spew = f"{sys.executable} -c \"print('x' * 100000)\""
    result = run_repo_checks(repo, [CheckSpec(command=spew, kind="test")])[0]
    assert len(result.stdout_tail.encode()) <= 4096


# -- repair loop --------------------------------------------------------------------

def test_post_hook_repair_fixes_plan(tmp_path):
    repo = _repo(tmp_path)
    broken = ArtifactSet(plan=PlanDoc(
        overview="o",
        touchpoints=[Touchpoint("src/missing.py", ChangeKind.MODIFY, "r")],
    ))

    def repair(phase, report):
        return ArtifactSet(plan=_passing_plan())

    final, reports, revised = run_post_hook(
        Phase.PLAN, broken, repo, _manifests(), checks=[], repair=repair,
    )
    assert final.passed
    assert len(reports) == 2  # initial fail + repaired pass
    assert revised.plan.touchpoints[0].path == "src/app.py"


def test_post_hook_repair_budget_exhausts(tmp_path):
    repo = _repo(tmp_path)
    broken = ArtifactSet(plan=PlanDoc(
        overview="o",
        touchpoints=[Touchpoint("src/missing.py", ChangeKind.MODIFY, "r")],
    ))
    calls = []

    def stubborn(phase, report):
        calls.append(phase)
        return broken

    final, reports, _ = run_post_hook(
        Phase.PLAN, broken, repo, _manifests(), checks=[], repair=stubborn,
    )
    assert not final.passed
    assert len(calls) == 2  # the repair budget
    assert len(reports) == 3
