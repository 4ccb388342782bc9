"""Policy exploration over a document."""

import io

import pytest

from rtsched import (
    RtschedError,
    SWEEP_COLUMNS,
    SweepSpec,
    TaskSetDocument,
    best_policy,
    init,
    make_restrict,
    ms,
    run_simulation,
    run_sweep,
    write_sweep_csv,
)
from rtsched.model import PolicyConfig, TaskKind
from rtsched.sweep import RUN_METRICS


def _doc(worker_count=1):
    return TaskSetDocument.load(
        {
            "config": {"worker_count": worker_count},
            "tasks": [
                {"name": "a", "kind": "periodic", "period": ms(10)},
                {"name": "b", "kind": "periodic", "period": ms(20)},
            ],
            "versions": [
                {"task": "a", "wcet_estimate": ms(2)},
                {"task": "b", "wcet_estimate": ms(4)},
            ],
        }
    )


class TestSweepSpec:
    def test_defaults(self):
        spec = SweepSpec()
        assert spec.points() == 4  # 1 mapping x 2 priorities x 2 preemption

    def test_from_dict(self):
        spec = SweepSpec.from_dict(
            {
                "priorities": ["EDF"],
                "preemptive": [True],
                "version_modes": {"fast": ["v0"], "any": None},
                "reps": 3,
                "seed": 11,
            }
        )
        assert spec.points() == 2
        assert spec.reps == 3 and spec.seed == 11
        assert spec.version_modes == {"fast": ["v0"], "any": None}

    def test_unknown_keys_rejected(self):
        with pytest.raises(RtschedError, match="unknown sweep keys: reps_count"):
            SweepSpec.from_dict({"reps_count": 2})

    def test_bad_reps(self):
        with pytest.raises(RtschedError, match="reps must be >= 1"):
            SweepSpec.from_dict({"reps": 0})

    def test_empty_grid_rejected(self):
        with pytest.raises(RtschedError, match="grid is empty"):
            SweepSpec.from_dict({"priorities": []})


class TestMakeRestrict:
    def _state(self):
        state = init(PolicyConfig())
        t = state.task_decl("t", TaskKind.PERIODIC, period=ms(10))
        state.version_decl(t, wcet_estimate=ms(1), name="fast")
        state.version_decl(t, wcet_estimate=ms(3), name="slow")
        u = state.task_decl("u", TaskKind.PERIODIC, period=ms(10))
        state.version_decl(u, wcet_estimate=ms(1), name="only")
        return state

    def test_none_means_no_restriction(self):
        assert make_restrict(self._state(), None) is None

    def test_filters_by_name(self):
        state = self._state()
        fn = make_restrict(state, ["slow"])
        assert [v.name for v in fn(state.tasks[0])] == ["slow"]

    def test_unmatched_task_keeps_full_set(self):
        state = self._state()
        fn = make_restrict(state, ["slow"])  # task u has no "slow"
        assert [v.name for v in fn(state.tasks[1])] == ["only"]

    def test_nothing_matches_anywhere(self):
        assert make_restrict(self._state(), ["turbo"]) is None


class TestRunSweep:
    def test_row_shape_and_count(self):
        spec = SweepSpec.from_dict({"reps": 2})
        rows = run_sweep(_doc(), spec)
        assert len(rows) == spec.points() * 2 * len(RUN_METRICS)
        assert all(set(r) == set(SWEEP_COLUMNS) for r in rows)
        # seeds advance per rep
        seeds = {(r["rep"], r["seed"]) for r in rows}
        assert seeds == {(0, 0), (1, 1)}

    def test_policy_labels_follow_the_point(self):
        rows = run_sweep(_doc(), SweepSpec())
        labels = {(r["mapping"], r["priority"]): r["policy"] for r in rows}
        assert labels == {("GLOBAL", "RM"): "G-RM", ("GLOBAL", "EDF"): "G-EDF"}

    def test_single_point_matches_direct_run(self):
        doc = _doc()
        spec = SweepSpec.from_dict(
            {"priorities": ["EDF"], "preemptive": [True]}
        )
        rows = run_sweep(doc, spec)
        raw = dict(doc.data)
        raw["config"] = dict(raw["config"], priority_assignment="EDF",
                             preemptive=True, mapping_scheme="GLOBAL")
        _, report = run_simulation(TaskSetDocument.load(raw).build_state(), seed=0)
        got = {r["metric"]: r["value"] for r in rows}
        assert got["released"] == report.released
        assert got["completed"] == report.completed
        assert got["misses"] == report.misses

    def test_failing_point_aborts_naming_it(self):
        doc = TaskSetDocument.load(
            {
                # partitioned needs virt_core_id: the PARTITIONED points fail
                "tasks": [{"name": "a", "kind": "periodic", "period": ms(10)}],
                "versions": [{"task": "a", "wcet_estimate": ms(1)}],
            }
        )
        spec = SweepSpec.from_dict(
            {"mappings": ["GLOBAL", "PARTITIONED"], "priorities": ["EDF"],
             "preemptive": [True]}
        )
        with pytest.raises(RtschedError, match=r"sweep point PARTITIONED/EDF/preemptive=True/any rep 0"):
            run_sweep(doc, spec)

    def test_version_mode_changes_outcome(self):
        doc = TaskSetDocument.load(
            {
                "config": {"worker_count": 1},
                "tasks": [{"name": "a", "kind": "periodic", "period": ms(10)}],
                "versions": [
                    {"task": "a", "name": "slow", "wcet_estimate": ms(12)},
                    {"task": "a", "name": "fast", "wcet_estimate": ms(2)},
                ],
            }
        )
        spec = SweepSpec.from_dict(
            {
                "priorities": ["EDF"],
                "preemptive": [True],
                "version_modes": {"default": None, "fast": ["fast"]},
            }
        )
        rows = run_sweep(doc, spec)
        misses = {
            r["version_mode"]: r["value"] for r in rows if r["metric"] == "misses"
        }
        assert misses["default"] == 1  # preselected slow version overruns
        assert misses["fast"] == 0


class TestCsvAndBest:
    def test_csv_layout(self):
        rows = run_sweep(_doc(), SweepSpec.from_dict(
            {"priorities": ["EDF"], "preemptive": [True]}
        ))
        buf = io.StringIO()
        write_sweep_csv(rows, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == ",".join(SWEEP_COLUMNS)
        assert len(lines) == 1 + len(rows)
        assert lines[1].startswith("G-EDF,GLOBAL,EDF,True,any,0,0,released,")

    def test_best_policy_prefers_fewest_misses(self):
        doc = TaskSetDocument.load(
            {
                "config": {"worker_count": 1},
                "tasks": [
                    # DM and EDF schedule this; RM's period ordering fails it
                    {"name": "urgent", "kind": "periodic", "period": ms(20),
                     "relative_deadline": ms(4)},
                    {"name": "bulky", "kind": "periodic", "period": ms(10)},
                ],
                "versions": [
                    {"task": "urgent", "wcet_estimate": ms(3)},
                    {"task": "bulky", "wcet_estimate": ms(5)},
                ],
            }
        )
        spec = SweepSpec.from_dict(
            {"priorities": ["RM", "DM"], "preemptive": [True]}
        )
        rows = run_sweep(doc, spec)
        best = best_policy(rows)
        assert best["priority"] == "DM"
        assert best["policy"] == "G-DM"
        assert best["total_misses"] == 0
        by_prio = {}
        for r in rows:
            if r["metric"] == "misses":
                by_prio[r["priority"]] = r["value"]
        assert by_prio["RM"] > 0

    def test_best_policy_empty(self):
        assert best_policy([]) is None
