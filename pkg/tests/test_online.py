"""Scheduler core: tick arithmetic, releases, routing, dispatch."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtsched import (
    AcceleratorRegistry,
    ConfigurationError,
    MappingScheme,
    PolicyConfig,
    PriorityAssignment,
    SelectionContext,
    TaskKind,
    channel_connect,
    channel_decl,
    hyperperiod,
    init,
    ms,
    scheduler_tick_period,
    us,
)
from rtsched.graph import ChannelState
from rtsched.online import Job, JobState, ReadyQueue, SchedulerCore

from .oracles import gcd_oracle, lcm_oracle


def _periodic_state(periods, offsets=None, config=None, wcet=us(10)):
    state = init(config or PolicyConfig())
    offsets = offsets or [0] * len(periods)
    for i, (p, off) in enumerate(zip(periods, offsets)):
        tid = state.task_decl(f"t{i}", TaskKind.PERIODIC, period=p,
                              release_offset=off)
        state.version_decl(tid, wcet_estimate=wcet)
    return state

def _core(state, restrict=None):
    return SchedulerCore(
        state,
        AcceleratorRegistry(len(state.accelerators)),
        SelectionContext(),
        restrict=restrict,
    )


class TestTickPeriod:
    def test_gcd_of_periods(self):
        state = _periodic_state([ms(500), ms(1000)])
        assert scheduler_tick_period(state) == ms(500)

    def test_offsets_join_the_gcd(self):
        # a 2 ms first release must land on the wake grid
        state = _periodic_state([ms(100), ms(400)], offsets=[ms(2), 0])
        assert scheduler_tick_period(state) == ms(2)

    def test_zero_offset_ignored(self):
        state = _periodic_state([ms(6), ms(10)], offsets=[0, 0])
        assert scheduler_tick_period(state) == ms(2)

    def test_no_recurring_tasks_rejected(self):
        state = init(PolicyConfig())
        tid = state.task_decl("a", TaskKind.APERIODIC)
        state.version_decl(tid, wcet_estimate=us(10))
        with pytest.raises(ConfigurationError, match="scheduler tick"):
            scheduler_tick_period(state)

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.integers(min_value=1, max_value=5000), min_size=1, max_size=6))
    def test_matches_oracle(self, periods):
        state = _periodic_state(periods)
        assert scheduler_tick_period(state) == gcd_oracle(periods) == math.gcd(*periods)


class TestHyperperiod:
    def test_lcm_of_periods(self):
        state = _periodic_state([ms(4), ms(10)])
        assert hyperperiod(state) == ms(20)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(min_value=1, max_value=300), min_size=1, max_size=5))
    def test_matches_oracle(self, periods):
        state = _periodic_state(periods)
        assert hyperperiod(state) == lcm_oracle(periods)

    def test_overflow_capped(self):
        # pairwise-coprime large periods push the lcm past any usable horizon
        primes = [2_000_000_011, 2_000_000_033, 2_000_000_089, 2_000_000_099]
        state = _periodic_state(primes)
        with pytest.raises(ConfigurationError, match="horizon"):
            hyperperiod(state)

    def test_no_recurring_tasks_rejected(self):
        state = init(PolicyConfig())
        tid = state.task_decl("a", TaskKind.APERIODIC)
        state.version_decl(tid, wcet_estimate=us(10))
        with pytest.raises(ConfigurationError, match="hyperperiod"):
            hyperperiod(state)


class TestActivation:
    def _sporadic_core(self):
        state = init(PolicyConfig())
        tid = state.task_decl("s", TaskKind.SPORADIC, period=ms(5))
        state.version_decl(tid, wcet_estimate=us(10))
        aid = state.task_decl("a", TaskKind.APERIODIC)
        state.version_decl(aid, wcet_estimate=us(10))
        return _core(state), tid, aid

    def test_sporadic_min_separation(self):
        core, tid, _ = self._sporadic_core()
        assert core.activate(tid, now=0) == 0
        assert core.activate(tid, now=ms(2)) == ms(5)  # pushed out
        assert core.activate(tid, now=ms(11)) == ms(11)  # gap already open

    def test_aperiodic_immediate(self):
        core, _, aid = self._sporadic_core()
        assert core.activate(aid, now=ms(3)) == ms(3)
        assert core.activate(aid, now=ms(3)) == ms(3)  # no separation rule


class TestDueReleases:
    def test_periodic_schedule(self):
        state = _periodic_state([ms(10)])
        core = _core(state)
        jobs = core.due_releases(now=0)
        assert [(j.task.name, j.seq, j.abs_release) for j in jobs] == [("t0", 0, 0)]
        assert core.due_releases(now=ms(5)) == []
        jobs = core.due_releases(now=ms(20))  # catches up on both due instants
        assert [j.abs_release for j in jobs] == [ms(10), ms(20)]

    def test_offset_delays_first_release(self):
        state = _periodic_state([ms(10)], offsets=[ms(4)])
        core = _core(state)
        assert core.due_releases(now=0) == []
        jobs = core.due_releases(now=ms(4))
        assert [j.abs_release for j in jobs] == [ms(4)]

    def test_horizon_blocks_release_at_end(self):
        state = _periodic_state([ms(10)])
        core = _core(state)
        jobs = core.due_releases(now=ms(10), horizon=ms(10))
        assert [j.abs_release for j in jobs] == [0]

    def test_pending_activations_sorted_by_instant(self):
        core, tid, aid = TestActivation()._sporadic_core()
        core.activate(aid, now=ms(2))
        core.activate(tid, now=ms(1))
        jobs = core.due_releases(now=ms(2))
        assert [(j.task.name, j.abs_release) for j in jobs] == [
            ("s", ms(1)),
            ("a", ms(2)),
        ]

    def test_sporadic_not_released_by_clock(self):
        state = init(PolicyConfig())
        tid = state.task_decl("s", TaskKind.SPORADIC, period=ms(5))
        state.version_decl(tid, wcet_estimate=us(10))
        p = state.task_decl("p", TaskKind.PERIODIC, period=ms(5))
        state.version_decl(p, wcet_estimate=us(10))
        core = _core(state)
        jobs = core.due_releases(now=ms(20))
        assert all(j.task.name == "p" for j in jobs)


class TestMakeJob:
    def test_implicit_deadline_is_period(self):
        state = _periodic_state([ms(10)])
        core = _core(state)
        job = core.make_job(state.tasks[0], ms(30))
        assert job.abs_deadline == ms(40)
        assert job.state is JobState.READY

    def test_explicit_deadline(self):
        state = init(PolicyConfig())
        tid = state.task_decl("t", TaskKind.PERIODIC, period=ms(10),
                              relative_deadline=ms(7))
        state.version_decl(tid, wcet_estimate=us(10))
        core = _core(state)
        assert core.make_job(state.task(tid), ms(10)).abs_deadline == ms(17)

    def test_seq_increments_per_task(self):
        state = _periodic_state([ms(10), ms(10)])
        core = _core(state)
        a = core.make_job(state.tasks[0], 0)
        b = core.make_job(state.tasks[0], ms(10))
        c = core.make_job(state.tasks[1], 0)
        assert (a.seq, b.seq, c.seq) == (0, 1, 0)
        assert a.job_id == (0, 0) and c.job_id == (1, 0)

    def _graph_state(self, node_deadline=None):
        state = init(PolicyConfig())
        root = state.task_decl("root", TaskKind.PERIODIC, period=ms(10),
                               relative_deadline=ms(8))
        state.version_decl(root, wcet_estimate=us(10))
        node = state.task_decl("node", TaskKind.GRAPH_NODE,
                               relative_deadline=node_deadline)
        state.version_decl(node, wcet_estimate=us(10))
        ch = channel_decl(state, "c", element_size=8, capacity=4)
        channel_connect(state, ch, root, node)
        return state, root, node

    def test_graph_node_inherits_root_deadline_per_iteration(self):
        state, root, node = self._graph_state()
        core = _core(state)
        # two root releases establish the iteration series
        core.make_job(state.task(root), 0)
        core.make_job(state.task(root), ms(10))
        j0 = core.make_job(state.task(node), ms(3))   # iteration 0, fired late
        j1 = core.make_job(state.task(node), ms(12))
        assert j0.abs_deadline == ms(8)    # 0 + root deadline
        assert j1.abs_deadline == ms(18)   # 10 ms release + root deadline

    def test_graph_node_local_deadline_wins(self):
        state, root, node = self._graph_state(node_deadline=ms(2))
        core = _core(state)
        core.make_job(state.task(root), 0)
        j = core.make_job(state.task(node), ms(3))
        assert j.abs_deadline == ms(5)  # measured from its own activation

    def test_graph_node_borrows_root_period_for_rm(self):
        state, root, node = self._graph_state()
        state.config = PolicyConfig(priority_assignment=PriorityAssignment.RM)
        core = _core(state)
        jr = core.make_job(state.task(root), 0)
        jn = core.make_job(state.task(node), 0)
        assert jn.key.primary == jr.key.primary == ms(10)


class TestReadyQueue:
    def _job(self, core, state, name_idx, release):
        return core.make_job(state.tasks[name_idx], release)

    def test_first_dispatchable_skips_parked(self):
        state = _periodic_state([ms(10), ms(20)])
        core = _core(state)
        q = ReadyQueue()
        a = self._job(core, state, 0, 0)
        b = self._job(core, state, 1, 0)
        q.insert(b)
        q.insert(a)
        q.sort()
        assert q.first_dispatchable() is a  # RM-by-default: shorter period
        a.blocked_on = {0}
        assert q.first_dispatchable() is b
        b.blocked_on = {1}
        assert q.first_dispatchable() is None
        q.remove(a)
        assert len(q) == 1


class TestRouting:
    def test_global_single_queue_all_workers(self):
        state = _periodic_state(
            [ms(10)], config=PolicyConfig(worker_count=3)
        )
        core = _core(state)
        job = core.make_job(state.tasks[0], 0)
        assert core.queue_count == 1
        assert core.queue_for(job) == 0
        assert list(core.workers_of_queue(0)) == [0, 1, 2]

    def test_partitioned_routes_by_core(self):
        cfg = PolicyConfig(
            mapping_scheme=MappingScheme.PARTITIONED, worker_count=2
        )
        state = init(cfg)
        t0 = state.task_decl("t0", TaskKind.PERIODIC, period=ms(10), virt_core_id=1)
        state.version_decl(t0, wcet_estimate=us(10))
        core = _core(state)
        job = core.make_job(state.task(t0), 0)
        assert core.queue_count == 2
        assert core.queue_for(job) == 1
        assert list(core.workers_of_queue(1)) == [1]


class TestDispatch:
    def _two_task_core(self, worker_count=1):
        state = _periodic_state(
            [ms(10), ms(20)], config=PolicyConfig(worker_count=worker_count)
        )
        core = _core(state)
        hi = core.make_job(state.tasks[0], 0)
        lo = core.make_job(state.tasks[1], 0)
        return core, hi, lo

    def test_start_highest_ready(self):
        core, hi, lo = self._two_task_core()
        core.queues[0].insert(lo)
        core.queues[0].insert(hi)
        core.queues[0].sort()
        action, job, acquired = core.pick_next(0, None)
        assert (action, job, acquired) == ("start", hi, [])
        assert core.queues[0].items == [lo]

    def test_stack_top_beats_lower_queue_head(self):
        core, hi, lo = self._two_task_core()
        core.queues[0].insert(lo)
        action, job, _ = core.pick_next(0, hi)
        assert (action, job) == ("resume", hi)
        assert core.queues[0].items == [lo]  # untouched

    def test_queue_head_beats_lower_stack_top(self):
        core, hi, lo = self._two_task_core()
        core.queues[0].insert(hi)
        action, job, _ = core.pick_next(0, lo)
        assert (action, job) == ("start", hi)

    def test_idle_when_nothing_runnable(self):
        core, hi, lo = self._two_task_core()
        assert core.pick_next(0, None) == ("idle", None, [])

    def test_resume_stack_when_queue_empty(self):
        core, hi, lo = self._two_task_core()
        action, job, _ = core.pick_next(0, lo)
        assert (action, job) == ("resume", lo)

    def test_channel_blocked_stack_not_resumed(self):
        core, hi, lo = self._two_task_core()
        lo.channel_blocked = True
        assert core.pick_next(0, lo) == ("idle", None, [])

    def test_preemption_targets(self):
        core, hi, lo = self._two_task_core(worker_count=2)
        core.queues[0].insert(hi)
        core.queues[0].sort()
        running = [lo, None]
        assert core.preemption_targets(0, running) == [0]
        running = [hi, None]
        core.queues[0].items[0] = lo
        assert core.preemption_targets(0, running) == []

    def _accel_core(self):
        """Two tasks sharing one accelerator; hi has a cpu fallback version."""
        state = init(PolicyConfig())
        gpu = state.hwaccel_decl("gpu")
        lo = state.task_decl("lo", TaskKind.PERIODIC, period=ms(50))
        v_lo = state.version_decl(lo, wcet_estimate=ms(5))
        state.hwaccel_use(lo, v_lo, gpu)
        hi = state.task_decl("hi", TaskKind.PERIODIC, period=ms(10))
        v_hi = state.version_decl(hi, wcet_estimate=ms(1))
        state.hwaccel_use(hi, v_hi, gpu)
        core = _core(state)
        return state, core, lo, hi

    def test_accel_conflict_parks_and_boosts(self):
        state, core, lo_id, hi_id = self._accel_core()
        lo = core.make_job(state.task(lo_id), 0)
        core.queues[0].insert(lo)
        action, job, acquired = core.pick_next(0, None)
        assert (action, job, acquired) == ("start", lo, [0])

        hi = core.make_job(state.task(hi_id), 0)
        core.queues[0].insert(hi)
        core.queues[0].sort()
        action, job, _ = core.pick_next(0, None)
        assert action == "idle"  # hi is parked on the gpu
        assert hi.blocked_on == {0}
        assert lo.effective_key() == hi.key  # inheritance applied

        freed = core.registry.release_all(lo)
        assert freed == [0]
        assert core.unblock_accel_waiters(freed) == [hi]
        assert hi.blocked_on == set()
        action, job, acquired = core.pick_next(0, None)
        assert (action, job, acquired) == ("start", hi, [0])

    def test_accel_conflict_switches_to_free_version(self):
        state, core, lo_id, hi_id = self._accel_core()
        # cpu fallback for hi, declared second so the gpu version is the
        # preselected favourite
        v_cpu = state.version_decl(hi_id, wcet_estimate=ms(2))

        lo = core.make_job(state.task(lo_id), 0)
        core.queues[0].insert(lo)
        core.pick_next(0, None)

        hi = core.make_job(state.task(hi_id), 0)
        assert hi.version.version_id == v_cpu  # avoided at creation already
        core.queues[0].insert(hi)
        core.queues[0].sort()
        action, job, acquired = core.pick_next(0, None)
        assert (action, job, acquired) == ("start", hi, [])
        assert hi.blocked_on == set()

    def test_partial_unblock_keeps_job_parked(self):
        state = init(PolicyConfig())
        a0 = state.hwaccel_decl("a0")
        a1 = state.hwaccel_decl("a1")
        t = state.task_decl("t", TaskKind.PERIODIC, period=ms(10))
        v = state.version_decl(t, wcet_estimate=ms(1))
        state.hwaccel_use(t, v, a0)
        state.hwaccel_use(t, v, a1)
        core = _core(state)
        job = core.make_job(state.task(t), 0)
        job.blocked_on = {0, 1}
        core.queues[0].insert(job)
        assert core.unblock_accel_waiters([0]) == []
        assert job.blocked_on == {1}
        assert core.unblock_accel_waiters([1]) == [job]


class TestWorkPending:
    def test_periodic_before_horizon(self):
        state = _periodic_state([ms(10)])
        core = _core(state)
        assert core.work_pending({}, horizon=ms(10)) is True
        core.due_releases(now=0, horizon=ms(10))
        assert core.work_pending({}, horizon=ms(10)) is False

    def test_pending_activation_counts(self):
        core, tid, aid = TestActivation()._sporadic_core()
        # flush initial periodic arrivals out of the window
        core.work_pending({}, horizon=0)
        core.activate(aid, now=ms(3))
        assert core.work_pending({}, horizon=ms(5)) is True
        core.due_releases(now=ms(3))
        assert core.work_pending({}, horizon=0) is False

    def test_graph_tokens_count(self):
        state = init(PolicyConfig())
        root = state.task_decl("root", TaskKind.PERIODIC, period=ms(10))
        state.version_decl(root, wcet_estimate=us(10))
        node = state.task_decl("node", TaskKind.GRAPH_NODE)
        state.version_decl(node, wcet_estimate=us(10))
        ch = channel_decl(state, "c", element_size=8, capacity=4)
        channel_connect(state, ch, root, node)
        core = _core(state)
        core.due_releases(now=ms(100), horizon=ms(100))  # drain periodic arrivals
        channels = {ch: ChannelState(state.channels[ch])}
        assert core.work_pending(channels, horizon=ms(100)) is False
        channels[ch].push("frame")
        assert core.work_pending(channels, horizon=ms(100)) is True
        jobs = core.graph_activations(channels, now=ms(50))
        assert [j.task.name for j in jobs] == ["node"]
        # the reservation consumed the token: no double activation
        assert core.graph_activations(channels, now=ms(50)) == []
