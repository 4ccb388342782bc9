"""Virtual-time backend: a deterministic discrete-event simulator.

The simulator executes the same scheduling core as the thread backend but
under a synthetic clock, so a run is a pure function of (task set, job
model, horizon, seed) and equal inputs produce byte-identical trace CSVs.

Costs are explicit knobs.  With all knobs at zero the engine realises the
ideal schedule: releases land exactly on their theoretical instants and
critical sections take no time.  With non-zero knobs the FIFO queue lock
serialises the scheduler and the workers, making the classic blocking
bounds observable in the trace.

Same-instant ordering is fixed: control events (scripted activations, mode
switches), then the scheduler tick, then job completions, then everything
else in scheduling order.  This is part of the deterministic contract.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Callable

from .errors import ConfigurationError, UsageError, ValidationError
from .graph import ChannelState, input_channels, output_channels, push_count, required_tokens
from .model import (
    ClockSource,
    MappingScheme,
    MiddlewareState,
    PolicyConfig,
    TaskDescriptor,
    VersionDescriptor,
)
from .offline import ScheduleTable
from .online import Job, JobState, SchedulerCore, hyperperiod, scheduler_tick_period
from .tracing import (
    SCHEDULER_WORKER,
    Overheads,
    RunReport,
    TraceEvent,
    compute_overheads,
)
from .versions import AcceleratorRegistry, SelectionContext

# event ordering classes at equal timestamps
_P_CONTROL = 0
_P_TICK = 1
_P_DONE = 2
_P_MISC = 3

_EVENT_CAP = 2_000_000


def policy_label(config: PolicyConfig) -> str:
    if config.mapping_scheme is MappingScheme.OFFLINE:
        return "O-TABLE"
    prefix = "G" if config.mapping_scheme is MappingScheme.GLOBAL else "P"
    return f"{prefix}-{config.priority_assignment.value}"


@dataclass
class SimJobModel:
    """Synthetic execution model for simulated runs.

    exec_time maps a task name to either a duration, a distribution, or a
    per-version-name mapping of those.  A distribution is a dict like
    {"dist": "uniform", "low": a, "high": b} or
    {"dist": "normal", "mean": m, "std": s}; samples are drawn from the
    run's seeded generator and clamped to >= 0.  Unmapped versions execute
    for exactly their wcet_estimate.

    The four cost knobs inject scheduling overheads.  body_ops overrides
    the derived channel behaviour of a task (pops at start, pushes at the
    end) with explicit (offset_ns, "push"|"pop", channel_name, count)
    tuples splitting the execution body.
    """

    exec_time: dict = field(default_factory=dict)
    get_task_cost: int = 0
    sched_scan_cost_per_task: int = 0
    sort_cost_per_element: int = 0
    context_switch_cost: int = 0
    activations: list[tuple[int, str]] = field(default_factory=list)
    mode_schedule: list[tuple[int, frozenset]] = field(default_factory=list)
    execution_mode: frozenset = frozenset()
    permission_mask: frozenset = frozenset()
    battery_level: float | None = None
    alpha: float = 0.5
    pip_enabled: bool = True
    body_ops: dict = field(default_factory=dict)


def parse_horizon(text: str | int | None, base: int | None) -> int | None:
    """Horizon argument: ns int, '<n>hp' hyperperiods, or ms/us/s sugar."""
    if text is None or isinstance(text, int):
        return text
    t = text.strip().lower()
    try:
        if t.endswith("hp"):
            if base is None:
                raise ConfigurationError(
                    "hyperperiod horizon requested but no recurring periods exist"
                )
            return int(t[:-2] or "1") * base
        if t.endswith("ms"):
            return int(round(float(t[:-2]) * 1_000_000))
        if t.endswith("us"):
            return int(round(float(t[:-2]) * 1_000))
        if t.endswith("ns"):
            return int(t[:-2])
        if t.endswith("s"):
            return int(round(float(t[:-1]) * 1_000_000_000))
        return int(t)
    except ValueError:
        raise ConfigurationError(f"cannot parse horizon {text!r}") from None


# --------------------------------------------------------------- helpers


class _FifoLock:
    """Virtual FIFO lock: grants strictly in request order."""

    __slots__ = ("holder", "waiters")

    def __init__(self) -> None:
        self.holder: str | None = None
        self.waiters: list[tuple[str, int, Callable]] = []  # (actor, t_req, fn)

    def request(self, now: int, actor: str, grant: Callable[[int, int], None]) -> None:
        if self.holder is None:
            self.holder = actor
            grant(now, 0)
        else:
            self.waiters.append((actor, now, grant))

    def release(self, now: int) -> None:
        assert self.holder is not None
        self.holder = None
        if self.waiters:
            actor, t_req, grant = self.waiters.pop(0)
            self.holder = actor
            grant(now, now - t_req)


class _WorkerSim:
    __slots__ = (
        "idx",
        "current",
        "stack",
        "idle",
        "pending_pull",
        "pending_notify",
        "in_cs",
    )

    def __init__(self, idx: int) -> None:
        self.idx = idx
        self.current: Job | None = None
        self.stack: list[Job] = []
        self.idle = True
        self.pending_pull = False  # a pull is queued on the lock
        self.pending_notify = False
        self.in_cs = False


class _JobExec:
    """Execution progress of one dispatched job."""

    __slots__ = ("program", "step", "left", "seg_end", "gen", "duration", "overrun")

    def __init__(self, program: list, duration: int):
        self.program = program
        self.step = 0
        self.left = 0  # tokens or ns remaining within the current step
        self.seg_end = 0
        self.gen = 0
        self.duration = duration
        self.overrun = 0


# ---------------------------------------------------------------- engine


class _Engine:
    def __init__(
        self,
        state: MiddlewareState,
        model: SimJobModel,
        horizon: int,
        seed: int,
        restrict: Callable[[TaskDescriptor], list[VersionDescriptor]] | None,
    ):
        self.state = state
        self.model = model
        self.horizon = horizon
        self.rng = random.Random(seed)
        self.now = 0
        self._heap: list = []
        self._seq = 0
        self.trace: list[TraceEvent] = []
        self.report = RunReport()
        self.events_done = 0

        self.registry = AcceleratorRegistry(
            len(state.accelerators), pip_enabled=model.pip_enabled
        )
        self.ctx = SelectionContext(
            now=0,
            execution_mode=frozenset(model.execution_mode),
            permission_mask=frozenset(model.permission_mask),
            battery_probe=(
                (lambda: model.battery_level) if model.battery_level is not None else None
            ),
            alpha=model.alpha,
        )
        self.core = SchedulerCore(state, self.registry, self.ctx, restrict=restrict)
        self.channels = {c.channel_id: ChannelState(c) for c in state.channels}
        self.chan_prod_waiters: dict[int, list] = {c: [] for c in self.channels}
        self.chan_cons_waiters: dict[int, list] = {c: [] for c in self.channels}
        self.workers = [_WorkerSim(i) for i in range(state.config.worker_count)]
        self.locks = [_FifoLock() for _ in self.core.queues]
        self.execs: dict[tuple[int, int], _JobExec] = {}
        self.live_jobs: set[tuple[int, int]] = set()
        self._offline_blocked: dict = {}
        self._offline_finish: dict = {}
        self._sched_active = False
        self._sched_missed = False
        self._tick_armed = False
        offline = state.config.mapping_scheme is MappingScheme.OFFLINE
        self.tick = 0 if offline else scheduler_tick_period(state)

    # ------------------------------------------------------- plumbing

    def push_event(self, t: int, prio: int, fn: Callable[[], None]) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, prio, self._seq, fn))

    def emit(self, kind: str, *, task: str = "", seq: int | None = None,
             worker: int | None = None, t: int | None = None, **payload) -> None:
        self.trace.append(
            TraceEvent(
                timestamp_ns=self.now if t is None else t,
                kind=kind,
                task=task,
                job_seq=seq,
                worker=worker,
                payload=payload,
            )
        )

    def run(self) -> None:
        for t, mask in sorted(self.model.mode_schedule):
            self.push_event(t, _P_CONTROL, self._mk_mode(frozenset(mask)))
        for t, name in sorted(self.model.activations):
            self.push_event(t, _P_CONTROL, self._mk_activation(name, t))
        self._arm_tick(0)

        while self._heap:
            t, prio, _, fn = heapq.heappop(self._heap)
            assert t >= self.now, "virtual time must be monotonic"
            self.now = t
            self.ctx.now = t
            fn()
            self.events_done += 1
            if self.events_done > _EVENT_CAP:
                self.report.truncated = True
                self.report.warnings.append("event cap reached; run truncated")
                break

        if self.live_jobs:
            self.report.truncated = True
            names = ", ".join(f"{self.state.tasks[t].name}#{s}" for t, s in sorted(self.live_jobs))
            self.report.warnings.append(f"run ended with unfinished jobs: {names}")
            for tid, s in sorted(self.live_jobs):
                task = self.state.tasks[tid]
                self.report.task(task.name).misses += 1
                self.report.misses += 1

    def _mk_mode(self, mask: frozenset) -> Callable[[], None]:
        def fn() -> None:
            self.ctx.execution_mode = mask

        return fn

    def _mk_activation(self, name: str, t: int) -> Callable[[], None]:
        def fn() -> None:
            task = self.state.task_by_name(name)
            self.core.activate(task.task_id, t)
            self._maybe_rearm_tick()

        return fn

    # ------------------------------------------------------ scheduler

    def _arm_tick(self, t: int) -> None:
        if not self._tick_armed:
            self._tick_armed = True
            self.push_event(t, _P_TICK, self._tick_fn)

    def _maybe_rearm_tick(self) -> None:
        """Past the horizon nothing new arrives on the clock, but the tick
        keeps firing while a pass could still release something: pipelined
        graph iterations need ticks to move tokens toward the sinks."""
        if self._tick_armed or self.tick <= 0:
            return
        grid = (self.now // self.tick + 1) * self.tick
        if grid < self.horizon or self._sched_active or self.core.work_pending(
            self.channels, self.horizon
        ):
            self._arm_tick(grid)

    def _tick_fn(self) -> None:
        self._tick_armed = False
        self._maybe_rearm_tick()
        if self._sched_active:
            self._sched_missed = True  # single scheduler: coalesce
            return
        self._sched_pass()

    def _sched_pass(self) -> None:
        self._sched_active = True
        if self.core.global_mapping:
            self.locks[0].request(self.now, "sched", self._mk_tick_cs(0))
        else:
            # scan happens outside any lock under partitioned mapping
            scan = self.model.sched_scan_cost_per_task * len(self.state.tasks)
            self.emit("tick_begin", worker=SCHEDULER_WORKER)
            jobs = self._collect_releases()
            by_queue: dict[int, list[Job]] = {}
            for job in jobs:
                by_queue.setdefault(self.core.queue_for(job), []).append(job)
            self.push_event(
                self.now + scan, _P_MISC, lambda: self._part_insert(sorted(by_queue), by_queue)
            )

    def _sched_done(self) -> None:
        self._sched_active = False
        if self._sched_missed:
            self._sched_missed = False
            self._sched_pass()

    def _collect_releases(self) -> list[Job]:
        jobs = self.core.due_releases(self.now, self.horizon)
        jobs.extend(self.core.graph_activations(self.channels, self.now))
        for job in jobs:
            self.emit(
                "release_theoretical",
                task=job.task.name,
                seq=job.seq,
                t=job.abs_release,
            )
            self.live_jobs.add(job.job_id)
        return jobs

    def _mk_tick_cs(self, qi: int) -> Callable[[int, int], None]:
        def grant(now: int, waited: int) -> None:
            self.emit(
                "lock_wait",
                worker=SCHEDULER_WORKER,
                wait=waited,
                purpose="tick",
                queue=qi,
            )
            self.emit("tick_begin", worker=SCHEDULER_WORKER)
            jobs = self._collect_releases()
            queue = self.core.queues[qi]
            for job in jobs:
                queue.insert(job)
            queue.sort()
            cost = self.model.sched_scan_cost_per_task * len(self.state.tasks)
            cost += self.model.sort_cost_per_element * len(queue)
            self.push_event(now + cost, _P_MISC, lambda: self._tick_cs_end(qi, jobs))

        return grant

    def _tick_cs_end(self, qi: int, jobs: list[Job]) -> None:
        for job in jobs:
            job.release_effective = self.now
            self.report.task(job.task.name).released += 1
            self.report.released += 1
            self.emit("release_effective", task=job.task.name, seq=job.seq)
        self.emit("tick_end", worker=SCHEDULER_WORKER)
        self.locks[qi].release(self.now)
        self._after_insert(qi)
        self._sched_done()

    def _part_insert(self, order: list[int], by_queue: dict[int, list[Job]]) -> None:
        # lock each touched per-core queue in turn, then close the tick
        def step(idx: int) -> None:
            if idx == len(order):
                self.emit("tick_end", worker=SCHEDULER_WORKER)
                self._sched_done()
                return
            qi = order[idx]

            def grant(now: int, waited: int) -> None:
                self.emit(
                    "lock_wait",
                    worker=SCHEDULER_WORKER,
                    wait=waited,
                    purpose="tick",
                    queue=qi,
                )
                queue = self.core.queues[qi]
                for job in by_queue[qi]:
                    queue.insert(job)
                queue.sort()
                cost = self.model.sort_cost_per_element * len(queue)

                def cs_end() -> None:
                    for job in by_queue[qi]:
                        job.release_effective = self.now
                        self.report.task(job.task.name).released += 1
                        self.report.released += 1
                        self.emit("release_effective", task=job.task.name, seq=job.seq)
                    self.locks[qi].release(self.now)
                    self._after_insert(qi)
                    step(idx + 1)

                self.push_event(now + cost, _P_MISC, cs_end)

            self.locks[qi].request(self.now, "sched", grant)

        step(0)

    def _after_insert(self, qi: int) -> None:
        """Wake idle workers and notify preemption targets of queue qi."""
        queue = self.core.queues[qi]
        dispatchable = sum(1 for j in queue.items if not j.blocked_on)
        idle = [
            w
            for w in self.core.workers_of_queue(qi)
            if self.workers[w].idle and not self.workers[w].pending_pull
        ]
        for w in idle[:dispatchable]:
            self.workers[w].pending_pull = True
            self.push_event(self.now, _P_MISC, self._mk_pull(w, qi))
        if self.state.config.preemptive:
            running = [
                w.current if (w.current is not None and not w.in_cs) else None
                for w in self.workers
            ]
            for w in self.core.preemption_targets(qi, running):
                if not self.workers[w].pending_notify:
                    self.workers[w].pending_notify = True
                    self.push_event(self.now, _P_MISC, self._mk_notify(w, qi))

    # -------------------------------------------------------- workers

    def _queue_of_worker(self, w: int) -> int:
        return 0 if self.core.global_mapping else w

    def _mk_pull(self, w: int, qi: int) -> Callable[[], None]:
        def fn() -> None:
            ws = self.workers[w]
            ws.pending_pull = False
            if not ws.idle:
                return
            self._request_pull(w, qi)

        return fn

    def _request_pull(self, w: int, qi: int) -> None:
        ws = self.workers[w]
        ws.idle = False
        t_req = self.now

        def grant(now: int, waited: int) -> None:
            ws.in_cs = True
            stack_top = ws.stack[-1] if ws.stack else None
            action, job, acquired = self.core.pick_next(qi, stack_top)
            cost = self.model.get_task_cost
            self.emit(
                "lock_wait",
                worker=w,
                wait=waited,
                held=cost,
                purpose="get_task",
                got=action,
            )
            for a in acquired:
                self.emit(
                    "accel_acquire",
                    task=job.task.name,
                    seq=job.seq,
                    worker=w,
                    accel=self.state.accelerators[a].name,
                )
            self.push_event(now + cost, _P_MISC, lambda: self._pull_cs_end(w, qi, action, job))

        self.locks[qi].request(t_req, "worker", grant)

    def _pull_cs_end(self, w: int, qi: int, action: str, job: Job | None) -> None:
        ws = self.workers[w]
        ws.in_cs = False
        self.locks[qi].release(self.now)
        if action == "idle":
            ws.idle = True
            return
        if action == "resume":
            assert job is ws.stack[-1]
            ws.stack.pop()
            cost = self.model.context_switch_cost
            self.push_event(self.now + cost, _P_MISC, lambda: self._do_resume(w, job, cost))
            return
        # fresh start
        assert job is not None and job.worker is None
        job.worker = w
        ws.current = job
        job.state = JobState.RUNNING
        cost = self.model.context_switch_cost if ws.stack else 0
        self.push_event(self.now + cost, _P_MISC, lambda: self._do_start(w, job))

    def _do_start(self, w: int, job: Job) -> None:
        job.started = self.now
        self.emit("job_start", task=job.task.name, seq=job.seq, worker=w,
                  version=job.version.name)
        self.execs[job.job_id] = self._build_exec(job)
        self._advance(w, job)

    def _do_resume(self, w: int, job: Job, switch: int) -> None:
        ws = self.workers[w]
        ws.current = job
        job.state = JobState.RUNNING
        self.emit("resume", task=job.task.name, seq=job.seq, worker=w, switch=switch)
        self._advance(w, job)

    def _mk_notify(self, w: int, qi: int) -> Callable[[], None]:
        def fn() -> None:
            ws = self.workers[w]
            ws.pending_notify = False
            if ws.idle:
                if not ws.pending_pull:
                    self._request_pull(w, qi)
                return
            if ws.current is None or ws.in_cs:
                return  # a pull is in flight; it will see the head anyway
            job = ws.current
            self._pause_exec(job)

            def grant(now: int, waited: int) -> None:
                ws.in_cs = True
                cost = self.model.get_task_cost
                head = self.core.queues[qi].first_dispatchable()
                if head is not None and head.effective_key() < job.effective_key():
                    switch = self.model.context_switch_cost
                    self.emit(
                        "lock_wait", worker=w, wait=waited, held=cost,
                        purpose="get_task", got="preempt",
                    )
                    self.emit(
                        "preempt", task=job.task.name, seq=job.seq, worker=w,
                        switch=switch,
                        by=head.task.name,
                    )
                    job.state = JobState.PREEMPTED
                    ws.stack.append(job)
                    ws.current = None
                    action, nxt, acquired = self.core.pick_next(qi, ws.stack[-1])
                    for a in acquired:
                        self.emit(
                            "accel_acquire", task=nxt.task.name, seq=nxt.seq,
                            worker=w, accel=self.state.accelerators[a].name,
                        )
                    self.push_event(
                        now + cost, _P_MISC,
                        lambda: self._pull_cs_end(w, qi, action, nxt),
                    )
                else:
                    self.emit(
                        "lock_wait", worker=w, wait=waited, held=cost,
                        purpose="get_task", got="none",
                    )
                    self.push_event(now + cost, _P_MISC, lambda: self._notify_stale(w, job))

            self.locks[qi].request(self.now, "worker", grant)

        return fn

    def _notify_stale(self, w: int, job: Job) -> None:
        ws = self.workers[w]
        ws.in_cs = False
        self.locks[self._queue_of_worker(w)].release(self.now)
        self._advance(w, job)  # continue where the handler interrupted

    # ------------------------------------------------- job execution

    def _exec_duration(self, job: Job) -> int:
        spec = self.model.exec_time.get(job.task.name)
        if isinstance(spec, dict) and "dist" not in spec:
            spec = spec.get(job.version.name)
        if spec is None:
            return job.version.wcet_estimate
        if isinstance(spec, dict):
            if spec["dist"] == "uniform":
                return max(0, int(self.rng.randint(int(spec["low"]), int(spec["high"]))))
            if spec["dist"] == "normal":
                return max(0, int(round(self.rng.gauss(float(spec["mean"]), float(spec["std"])))))
            raise ConfigurationError(f"unknown distribution {spec['dist']!r}")
        return int(spec)

    def _build_exec(self, job: Job) -> _JobExec:
        duration = self._exec_duration(job)
        tid = job.task.task_id
        ops = self.model.body_ops.get(job.task.name)
        program: list[tuple] = []
        if ops is not None:
            cursor = 0
            for off, op, chname, count in sorted(ops, key=lambda o: o[0]):
                off = min(off, duration)
                if off > cursor:
                    program.append(("exec", off - cursor))
                    cursor = off
                cid = next(c.channel_id for c in self.state.channels if c.name == chname)
                program.append((op, cid, count))
            if cursor < duration:
                program.append(("exec", duration - cursor))
        else:
            for ch in input_channels(self.state, tid):
                program.append(("pop", ch.channel_id, required_tokens(self.state, tid, ch.channel_id)))
            program.append(("exec", duration))
            for ch in output_channels(self.state, tid):
                program.append(("push", ch.channel_id, push_count(self.state, tid, ch.channel_id)))
        ex = _JobExec(program, duration)
        if duration > job.version.wcet_estimate:
            ex.overrun = duration - job.version.wcet_estimate
        return ex

    def _advance(self, w: int, job: Job) -> None:
        """Run the job's program until it blocks, sleeps, or completes."""
        ws = self.workers[w]
        assert ws.current is job
        ex = self.execs[job.job_id]
        job.channel_blocked = False
        while ex.step < len(ex.program):
            kind = ex.program[ex.step][0]
            if kind == "exec":
                dur = ex.program[ex.step][1] if ex.left == 0 else ex.left
                ex.left = dur
                ex.seg_end = self.now + dur
                ex.gen += 1
                gen = ex.gen
                self.push_event(ex.seg_end, _P_DONE, self._mk_seg_done(w, job, gen))
                return
            _, cid, count = ex.program[ex.step]
            if ex.left == 0:
                ex.left = count
            ch = self.channels[cid]
            while ex.left > 0:
                if kind == "pop":
                    if not ch.can_pop():
                        self._park_on_channel(self.chan_cons_waiters[cid], w, job)
                        return
                    ch.pop()
                    self._wake_channel(self.chan_prod_waiters[cid])
                else:
                    if not ch.can_push():
                        self._park_on_channel(self.chan_prod_waiters[cid], w, job)
                        return
                    ch.push()
                    self._wake_channel(self.chan_cons_waiters[cid])
                    self._maybe_rearm_tick()  # tokens may trigger a firing
                ex.left -= 1
            ex.step += 1
            ex.left = 0
        self._complete(w, job)

    @staticmethod
    def _park_on_channel(waiters: list, w: int, job: Job) -> None:
        # a stale notification can re-run the blocked step; keep one entry
        job.channel_blocked = True
        if (w, job) not in waiters:
            waiters.append((w, job))

    def _mk_seg_done(self, w: int, job: Job, gen: int) -> Callable[[], None]:
        def fn() -> None:
            ex = self.execs.get(job.job_id)
            if ex is None or ex.gen != gen:
                return  # segment was paused or rescheduled
            if self.workers[w].current is not job:
                return
            ex.left = 0
            ex.step += 1
            self._advance(w, job)

        return fn

    def _pause_exec(self, job: Job) -> None:
        """Freeze the current execution segment (handler or preemption)."""
        ex = self.execs.get(job.job_id)
        if ex is None:
            return
        if ex.step < len(ex.program) and ex.program[ex.step][0] == "exec" and not job.channel_blocked:
            ex.left = max(0, ex.seg_end - self.now)
            ex.gen += 1  # cancels the pending segment event

    def _wake_channel(self, waiters: list) -> None:
        if not waiters:
            return
        w, job = waiters.pop(0)
        job.channel_blocked = False
        ws = self.workers[w]
        if ws.current is job and not ws.in_cs:
            self.push_event(self.now, _P_MISC, self._mk_continue(w, job))
        elif ws.idle and not ws.pending_pull:
            # job sits preempted on the stack of an idle worker
            ws.pending_pull = True
            self.push_event(self.now, _P_MISC, self._mk_pull(w, self._queue_of_worker(w)))

    def _mk_continue(self, w: int, job: Job) -> Callable[[], None]:
        def fn() -> None:
            ws = self.workers[w]
            if ws.current is job and not ws.in_cs and not job.channel_blocked:
                self._advance(w, job)

        return fn

    def _complete(self, w: int, job: Job) -> None:
        ws = self.workers[w]
        ex = self.execs.pop(job.job_id)
        job.state = JobState.COMPLETED
        job.completed = self.now
        job.exec_total = ex.duration
        self.live_jobs.discard(job.job_id)
        self.emit("job_complete", task=job.task.name, seq=job.seq, worker=w)
        if ex.overrun:
            self.emit("overrun", task=job.task.name, seq=job.seq, worker=w, over=ex.overrun)
        stats = self.report.task(job.task.name)
        stats.completed += 1
        self.report.completed += 1
        stats.response.add(self.now - job.abs_release)
        if self.now > job.abs_deadline:
            stats.misses += 1
            self.report.misses += 1
            self.emit(
                "deadline_miss", task=job.task.name, seq=job.seq, worker=w,
                late=self.now - job.abs_deadline,
            )
        freed = self.registry.release_all(job)
        woken: list[Job] = []
        if freed:
            for a in freed:
                self.emit(
                    "accel_release", task=job.task.name, seq=job.seq, worker=w,
                    accel=self.state.accelerators[a].name,
                )
            woken = self.core.unblock_accel_waiters(freed)
        ws.current = None
        # unparked waiters may be pullable by idle workers of any queue
        for qi in sorted({self.core.queue_for(j) for j in woken}):
            self._after_insert(qi)
        self._request_pull(w, self._queue_of_worker(w))

    # ------------------------------------------------------- offline

    def run_offline(self) -> None:
        table: ScheduleTable = self.state.table
        for core_id in sorted(table.cores):
            self._offline_core(core_id, table)
        while self._heap:
            t, prio, _, fn = heapq.heappop(self._heap)
            self.now = t
            fn()
            self.events_done += 1
            if self.events_done > _EVENT_CAP:
                self.report.truncated = True
                self.report.warnings.append("event cap reached; run truncated")
                break
        if self.live_jobs:
            self.report.truncated = True
            for tid, s in sorted(self.live_jobs):
                task = self.state.tasks[tid]
                self.report.task(task.name).misses += 1
                self.report.misses += 1

    def _offline_core(self, core_id: int, table: ScheduleTable) -> None:
        entries = table.cores[core_id]
        if not entries:
            return
        core_seq: dict[int, int] = {}

        def schedule_entry(m: int, i: int, free_at: int) -> None:
            if i == len(entries):
                m, i = m + 1, 0
            entry = entries[i]
            release = m * table.table_period + entry.release_offset
            if release >= self.horizon:
                return
            start_at = max(release, free_at)
            self.push_event(start_at, _P_MISC, lambda: run_entry(m, i, release))

        def run_entry(m: int, i: int, release: int) -> None:
            entry = entries[i]
            task = self.state.tasks[entry.task_id]
            version = task.versions[entry.version_id]
            seq = core_seq.get(entry.task_id, 0)
            core_seq[entry.task_id] = seq + 1
            if task.relative_deadline is not None:
                deadline = release + task.relative_deadline
            else:
                deadline = (m + 1) * table.table_period  # end of the iteration
            job = Job(task, seq, version, release, deadline, key=None)
            self.live_jobs.add(job.job_id)
            self.emit("release_theoretical", task=task.name, seq=seq, t=release)
            job.release_effective = self.now
            self.report.task(task.name).released += 1
            self.report.released += 1
            self.emit("release_effective", task=task.name, seq=seq, worker=core_id)
            if self.now > release:
                self.emit(
                    "overrun", task=task.name, seq=seq, worker=core_id,
                    late=self.now - release,
                )
            job.worker = core_id
            job.state = JobState.RUNNING
            ws = self.workers[core_id]
            ws.current = job
            job.started = self.now
            self.emit("job_start", task=task.name, seq=seq, worker=core_id,
                      version=version.name)
            self.execs[job.job_id] = self._build_exec(job)
            self._offline_advance(core_id, job, m, i)

        def finish(job: Job, m: int, i: int) -> None:
            self._complete_offline(core_id, job)
            schedule_entry(m, i + 1, self.now)

        self._offline_finish[core_id] = finish
        schedule_entry(0, 0, 0)

    def _offline_advance(self, core_id: int, job: Job, m: int, i: int) -> None:
        ws = self.workers[core_id]
        assert ws.current is job
        ex = self.execs[job.job_id]
        job.channel_blocked = False
        while ex.step < len(ex.program):
            kind = ex.program[ex.step][0]
            if kind == "exec":
                dur = ex.program[ex.step][1] if ex.left == 0 else ex.left
                ex.left = dur
                ex.seg_end = self.now + dur
                ex.gen += 1
                gen = ex.gen

                def seg_done() -> None:
                    e = self.execs.get(job.job_id)
                    if e is None or e.gen != gen:
                        return
                    e.left = 0
                    e.step += 1
                    self._offline_advance(core_id, job, m, i)

                self.push_event(ex.seg_end, _P_DONE, seg_done)
                return
            _, cid, count = ex.program[ex.step]
            if ex.left == 0:
                ex.left = count
            ch = self.channels[cid]
            while ex.left > 0:
                if kind == "pop":
                    if not ch.can_pop():
                        self._park_on_channel(self.chan_cons_waiters[cid], core_id, job)
                        self._offline_blocked[job.job_id] = (core_id, m, i)
                        return
                    ch.pop()
                    self._offline_wake(self.chan_prod_waiters[cid])
                else:
                    if not ch.can_push():
                        self._park_on_channel(self.chan_prod_waiters[cid], core_id, job)
                        self._offline_blocked[job.job_id] = (core_id, m, i)
                        return
                    ch.push()
                    self._offline_wake(self.chan_cons_waiters[cid])
                ex.left -= 1
            ex.step += 1
            ex.left = 0
        self._offline_finish[core_id](job, m, i)

    def _offline_wake(self, waiters: list) -> None:
        if not waiters:
            return
        core_id, job = waiters.pop(0)
        job.channel_blocked = False
        slot = self._offline_blocked.pop(job.job_id, None)
        if slot is not None:
            c, m, i = slot
            self.push_event(self.now, _P_MISC, lambda: self._offline_advance(c, job, m, i))

    def _complete_offline(self, core_id: int, job: Job) -> None:
        ex = self.execs.pop(job.job_id)
        job.state = JobState.COMPLETED
        job.completed = self.now
        self.live_jobs.discard(job.job_id)
        self.emit("job_complete", task=job.task.name, seq=job.seq, worker=core_id)
        stats = self.report.task(job.task.name)
        stats.completed += 1
        self.report.completed += 1
        stats.response.add(self.now - job.abs_release)
        if self.now > job.abs_deadline:
            stats.misses += 1
            self.report.misses += 1
            self.emit(
                "deadline_miss", task=job.task.name, seq=job.seq, worker=core_id,
                late=self.now - job.abs_deadline,
            )
        self.workers[core_id].current = None


# ----------------------------------------------------------- entry point


def run_simulation(
    state: MiddlewareState,
    model: SimJobModel | None = None,
    *,
    horizon: int | str | None = None,
    seed: int = 0,
    restrict: Callable[[TaskDescriptor], list[VersionDescriptor]] | None = None,
) -> tuple[list[TraceEvent], RunReport]:
    """Simulate one run under virtual time.

    Pure: the input state is only read.  The default horizon is one
    hyperperiod (the table period under OFFLINE); runs whose hyperperiod
    overflows must pass an explicit horizon.  Releases stop at the horizon
    and everything already released drains to completion.
    """
    model = model or SimJobModel()
    diags = [d for d in state.validate() if d.level == "error"]
    if diags:
        raise ValidationError("; ".join(f"{d.code}: {d.message}" for d in diags))

    offline = state.config.mapping_scheme is MappingScheme.OFFLINE
    base_err: ConfigurationError | None = None
    if offline:
        base = state.table.table_period
    else:
        try:
            base = hyperperiod(state)
        except ConfigurationError as e:
            base, base_err = None, e
    horizon_ns = parse_horizon(horizon, base)
    if horizon_ns is None:
        if base is None:
            raise base_err or ConfigurationError(
                "hyperperiod undefined for this task set; pass an explicit horizon"
            )
        horizon_ns = base
    if horizon_ns <= 0:
        raise ConfigurationError("horizon must be > 0")

    engine = _Engine(state, model, horizon_ns, seed, restrict)
    if offline:
        engine.run_offline()
    else:
        engine.run()

    engine.trace.sort(key=lambda e: e.timestamp_ns)  # stable: same-time order kept
    engine.report.overheads = compute_overheads(
        engine.trace, allow_truncated=engine.report.truncated
    )
    engine.report.meta = {
        "backend": ClockSource.VIRTUAL.value,
        "policy": policy_label(state.config),
        "seed": seed,
        "horizon_ns": horizon_ns,
        "tick_ns": engine.tick if not offline else state.table.table_period,
        "workers": state.config.worker_count,
    }
    return engine.trace, engine.report
