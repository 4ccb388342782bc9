"""On-line scheduling core shared by the simulator and the thread backend.

The scheduler wakes every tick (the GCD of all recurring periods), releases
due jobs, evaluates graph activations, inserts into the single shared queue
(GLOBAL) or the per-core queues (PARTITIONED), sorts what it touched, and
notifies workers.  Workers pull under a FIFO lock; a preempted job goes on
the preempting worker's stack and never migrates.

This module holds the data structures and the decision logic only; time,
locking and tracing belong to the backends.
"""

from __future__ import annotations

import enum
import math
from typing import Callable

from .errors import ConfigurationError, SelectionError
from .graph import (
    ChannelState,
    analyze_graph,
    check_activation,
    reserve_activation,
)
from .model import (
    MappingScheme,
    MiddlewareState,
    TaskDescriptor,
    TaskKind,
    VersionDescriptor,
)
from .priority import PriorityKey, assign_priority, sort_ready
from .versions import AcceleratorRegistry, SelectionContext, select_version


class JobState(enum.Enum):
    READY = "ready"
    RUNNING = "running"
    PREEMPTED = "preempted"
    COMPLETED = "completed"


class Job:
    """One release of one task."""

    __slots__ = (
        "task",
        "seq",
        "version",
        "abs_release",
        "abs_deadline",
        "key",
        "boost",
        "state",
        "worker",
        "blocked_on",
        "channel_blocked",
        "release_effective",
        "started",
        "completed",
        "exec_total",
    )

    def __init__(
        self,
        task: TaskDescriptor,
        seq: int,
        version: VersionDescriptor,
        abs_release: int,
        abs_deadline: int,
        key: PriorityKey,
    ):
        self.task = task
        self.seq = seq
        self.version = version
        self.abs_release = abs_release
        self.abs_deadline = abs_deadline
        self.key = key
        self.boost: PriorityKey | None = None
        self.state = JobState.READY
        self.worker: int | None = None  # fixed at first dispatch, never migrates
        self.blocked_on: set[int] = set()
        self.channel_blocked = False
        self.release_effective: int | None = None
        self.started: int | None = None
        self.completed: int | None = None
        self.exec_total = 0

    @property
    def job_id(self) -> tuple[int, int]:
        return (self.task.task_id, self.seq)

    def effective_key(self) -> PriorityKey:
        if self.boost is not None and self.boost < self.key:
            return self.boost
        return self.key

    def inherit(self, key: PriorityKey) -> None:
        if self.boost is None or key < self.boost:
            self.boost = key

    def clear_inheritance(self) -> None:
        self.boost = None

    def __repr__(self) -> str:  # debug aid
        return f"<job {self.task.name}#{self.seq} {self.state.value}>"


class ReadyQueue:
    """Priority-sorted job list.  Admission to the guarding lock is FIFO;
    the lock itself lives in the backend."""

    __slots__ = ("items",)

    def __init__(self) -> None:
        self.items: list[Job] = []

    def insert(self, job: Job) -> None:
        self.items.append(job)

    def sort(self) -> None:
        sort_ready(self.items)

    def first_dispatchable(self) -> Job | None:
        for job in self.items:
            if not job.blocked_on:
                return job
        return None

    def remove(self, job: Job) -> None:
        self.items.remove(job)

    def __len__(self) -> int:
        return len(self.items)


# ------------------------------------------------------- tick arithmetic


def scheduler_tick_period(state: MiddlewareState) -> int:
    """GCD of every recurring period and nonzero release offset.

    Dividing the offsets too puts every theoretical release instant on the
    scheduler's wake grid, so periodic jobs are never enqueued late just
    because their first release fell between ticks.
    """
    instants = [t.period for t in state.tasks if t.period is not None]
    if not instants:
        raise ConfigurationError(
            "no recurring tasks: an on-line mapping requires a scheduler tick"
        )
    instants += [t.release_offset for t in state.tasks
                 if t.period is not None and t.release_offset]
    return math.gcd(*instants)


HYPERPERIOD_CAP = 2**62


def hyperperiod(state: MiddlewareState) -> int:
    periods = [t.period for t in state.tasks if t.period is not None]
    if not periods:
        raise ConfigurationError("no recurring tasks: hyperperiod undefined")
    h = math.lcm(*periods)
    if h > HYPERPERIOD_CAP:
        raise ConfigurationError(
            "hyperperiod overflows the supported range; pass an explicit horizon"
        )
    return h


# ------------------------------------------------------------- the core


class SchedulerCore:
    """Release bookkeeping and dispatch decisions for one run.

    Owns nothing timing-related.  `select_ctx` is read at each decision so
    backends can vary execution mode or battery level over time.
    """

    def __init__(
        self,
        state: MiddlewareState,
        registry: AcceleratorRegistry,
        select_ctx: SelectionContext,
        *,
        restrict: Callable[[TaskDescriptor], list[VersionDescriptor]] | None = None,
    ):
        self.state = state
        self.registry = registry
        self.select_ctx = select_ctx
        self.restrict = restrict
        cfg = state.config
        self.global_mapping = cfg.mapping_scheme is MappingScheme.GLOBAL
        self.queue_count = 1 if self.global_mapping else cfg.worker_count
        self.queues = [ReadyQueue() for _ in range(self.queue_count)]
        self.graph = analyze_graph(state)
        self._seq = {t.task_id: 0 for t in state.tasks}
        self._next_periodic = {
            t.task_id: t.release_offset
            for t in state.tasks
            if t.period is not None
        }
        self._pending: list[tuple[int, int]] = []  # (release, task_id)
        self._last_sporadic: dict[int, int] = {}
        self._root_releases: dict[int, list[int]] = {}
        self._root_ids = set(self.graph.node_root.values())
        self._node_fired: dict[int, int] = {t: 0 for t in self.graph.node_rate}

    # ------------------------------------------------------ releases

    def activate(self, task_id: int, now: int) -> int:
        """Sporadic/aperiodic activation request at instant `now`."""
        task = self.state.task(task_id)
        if task.kind is TaskKind.SPORADIC:
            last = self._last_sporadic.get(task_id)
            release = now if last is None else max(now, last + task.period)
            self._last_sporadic[task_id] = release
        else:
            release = now
        self._pending.append((release, task_id))
        return release

    def enqueue_release(self, release: int, task_id: int) -> None:
        """Queue a precomputed activation (the state already applied the
        sporadic min-gap arithmetic)."""
        self._pending.append((release, task_id))

    def due_releases(self, now: int, horizon: int | None = None) -> list[Job]:
        """Jobs whose theoretical arrival is <= now, in task order.

        Arrivals at or past `horizon` are left alone so a stopping run
        releases nothing beyond its end.
        """
        jobs: list[Job] = []
        for task in self.state.tasks:
            tid = task.task_id
            if tid not in self._next_periodic:
                continue
            if task.kind is TaskKind.SPORADIC:
                continue  # sporadic tasks release via activate()
            while self._next_periodic[tid] <= now:
                release = self._next_periodic[tid]
                if horizon is not None and release >= horizon:
                    break
                self._next_periodic[tid] += task.period
                jobs.append(self.make_job(task, release))
        if self._pending:
            due = [p for p in self._pending if p[0] <= now]
            if due:
                self._pending = [p for p in self._pending if p[0] > now]
                for release, tid in sorted(due):
                    if horizon is not None and release >= horizon:
                        continue
                    jobs.append(self.make_job(self.state.task(tid), release))
        return jobs

    def graph_activations(self, channels: dict[int, ChannelState], now: int) -> list[Job]:
        """Data-driven releases: nodes whose inputs hold enough tokens."""
        jobs: list[Job] = []
        for tid, rate in self.graph.node_rate.items():
            if rate <= 0:
                continue
            task = self.state.task(tid)
            if task.period is not None:
                continue  # roots release on the clock even if they have inputs
            while check_activation(self.state, channels, tid):
                reserve_activation(self.state, channels, tid)
                jobs.append(self.make_job(task, now))
        return jobs

    def work_pending(self, channels: dict[int, ChannelState], horizon: int) -> bool:
        """True while a future scheduler pass could still release something:
        a periodic arrival or queued activation before the horizon, or graph
        tokens already sufficient for a firing.  Drives drain-phase ticks."""
        for tid, nxt in self._next_periodic.items():
            if self.state.task(tid).kind is TaskKind.SPORADIC:
                continue
            if nxt < horizon:
                return True
        if any(release < horizon for release, _ in self._pending):
            return True
        for tid, rate in self.graph.node_rate.items():
            if rate <= 0:
                continue
            task = self.state.task(tid)
            if task.period is None and check_activation(self.state, channels, tid):
                return True
        return False

    def make_job(self, task: TaskDescriptor, abs_release: int) -> Job:
        seq = self._seq[task.task_id]
        self._seq[task.task_id] = seq + 1

        period = task.period
        rel_deadline = task.relative_deadline
        abs_deadline = None
        if task.task_id in self.graph.node_root and task.period is None:
            root = self.state.task(self.graph.node_root[task.task_id])
            period = root.period
            rate = self.graph.node_rate.get(task.task_id, 1) or 1
            iteration = self._node_fired[task.task_id] // rate
            self._node_fired[task.task_id] += 1
            if task.relative_deadline is not None:
                # node-local deadline, measured from its own activation
                rel_deadline = task.relative_deadline
                abs_deadline = abs_release + rel_deadline
            else:
                # inherit the end-to-end deadline of the root release that
                # spawned this iteration of the graph
                rel_deadline = root.relative_deadline
                series = self._root_releases.get(root.task_id, [])
                base = series[iteration] if iteration < len(series) else abs_release
                abs_deadline = base + root.relative_deadline
        if abs_deadline is None:
            abs_deadline = abs_release + (rel_deadline or 0)
        if task.period is not None and task.task_id in self._root_ids:
            self._root_releases.setdefault(task.task_id, []).append(abs_release)

        version = select_version(
            self.state.config.version_selection,
            task,
            self.select_ctx,
            self.registry,
            pool=self._pool(task),
        )
        key = assign_priority(
            self.state.config.priority_assignment,
            task,
            seq=seq,
            abs_release=abs_release,
            abs_deadline=abs_deadline,
            period=period,
            relative_deadline=rel_deadline,
        )
        return Job(task, seq, version, abs_release, abs_deadline, key)

    def _pool(self, task: TaskDescriptor) -> list[VersionDescriptor] | None:
        if self.restrict is None:
            return None
        return self.restrict(task)

    # ------------------------------------------------------- routing

    def queue_for(self, job: Job) -> int:
        if self.global_mapping:
            return 0
        assert job.task.virt_core_id is not None
        return job.task.virt_core_id

    def workers_of_queue(self, qi: int) -> range:
        if self.global_mapping:
            return range(self.state.config.worker_count)
        return range(qi, qi + 1)

    def preemption_targets(
        self, qi: int, running: list[Job | None]
    ) -> list[int]:
        """Workers of queue qi whose running job ranks below the queue head."""
        head = self.queues[qi].first_dispatchable()
        if head is None:
            return []
        hk = head.effective_key()
        return [
            w
            for w in self.workers_of_queue(qi)
            if running[w] is not None and hk < running[w].effective_key()
        ]

    # ------------------------------------------------------- dispatch

    def pick_next(
        self, qi: int, stack_top: Job | None
    ) -> tuple[str, Job | None, list[int]]:
        """Decide what a worker of queue qi runs next.  Runs under the
        queue lock.

        Returns (action, job, acquired) with action one of "resume",
        "start", "idle".  `acquired` lists accelerator ids taken for a
        started job.  Queue items whose version waits on a busy accelerator
        are skipped after boosting the holder (inheritance), and stay
        parked until the resource frees up.
        """
        queue = self.queues[qi]
        stack_ok = stack_top is not None and not stack_top.channel_blocked
        for job in list(queue.items):
            if job.blocked_on:
                continue
            if stack_ok and stack_top.effective_key() < job.effective_key():
                return ("resume", stack_top, [])
            resolved = self._resolve_accelerators(job)
            if resolved is None:
                continue  # parked on a busy accelerator
            version, acquired = resolved
            job.version = version
            queue.remove(job)
            return ("start", job, acquired)
        if stack_ok:
            return ("resume", stack_top, [])
        return ("idle", None, [])

    def _resolve_accelerators(
        self, job: Job
    ) -> tuple[VersionDescriptor, list[int]] | None:
        """Try to make `job` startable, switching version if that avoids a
        busy accelerator.  None means the job was parked (and the holder
        possibly boosted)."""
        version = job.version
        busy = self.registry.acquire(job, version.accelerators)
        if not busy:
            return (version, sorted(version.accelerators))
        pool = self._pool(job.task) or job.task.versions
        free_pool = [
            v for v in pool if not any(self.registry.busy(a) for a in v.accelerators)
        ]
        if free_pool:
            try:
                alt = select_version(
                    self.state.config.version_selection,
                    job.task,
                    self.select_ctx,
                    self.registry,
                    pool=free_pool,
                )
            except SelectionError:
                alt = None
            if alt is not None:
                taken = self.registry.acquire(job, alt.accelerators)
                assert not taken
                return (alt, sorted(alt.accelerators))
        self.registry.apply_inheritance(job, busy)
        job.blocked_on = set(busy)
        return None

    def unblock_accel_waiters(self, accel_ids: list[int]) -> list[Job]:
        """Clear parked markers after an accelerator release.  Returns the
        jobs that became dispatchable."""
        woken: list[Job] = []
        freed = set(accel_ids)
        for queue in self.queues:
            for job in queue.items:
                if job.blocked_on and job.blocked_on & freed:
                    job.blocked_on -= freed
                    if not job.blocked_on:
                        woken.append(job)
        return woken
