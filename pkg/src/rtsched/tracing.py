"""Trace events, run reports, and overhead accounting.

A run produces an ordered list of TraceEvent.  The CSV export has a stable
column order (timestamp_ns, kind, task, job_seq, worker, payload) and a
deterministic payload encoding, so equal runs serialize byte-identically.

Overheads are derived from the trace alone:

  release overhead   release_effective - release_theoretical, per job
  get-task time      held duration of each worker queue-lock section
  scheduling time    tick_end - tick_begin, per tick
  lock wait          grant delay of each queue-lock acquisition
  preemption cost    context-switch spans on preempt/resume events
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .errors import TraceIntegrityError

EVENT_KINDS = (
    "release_theoretical",
    "release_effective",
    "job_start",
    "preempt",
    "resume",
    "job_complete",
    "deadline_miss",
    "lock_wait",
    "tick_begin",
    "tick_end",
    "accel_acquire",
    "accel_release",
    "overrun",
)

SCHEDULER_WORKER = -1  # worker column value for scheduler-side events

CSV_COLUMNS = ("timestamp_ns", "kind", "task", "job_seq", "worker", "payload")


@dataclass
class TraceEvent:
    timestamp_ns: int
    kind: str
    task: str = ""
    job_seq: int | None = None
    worker: int | None = None
    payload: dict = field(default_factory=dict)

    def encode_payload(self) -> str:
        return ";".join(f"{k}={v}" for k, v in self.payload.items())


def _decode_payload(text: str) -> dict:
    out: dict = {}
    if not text:
        return out
    for part in text.split(";"):
        k, _, v = part.partition("=")
        try:
            out[k] = int(v)
        except ValueError:
            out[k] = v
    return out


def write_trace_csv(events: list[TraceEvent], fp) -> None:
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for e in events:
        w.writerow(
            (
                e.timestamp_ns,
                e.kind,
                e.task,
                "" if e.job_seq is None else e.job_seq,
                "" if e.worker is None else e.worker,
                e.encode_payload(),
            )
        )


def trace_csv_text(events: list[TraceEvent]) -> str:
    buf = io.StringIO()
    write_trace_csv(events, buf)
    return buf.getvalue()


def read_trace_csv(fp) -> list[TraceEvent]:
    rows = csv.reader(fp)
    header = next(rows, None)
    if tuple(header or ()) != CSV_COLUMNS:
        raise TraceIntegrityError(f"unexpected trace header: {header}")
    events = []
    for row in rows:
        ts, kind, task, seq, worker, payload = row
        if kind not in EVENT_KINDS:
            raise TraceIntegrityError(f"unknown event kind {kind!r}")
        events.append(
            TraceEvent(
                timestamp_ns=int(ts),
                kind=kind,
                task=task,
                job_seq=int(seq) if seq else None,
                worker=int(worker) if worker else None,
                payload=_decode_payload(payload),
            )
        )
    return events


# ------------------------------------------------------------ statistics


@dataclass
class Stat:
    count: int = 0
    total: int = 0
    min: int | None = None
    max: int | None = None

    def add(self, value: int) -> None:
        self.count += 1
        self.total += value
        self.min = value if self.min is None else min(self.min, value)
        self.max = value if self.max is None else max(self.max, value)

    @property
    def avg(self) -> float:
        return self.total / self.count if self.count else 0.0

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "total": self.total,
            "min": self.min or 0,
            "max": self.max or 0,
            "avg": round(self.avg, 3),
        }


@dataclass
class TaskStats:
    released: int = 0
    completed: int = 0
    misses: int = 0
    response: Stat = field(default_factory=Stat)

    def to_dict(self) -> dict:
        return {
            "released": self.released,
            "completed": self.completed,
            "misses": self.misses,
            "response_ns": self.response.to_dict(),
        }


@dataclass
class Overheads:
    get_task: Stat = field(default_factory=Stat)
    scheduling: Stat = field(default_factory=Stat)
    release_overhead: Stat = field(default_factory=Stat)
    worker_lock_wait: Stat = field(default_factory=Stat)
    scheduler_lock_wait: Stat = field(default_factory=Stat)
    preemptions: int = 0
    context_switch_total: int = 0

    def to_dict(self) -> dict:
        return {
            "get_task_ns": self.get_task.to_dict(),
            "scheduling_ns": self.scheduling.to_dict(),
            "release_overhead_ns": self.release_overhead.to_dict(),
            "worker_lock_wait_ns": self.worker_lock_wait.to_dict(),
            "scheduler_lock_wait_ns": self.scheduler_lock_wait.to_dict(),
            "preemptions": self.preemptions,
            "context_switch_ns": self.context_switch_total,
        }


@dataclass
class RunReport:
    tasks: dict[str, TaskStats] = field(default_factory=dict)
    overheads: Overheads = field(default_factory=Overheads)
    released: int = 0
    completed: int = 0
    misses: int = 0
    truncated: bool = False
    warnings: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def task(self, name: str) -> TaskStats:
        if name not in self.tasks:
            self.tasks[name] = TaskStats()
        return self.tasks[name]

    def to_dict(self) -> dict:
        return {
            "meta": dict(sorted(self.meta.items())),
            "totals": {
                "released": self.released,
                "completed": self.completed,
                "misses": self.misses,
                "truncated": self.truncated,
            },
            "tasks": {n: s.to_dict() for n, s in sorted(self.tasks.items())},
            "run": self.overheads.to_dict(),
            "warnings": list(self.warnings),
        }


# ------------------------------------------------------ trace analysis


def compute_overheads(events: list[TraceEvent], *, allow_truncated: bool = False) -> Overheads:
    """Derive the overhead block from a trace, validating its integrity.

    Raises TraceIntegrityError on out-of-order per-worker timestamps,
    unpaired tick or job markers, or release/start/complete inversions.
    """
    out = Overheads()
    last_per_worker: dict[int, int] = {}
    jobs: dict[tuple[str, int], dict[str, int]] = {}
    open_tick: int | None = None

    for e in events:
        if e.worker is not None:
            prev = last_per_worker.get(e.worker)
            if prev is not None and e.timestamp_ns < prev:
                raise TraceIntegrityError(
                    f"worker {e.worker} timestamps go backwards at {e.timestamp_ns}"
                )
            last_per_worker[e.worker] = e.timestamp_ns

        if e.kind in ("release_theoretical", "release_effective", "job_start", "job_complete"):
            seq = -1 if e.job_seq is None else e.job_seq
            slot = jobs.setdefault((e.task, seq), {})
            if e.kind in slot:
                raise TraceIntegrityError(
                    f"duplicate {e.kind} for {e.task}#{e.job_seq}"
                )
            slot[e.kind] = e.timestamp_ns
        elif e.kind == "tick_begin":
            if open_tick is not None:
                raise TraceIntegrityError("tick_begin while a tick is open")
            open_tick = e.timestamp_ns
        elif e.kind == "tick_end":
            if open_tick is None:
                raise TraceIntegrityError("tick_end without tick_begin")
            out.scheduling.add(e.timestamp_ns - open_tick)
            open_tick = None
        elif e.kind == "lock_wait":
            wait = int(e.payload.get("wait", 0))
            if e.worker == SCHEDULER_WORKER:
                out.scheduler_lock_wait.add(wait)
            else:
                out.worker_lock_wait.add(wait)
                if e.payload.get("purpose") == "get_task":
                    out.get_task.add(int(e.payload.get("held", 0)))
        elif e.kind == "preempt":
            out.preemptions += 1
            out.context_switch_total += int(e.payload.get("switch", 0))
        elif e.kind == "resume":
            out.context_switch_total += int(e.payload.get("switch", 0))

    if open_tick is not None:
        raise TraceIntegrityError("trace ends inside a tick")

    for (task, seq), marks in jobs.items():
        rt = marks.get("release_theoretical")
        re_ = marks.get("release_effective")
        st = marks.get("job_start")
        co = marks.get("job_complete")
        chain = [v for v in (rt, re_, st, co) if v is not None]
        if any(a > b for a, b in zip(chain, chain[1:])):
            raise TraceIntegrityError(
                f"ordering violation for job {task}#{seq}: {marks}"
            )
        if st is not None and co is None and not allow_truncated:
            raise TraceIntegrityError(
                f"job {task}#{seq} started but never completed"
            )
        if rt is not None and re_ is not None:
            out.release_overhead.add(re_ - rt)
    return out
