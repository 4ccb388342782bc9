"""Static dispatch tables for the off-line mapping.

A table repeats with a fixed period.  Each core owns an ordered entry list
(task, version, release offset); iteration m starts entry e at exactly
m * period + offset.  There is no ready queue, no preemption and no version
selection at run time, and cores proceed independently.

Validation rejects dangling references and ordering violations outright;
a worst-case execution overlap between consecutive entries is only a
warning, because the table author may know better than the estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import Diagnostic, MiddlewareState


@dataclass(frozen=True)
class TableEntry:
    task_id: int
    version_id: int
    release_offset: int


@dataclass
class ScheduleTable:
    table_period: int
    cores: dict[int, list[TableEntry]] = field(default_factory=dict)

    def add(self, core: int, task_id: int, version_id: int, release_offset: int) -> None:
        self.cores.setdefault(core, []).append(
            TableEntry(task_id, version_id, release_offset)
        )


def validate_table(state: MiddlewareState, table: ScheduleTable) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    err = lambda code, msg: out.append(Diagnostic("error", code, msg))
    warn = lambda code, msg: out.append(Diagnostic("warning", code, msg))

    if table.table_period <= 0:
        err("table-period", "table period must be > 0")
        return out

    for core in sorted(table.cores):
        entries = table.cores[core]
        if not 0 <= core < state.config.worker_count:
            err("table-core", f"table core {core} out of range")
            continue
        prev: TableEntry | None = None
        for i, e in enumerate(entries):
            if not 0 <= e.task_id < len(state.tasks):
                err("table-task", f"core {core} entry {i}: unknown task {e.task_id}")
                continue
            task = state.tasks[e.task_id]
            if not 0 <= e.version_id < len(task.versions):
                err(
                    "table-version",
                    f"core {core} entry {i}: task {task.name!r} has no version"
                    f" {e.version_id}",
                )
                continue
            if not 0 <= e.release_offset < table.table_period:
                err(
                    "table-offset",
                    f"core {core} entry {i}: offset {e.release_offset} outside"
                    f" [0, {table.table_period})",
                )
            if task.virt_core_id is not None and task.virt_core_id != core:
                err(
                    "table-placement",
                    f"core {core} entry {i}: task {task.name!r} is declared for"
                    f" core {task.virt_core_id}",
                )
            if prev is not None:
                if e.release_offset < prev.release_offset:
                    err(
                        "table-order",
                        f"core {core} entry {i}: offsets must be non-decreasing",
                    )
                else:
                    ptask = state.tasks[prev.task_id]
                    if 0 <= prev.version_id < len(ptask.versions):
                        wcet = ptask.versions[prev.version_id].wcet_estimate
                        if prev.release_offset + wcet > e.release_offset:
                            warn(
                                "table-overlap",
                                f"core {core}: entry at {prev.release_offset} may"
                                f" still run when entry at {e.release_offset} is due",
                            )
            prev = e
        if prev is not None and 0 <= prev.task_id < len(state.tasks):
            task = state.tasks[prev.task_id]
            if 0 <= prev.version_id < len(task.versions):
                wcet = task.versions[prev.version_id].wcet_estimate
                if prev.release_offset + wcet > table.table_period:
                    warn(
                        "table-overlap",
                        f"core {core}: last entry may run into the next table"
                        " iteration",
                    )
    return out
