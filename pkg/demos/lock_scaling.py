#!/usr/bin/env python3
"""Lock contention growth as workers are added.

Every worker pulling work pays the ready-queue lock cost, so the worst
wait a worker sees is bounded by (N-1) get-task sections plus one
scheduling pass, and the scheduler itself by N get-task sections.  This
sweeps N and prints the observed maxima next to those bounds.
"""

import random

from rtsched import (
    PolicyConfig,
    SimJobModel,
    TaskKind,
    init,
    run_simulation,
    us,
)

GET_TASK = us(2)
SCAN_PER_TASK = us(1)


def one_run(n_workers, seed):
    rng = random.Random(seed)
    state = init(PolicyConfig(worker_count=n_workers))
    execs = {}
    for i in range(4):
        period = rng.choice([2, 4, 5, 10]) * 1_000_000
        name = f"t{i}"
        state.task_decl(name, TaskKind.PERIODIC, period=period)
        wcet = int(period * 0.4)
        state.version_decl(state.tasks[-1].task_id, wcet_estimate=wcet)
        execs[name] = {"dist": "uniform", "low": wcet // 2, "high": wcet}
    model = SimJobModel(
        exec_time=execs,
        get_task_cost=GET_TASK,
        sched_scan_cost_per_task=SCAN_PER_TASK,
    )
    _, report = run_simulation(state, model, seed=seed)
    return report.overheads


def main():
    print(f"get-task cost {GET_TASK}ns, scan {SCAN_PER_TASK}ns/task,"
          f" 4 tasks, 10 seeds per point\n")
    print("workers  max worker wait  bound      max sched wait  bound")
    for n in (2, 3, 4, 6):
        worker_max = sched_max = sched_section = 0
        for seed in range(10):
            ov = one_run(n, seed)
            worker_max = max(worker_max, ov.worker_lock_wait.max or 0)
            sched_max = max(sched_max, ov.scheduler_lock_wait.max or 0)
            sched_section = max(sched_section, ov.scheduling.max or 0)
        worker_bound = (n - 1) * GET_TASK + sched_section
        sched_bound = n * GET_TASK
        print(f"{n:>7}  {worker_max:>12}ns  {worker_bound:>7}ns"
              f"  {sched_max:>12}ns  {sched_bound:>7}ns")


if __name__ == "__main__":
    main()
