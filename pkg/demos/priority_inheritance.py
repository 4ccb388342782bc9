#!/usr/bin/env python3
"""How long can a high-priority task wait for a busy accelerator?

Three tasks on one worker under RM: a long low-priority task grabs the
DSP right away, the high-priority task asks for it 2ms in, and a
medium-priority CPU-only task shows up at 3ms.  With inheritance the
holder finishes its remaining 8ms undisturbed; without it the medium
task barges in and the high task waits 28ms.
"""

from rtsched import (
    PolicyConfig,
    PriorityAssignment,
    SimJobModel,
    TaskKind,
    init,
    ms,
    run_simulation,
)


def build_state():
    cfg = PolicyConfig(priority_assignment=PriorityAssignment.RM, worker_count=1)
    state = init(cfg)
    dsp = state.hwaccel_decl("dsp")

    lo = state.task_decl("lo", TaskKind.PERIODIC, period=ms(400))
    v = state.version_decl(lo, wcet_estimate=ms(10))
    state.hwaccel_use(lo, v, dsp)

    hi = state.task_decl("hi", TaskKind.PERIODIC, period=ms(100),
                         release_offset=ms(2))
    v = state.version_decl(hi, wcet_estimate=ms(2))
    state.hwaccel_use(hi, v, dsp)

    mid = state.task_decl("mid", TaskKind.PERIODIC, period=ms(200),
                          release_offset=ms(3))
    state.version_decl(mid, wcet_estimate=ms(20))
    return state


def blocking_ns(pip_enabled):
    state = build_state()
    model = SimJobModel(
        exec_time={"lo": ms(10), "hi": ms(2), "mid": ms(20)},
        pip_enabled=pip_enabled,
    )
    trace, _ = run_simulation(state, model, horizon=ms(40))
    print(f"\ninheritance {'on' if pip_enabled else 'off'}:")
    for e in trace:
        if e.kind in ("job_start", "job_complete", "preempt"):
            print(f"  {e.timestamp_ns / 1e6:6.1f}ms  {e.kind:<12} {e.task}")
    start = next(e.timestamp_ns for e in trace
                 if e.kind == "job_start" and e.task == "hi")
    return start - ms(2)


def main():
    with_pip = blocking_ns(True)
    without = blocking_ns(False)
    print(f"\nhigh task blocked {with_pip / 1e6:.0f}ms with inheritance,"
          f" {without / 1e6:.0f}ms without")


if __name__ == "__main__":
    main()
