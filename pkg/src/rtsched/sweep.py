"""Design-space exploration: run one document under many policy points.

A sweep point is (mapping, priority, preemptive, version_mode); each point
runs `reps` times with seeds seed+0..reps-1 and every run contributes one
row group to a long-format CSV: (policy, mapping, priority, preemptive,
version_mode, rep, seed, metric, value).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

from .document import TaskSetDocument
from .errors import ConfigurationError, RtschedError
from .simulator import policy_label, run_simulation

SWEEP_COLUMNS = [
    "policy",
    "mapping",
    "priority",
    "preemptive",
    "version_mode",
    "rep",
    "seed",
    "metric",
    "value",
]

# metrics reported per run, in row order
RUN_METRICS = [
    "released",
    "completed",
    "misses",
    "mean_response_ns",
    "max_response_ns",
    "truncated",
]

_SPEC_KEYS = {
    "mappings",
    "priorities",
    "preemptive",
    "version_modes",
    "reps",
    "horizon",
    "seed",
}


@dataclass
class SweepSpec:
    """Axes of the exploration grid.

    version_modes maps a label to a list of version names a task may use
    in that mode, or None for no restriction.  A task with none of the
    named versions keeps its full set (restricting a task out of existence
    is never what an exploration means).
    """

    mappings: list[str] = field(default_factory=lambda: ["GLOBAL"])
    priorities: list[str] = field(default_factory=lambda: ["RM", "EDF"])
    preemptive: list[bool] = field(default_factory=lambda: [True, False])
    version_modes: dict[str, list[str] | None] = field(
        default_factory=lambda: {"any": None}
    )
    reps: int = 1
    horizon: int | str | None = None
    seed: int = 0

    @classmethod
    def from_dict(cls, raw: dict) -> "SweepSpec":
        unknown = set(raw) - _SPEC_KEYS
        if unknown:
            raise ConfigurationError(
                f"unknown sweep keys: {', '.join(sorted(unknown))}"
            )
        spec = cls()
        if "mappings" in raw:
            spec.mappings = [str(m) for m in raw["mappings"]]
        if "priorities" in raw:
            spec.priorities = [str(p) for p in raw["priorities"]]
        if "preemptive" in raw:
            spec.preemptive = [bool(p) for p in raw["preemptive"]]
        if "version_modes" in raw:
            spec.version_modes = {
                str(k): (None if v is None else [str(x) for x in v])
                for k, v in raw["version_modes"].items()
            }
        if "reps" in raw:
            spec.reps = int(raw["reps"])
            if spec.reps < 1:
                raise ConfigurationError("reps must be >= 1")
        if "horizon" in raw:
            spec.horizon = raw["horizon"]
        if "seed" in raw:
            spec.seed = int(raw["seed"])
        if not (spec.mappings and spec.priorities and spec.preemptive
                and spec.version_modes):
            raise ConfigurationError("sweep grid is empty")
        return spec

    def points(self) -> int:
        return (
            len(self.mappings)
            * len(self.priorities)
            * len(self.preemptive)
            * len(self.version_modes)
        )


def make_restrict(state, names: list[str] | None):
    """Version filter by name, as the callable run_simulation expects.

    Tasks where the filter would leave nothing keep every version: a
    restriction expresses a preference, not a death sentence.
    """
    if names is None:
        return None
    wanted = set(names)
    allowed = {}
    for task in state.tasks:
        pool = [v for v in task.versions if v.name in wanted]
        if pool:
            allowed[task.task_id] = pool
    if not allowed:
        return None

    def restrict(task):
        return allowed.get(task.task_id, list(task.versions))

    return restrict


def _doc_with_policy(
    doc: TaskSetDocument, mapping: str, priority: str, preemptive: bool
) -> TaskSetDocument:
    raw = dict(doc.data)
    cfg = dict(raw.get("config", {}))
    cfg["mapping_scheme"] = mapping
    cfg["priority_assignment"] = priority
    cfg["preemptive"] = preemptive
    raw["config"] = cfg
    return TaskSetDocument.from_dict(raw)


def run_sweep(doc: TaskSetDocument, spec: SweepSpec) -> list[dict]:
    """Every grid point x repetition, deterministically ordered.

    A point that fails to build or validate aborts the whole sweep and
    names the offending point; a clean grid with missed deadlines is a
    result, not an error.
    """
    rows: list[dict] = []
    for mapping in spec.mappings:
        for priority in spec.priorities:
            for preempt in spec.preemptive:
                for label, names in spec.version_modes.items():
                    for rep in range(spec.reps):
                        seed = spec.seed + rep
                        point = f"{mapping}/{priority}/preemptive={preempt}/{label}"
                        try:
                            varied = _doc_with_policy(doc, mapping, priority, preempt)
                            state = varied.build_state()
                            trace, report = run_simulation(
                                state,
                                varied.sim_model(),
                                horizon=spec.horizon,
                                seed=seed,
                                restrict=make_restrict(state, names),
                            )
                        except RtschedError as e:
                            raise RtschedError(
                                f"sweep point {point} rep {rep}: {e}"
                            ) from e
                        resp_total = 0
                        resp_count = 0
                        resp_max = 0
                        for st in report.tasks.values():
                            resp_total += st.response.total
                            resp_count += st.response.count
                            resp_max = max(resp_max, st.response.max or 0)
                        values = {
                            "released": report.released,
                            "completed": report.completed,
                            "misses": report.misses,
                            "mean_response_ns": (
                                round(resp_total / resp_count, 3) if resp_count else 0
                            ),
                            "max_response_ns": resp_max,
                            "truncated": int(report.truncated),
                        }
                        for metric in RUN_METRICS:
                            rows.append(
                                {
                                    "policy": policy_label(state.config),
                                    "mapping": mapping,
                                    "priority": priority,
                                    "preemptive": preempt,
                                    "version_mode": label,
                                    "rep": rep,
                                    "seed": seed,
                                    "metric": metric,
                                    "value": values[metric],
                                }
                            )
    return rows


def write_sweep_csv(rows: list[dict], fp) -> None:
    writer = csv.DictWriter(fp, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)


def best_policy(rows: list[dict]) -> dict | None:
    """Fewest total misses, ties broken by lowest mean response."""
    groups: dict[tuple, dict] = {}
    for row in rows:
        key = (row["mapping"], row["priority"], row["preemptive"], row["version_mode"])
        g = groups.setdefault(
            key,
            {"policy": row["policy"], "misses": 0, "resp_sum": 0.0, "resp_n": 0},
        )
        if row["metric"] == "misses":
            g["misses"] += row["value"]
        elif row["metric"] == "mean_response_ns":
            g["resp_sum"] += row["value"]
            g["resp_n"] += 1
    if not groups:
        return None
    scored = []
    for key in sorted(groups, key=repr):
        g = groups[key]
        mean = g["resp_sum"] / g["resp_n"] if g["resp_n"] else 0.0
        scored.append((g["misses"], mean, key, g["policy"]))
    misses, mean, key, label = min(scored, key=lambda s: (s[0], s[1], repr(s[2])))
    return {
        "policy": label,
        "mapping": key[0],
        "priority": key[1],
        "preemptive": key[2],
        "version_mode": key[3],
        "total_misses": misses,
        "mean_response_ns": mean,
    }
