"""Task graphs: channels, data-driven activation, and dataflow expansion.

Channels are bounded single-producer/single-consumer FIFOs.  Capacity 0 is
allowed and means a pure precedence edge: no payload is stored, but a
one-token virtual occupancy still flows so ordering is observable.

A task carrying a period is a root; graph nodes (no period) activate when
every input channel holds the required token count.  Deadlines of graph
nodes are described at graph level: a node job inherits the absolute
deadline of the root iteration its tokens belong to.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import (
    DeclarationError,
    GraphError,
    SdfDeadlockError,
    SdfInconsistentError,
    UsageError,
)
from .model import Diagnostic, MiddlewareState, TaskKind


# ------------------------------------------------------------ channels


@dataclass
class ChannelDescriptor:
    channel_id: int
    name: str
    element_size: int
    capacity: int  # 0 = precedence-only edge
    src: int | None = None
    dst: int | None = None
    initial_tokens: int = 0


def channel_decl(
    state: MiddlewareState, name: str, element_size: int, capacity: int
) -> int:
    """Declare an unconnected channel and return its id."""
    state._require_mutable("channel_decl")
    if element_size < 0 or capacity < 0:
        raise DeclarationError("element_size and capacity must be >= 0")
    if any(c.name == name for c in state.channels):
        raise DeclarationError(f"channel {name!r} already declared")
    ch = ChannelDescriptor(
        channel_id=len(state.channels),
        name=name,
        element_size=element_size,
        capacity=capacity,
    )
    state.channels.append(ch)
    return ch.channel_id


def channel_connect(
    state: MiddlewareState,
    channel_id: int,
    src_task: int,
    dst_task: int,
    *,
    required_tokens: int | None = None,
    push_count: int | None = None,
) -> None:
    """Attach a channel between a producer and a consumer task.

    required_tokens overrides the consumer's activation rule for this
    channel (default 1); push_count is how many tokens the producer emits
    per job (default 1).  Reconnecting a channel is an error.
    """
    state._require_mutable("channel_connect")
    ch = channel(state, channel_id)
    if ch.src is not None or ch.dst is not None:
        raise DeclarationError(f"channel {ch.name!r} is already connected")
    state.task(src_task)
    state.task(dst_task)
    ch.src = src_task
    ch.dst = dst_task
    if required_tokens is not None:
        if required_tokens < 1:
            raise DeclarationError("required_tokens must be >= 1")
        state.activation_overrides[(dst_task, channel_id)] = required_tokens
    if push_count is not None:
        if push_count < 1:
            raise DeclarationError("push_count must be >= 1")
        state.push_counts[(src_task, channel_id)] = push_count


def channel(state: MiddlewareState, channel_id: int) -> ChannelDescriptor:
    if not 0 <= channel_id < len(state.channels):
        raise DeclarationError(f"unknown channel id {channel_id}")
    return state.channels[channel_id]


def required_tokens(state: MiddlewareState, task_id: int, channel_id: int) -> int:
    return state.activation_overrides.get((task_id, channel_id), 1)


def push_count(state: MiddlewareState, task_id: int, channel_id: int) -> int:
    return state.push_counts.get((task_id, channel_id), 1)


def input_channels(state: MiddlewareState, task_id: int) -> list[ChannelDescriptor]:
    return [c for c in state.channels if c.dst == task_id]


def output_channels(state: MiddlewareState, task_id: int) -> list[ChannelDescriptor]:
    return [c for c in state.channels if c.src == task_id]


def channel_push(state: MiddlewareState, channel_id: int, value=None) -> None:
    """Blocking push from within a running job body (real backend)."""
    from .realtime import current_job_context

    ctx = current_job_context()
    if ctx is None:
        raise UsageError("channel_push outside a running job")
    ctx.push(channel_id, value)


def channel_pop(state: MiddlewareState, channel_id: int):
    """Blocking pop from within a running job body (real backend)."""
    from .realtime import current_job_context

    ctx = current_job_context()
    if ctx is None:
        raise UsageError("channel_pop outside a running job")
    return ctx.pop(channel_id)


class ChannelState:
    """Runtime FIFO state for one channel.  Not thread-safe by itself.

    Tokens never get dropped: push on a full channel and pop on an empty
    one are refused here and block at the backend layer.  `claimed` counts
    tokens logically reserved by the scheduler when it releases a job of
    the consumer, so one token burst cannot activate two jobs.
    """

    __slots__ = ("channel_id", "capacity", "items", "claimed", "pushes", "pops")

    def __init__(self, desc: ChannelDescriptor):
        self.channel_id = desc.channel_id
        self.capacity = max(desc.capacity, 1)  # capacity 0: one virtual token
        self.items: deque = deque()
        self.claimed = 0
        self.pushes = 0
        self.pops = 0
        for _ in range(min(desc.initial_tokens, self.capacity)):
            self.items.append(None)

    @property
    def occupancy(self) -> int:
        return len(self.items)

    @property
    def unclaimed(self) -> int:
        return len(self.items) - self.claimed

    def can_push(self) -> bool:
        return len(self.items) < self.capacity

    def push(self, value=None) -> None:
        assert self.can_push(), "push on full channel must block at backend level"
        self.items.append(value)
        self.pushes += 1

    def can_pop(self) -> bool:
        return bool(self.items)

    def pop(self):
        assert self.items, "pop on empty channel must block at backend level"
        if self.claimed > 0:
            self.claimed -= 1
        self.pops += 1
        return self.items.popleft()

    def reserve(self, n: int) -> None:
        assert self.unclaimed >= n
        self.claimed += n


def check_activation(
    state: MiddlewareState, channels: dict[int, ChannelState], task_id: int
) -> bool:
    """True when every input channel holds the required unclaimed tokens.

    A node with no input channels never auto-activates here; roots with a
    period are released by the clock instead.
    """
    task = state.task(task_id)
    if task.kind is not TaskKind.GRAPH_NODE:
        raise UsageError("check_activation applies to graph_node tasks")
    inputs = input_channels(state, task_id)
    if not inputs:
        return False
    for ch in inputs:
        if channels[ch.channel_id].unclaimed < required_tokens(state, task_id, ch.channel_id):
            return False
    return True


def reserve_activation(
    state: MiddlewareState, channels: dict[int, ChannelState], task_id: int
) -> None:
    """Logically claim the tokens that justified one activation."""
    for ch in input_channels(state, task_id):
        channels[ch.channel_id].reserve(required_tokens(state, task_id, ch.channel_id))


# ----------------------------------------------------- graph validation


@dataclass
class GraphInfo:
    """Derived structure used by validation and by both backends."""

    node_rate: dict[int, int] = field(default_factory=dict)  # firings per iteration
    node_root: dict[int, int] = field(default_factory=dict)  # node -> root task
    diagnostics: list[Diagnostic] = field(default_factory=list)
    topo_order: list[int] = field(default_factory=list)


def analyze_graph(state: MiddlewareState) -> GraphInfo:
    info = GraphInfo()
    diags = info.diagnostics
    edges: list[tuple[int, int, ChannelDescriptor]] = []

    for ch in state.channels:
        if ch.src is None or ch.dst is None:
            diags.append(
                Diagnostic(
                    "error",
                    "dangling-channel",
                    f"channel {ch.name!r} (id {ch.channel_id}) is not connected",
                )
            )
            continue
        edges.append((ch.src, ch.dst, ch))

    # ---- acyclicity (Kahn) over tasks touched by channels
    touched = sorted({t for s, d, _ in edges for t in (s, d)})
    indeg = {t: 0 for t in touched}
    for _, d, _ in edges:
        indeg[d] += 1
    order = [t for t in touched if indeg[t] == 0]
    seen = list(order)
    while order:
        t = order.pop(0)
        for s, d, _ in edges:
            if s == t:
                indeg[d] -= 1
                if indeg[d] == 0:
                    order.append(d)
                    seen.append(d)
    if len(seen) != len(touched):
        cyc = sorted(set(touched) - set(seen))
        names = ", ".join(state.tasks[t].name for t in cyc)
        diags.append(
            Diagnostic("error", "graph-cycle", f"channel graph has a cycle through: {names}")
        )
        return info
    info.topo_order = seen

    # ---- weakly-connected components containing graph nodes
    parent = {t: t for t in touched}

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for s, d, _ in edges:
        parent[find(s)] = find(d)
    comps: dict[int, list[int]] = {}
    for t in touched:
        comps.setdefault(find(t), []).append(t)

    for members in comps.values():
        nodes = [t for t in members if state.tasks[t].kind is TaskKind.GRAPH_NODE]
        if not nodes:
            continue
        roots = [t for t in members if state.tasks[t].period is not None]
        if not roots:
            names = ", ".join(state.tasks[t].name for t in sorted(members))
            diags.append(
                Diagnostic(
                    "error", "no-root", f"graph component {{{names}}} has no periodic root"
                )
            )
            continue
        r0 = state.tasks[roots[0]]
        for r in roots[1:]:
            t = state.tasks[r]
            if (t.period, t.release_offset, t.relative_deadline) != (
                r0.period,
                r0.release_offset,
                r0.relative_deadline,
            ):
                diags.append(
                    Diagnostic(
                        "error",
                        "root-mismatch",
                        f"roots {r0.name!r} and {t.name!r} of one graph disagree on"
                        " period/offset/deadline",
                    )
                )
        for n in nodes:
            info.node_root[n] = roots[0]

    # ---- firing rates per iteration along topological order
    rate: dict[int, Fraction] = {}
    for t in info.topo_order:
        task = state.tasks[t]
        if task.period is not None:
            rate[t] = Fraction(1)
            continue
        if task.kind is not TaskKind.GRAPH_NODE:
            rate[t] = Fraction(1)  # data exchange between recurring tasks
            continue
        inputs = input_channels(state, t)
        if not inputs:
            diags.append(
                Diagnostic(
                    "warning",
                    "dead-node",
                    f"graph node {task.name!r} has no inputs and no period;"
                    " it never auto-activates",
                )
            )
            rate[t] = Fraction(0)
            continue
        firings: Fraction | None = None
        for ch in inputs:
            src_rate = rate.get(ch.src, Fraction(0))
            arriving = src_rate * push_count(state, ch.src, ch.channel_id)
            f = arriving / required_tokens(state, t, ch.channel_id)
            if firings is None:
                firings = f
            elif firings != f:
                diags.append(
                    Diagnostic(
                        "error",
                        "rate-mismatch",
                        f"node {task.name!r}: input channels imply conflicting"
                        f" firing rates ({firings} vs {f})",
                    )
                )
                f = firings
        assert firings is not None
        if firings.denominator != 1:
            diags.append(
                Diagnostic(
                    "error",
                    "rate-fraction",
                    f"node {task.name!r} would fire {firings} times per iteration;"
                    " token flow must divide evenly",
                )
            )
            firings = Fraction(0)
        rate[t] = firings
        info.node_rate[t] = int(firings)

    # graph nodes not touched by any channel
    for task in state.tasks:
        if task.kind is TaskKind.GRAPH_NODE and task.task_id not in rate:
            if task.period is None:
                diags.append(
                    Diagnostic(
                        "warning",
                        "dead-node",
                        f"graph node {task.name!r} has no channels and no period;"
                        " it never activates",
                    )
                )
    return info


def validate_graph(state: MiddlewareState) -> list[Diagnostic]:
    return analyze_graph(state).diagnostics


# ------------------------------------------------------- SDF expansion


@dataclass(frozen=True)
class SdfEdge:
    src: str
    dst: str
    produce: int
    consume: int
    initial_tokens: int = 0


@dataclass
class SdfGraph:
    """Synchronous dataflow description: actors plus rated edges."""

    actors: list[str]
    edges: list[SdfEdge]

    def check(self) -> None:
        if not self.actors:
            raise SdfInconsistentError("empty actor list")
        if len(set(self.actors)) != len(self.actors):
            raise SdfInconsistentError("duplicate actor names")
        known = set(self.actors)
        for e in self.edges:
            if e.src not in known or e.dst not in known:
                raise SdfInconsistentError(f"edge {e.src}->{e.dst} names unknown actor")
            if e.produce < 1 or e.consume < 1:
                raise SdfInconsistentError(
                    f"edge {e.src}->{e.dst}: rates must be >= 1"
                )
            if e.initial_tokens < 0:
                raise SdfInconsistentError(
                    f"edge {e.src}->{e.dst}: initial_tokens must be >= 0"
                )


def repetition_vector(sdf: SdfGraph) -> dict[str, int]:
    """Minimal positive integer firing counts balancing every edge.

    Solves produce * q[src] == consume * q[dst] by ratio propagation over a
    spanning tree, then verifies all edges (catches inconsistent parallel
    paths) and scales to the smallest integer solution.
    """
    sdf.check()
    q: dict[str, Fraction] = {}
    adj: dict[str, list[tuple[str, Fraction, SdfEdge]]] = {a: [] for a in sdf.actors}
    for e in sdf.edges:
        ratio = Fraction(e.produce, e.consume)  # q[dst] = ratio * q[src]
        adj[e.src].append((e.dst, ratio, e))
        adj[e.dst].append((e.src, 1 / ratio, e))

    for seed in sdf.actors:
        if seed in q:
            continue
        q[seed] = Fraction(1)
        frontier = [seed]
        while frontier:
            a = frontier.pop()
            for b, ratio, e in adj[a]:
                want = q[a] * ratio
                if b not in q:
                    q[b] = want
                    frontier.append(b)
                elif q[b] != want:
                    raise SdfInconsistentError(
                        f"inconsistent rates on edge {e.src}->{e.dst}"
                        f" ({e.produce}:{e.consume})"
                    )

    scale = math.lcm(*(f.denominator for f in q.values()))
    ints = {a: int(f * scale) for a, f in q.items()}
    g = math.gcd(*ints.values())
    return {a: v // g for a, v in ints.items()}


def _check_deadlock(sdf: SdfGraph, q: dict[str, int]) -> None:
    tokens = {i: e.initial_tokens for i, e in enumerate(sdf.edges)}
    remaining = dict(q)
    ins: dict[str, list[int]] = {a: [] for a in sdf.actors}
    outs: dict[str, list[int]] = {a: [] for a in sdf.actors}
    for i, e in enumerate(sdf.edges):
        ins[e.dst].append(i)
        outs[e.src].append(i)

    progressed = True
    while progressed and any(remaining.values()):
        progressed = False
        for a in sdf.actors:
            if remaining[a] == 0:
                continue
            if all(tokens[i] >= sdf.edges[i].consume for i in ins[a]):
                for i in ins[a]:
                    tokens[i] -= sdf.edges[i].consume
                for i in outs[a]:
                    tokens[i] += sdf.edges[i].produce
                remaining[a] -= 1
                progressed = True
    if any(remaining.values()):
        stuck = sorted(a for a, r in remaining.items() if r)
        raise SdfDeadlockError(
            "deadlock: no fireable actor with the given initial tokens"
            f" (stuck: {', '.join(stuck)})"
        )


@dataclass
class ExpansionPlan:
    """One-iteration DAG derived from an SDF graph.

    Node names are actor#k for the k-th firing.  Dependencies carry exact
    token counts so that one iteration is occupancy-neutral.
    """

    repetition: dict[str, int]
    nodes: list[str]
    deps: list[tuple[str, str, int]]  # (src node, dst node, token count)
    sources: list[str]


def plan_expansion(sdf: SdfGraph) -> ExpansionPlan:
    q = repetition_vector(sdf)
    _check_deadlock(sdf, q)

    nodes = [f"{a}#{k}" for a in sdf.actors for k in range(q[a])]
    deps: list[tuple[str, str, int]] = []

    # successive firings of one actor are sequential
    for a in sdf.actors:
        for k in range(q[a] - 1):
            deps.append((f"{a}#{k}", f"{a}#{k + 1}", 1))

    for e in sdf.edges:
        if e.src == e.dst:
            continue  # self-loop ordering is covered by the firing chain
        for j in range(q[e.dst]):
            lo = j * e.consume + 1 - e.initial_tokens
            hi = (j + 1) * e.consume - e.initial_tokens
            if hi < 1:
                continue  # fully served by initial tokens
            lo = max(lo, 1)
            for i in range(q[e.src]):
                plo, phi = i * e.produce + 1, (i + 1) * e.produce
                overlap = min(hi, phi) - max(lo, plo) + 1
                if overlap > 0:
                    deps.append((f"{e.src}#{i}", f"{e.dst}#{j}", overlap))

    has_input = {d for _, d, _ in deps}
    sources = [n for n in nodes if n not in has_input]

    # sanity: the plan must admit a topological order
    indeg: dict[str, int] = {n: 0 for n in nodes}
    for _, d, _ in deps:
        indeg[d] += 1
    ordered: list[str] = [n for n in nodes if indeg[n] == 0]
    i = 0
    while i < len(ordered):
        n = ordered[i]
        i += 1
        for s, d, _ in deps:
            if s == n:
                indeg[d] -= 1
                if indeg[d] == 0:
                    ordered.append(d)
    if len(ordered) != len(nodes):
        raise SdfDeadlockError("expansion produced a cyclic dependency structure")

    return ExpansionPlan(repetition=q, nodes=nodes, deps=deps, sources=sources)


def expand_sdf(
    state: MiddlewareState,
    sdf: SdfGraph,
    *,
    period: int,
    wcets: dict[str, int],
    relative_deadline: int | None = None,
    release_offset: int = 0,
    virt_core_id: int | None = None,
) -> dict[str, int]:
    """Expand an SDF graph into graph-node tasks declared on `state`.

    Every firing becomes a task named actor#k; source firings carry the
    iteration period and act as roots.  wcets maps actor name to the
    execution estimate used for each of its firings.  Returns the
    repetition vector.
    """
    if period <= 0:
        raise DeclarationError("period must be > 0")
    plan = plan_expansion(sdf)
    missing = [a for a in sdf.actors if a not in wcets]
    if missing:
        raise DeclarationError(f"missing wcet for actors: {', '.join(missing)}")

    ids: dict[str, int] = {}
    for node in plan.nodes:
        actor = node.split("#", 1)[0]
        is_root = node in plan.sources
        # the deadline is end to end: it lives on the roots and downstream
        # firings inherit it from the root release of their iteration
        ids[node] = state.task_decl(
            node,
            TaskKind.GRAPH_NODE,
            period=period if is_root else None,
            relative_deadline=(relative_deadline or period) if is_root else None,
            release_offset=release_offset,
            virt_core_id=virt_core_id,
        )
        state.version_decl(ids[node], wcet_estimate=wcets[actor])

    for src, dst, count in plan.deps:
        cid = channel_decl(state, f"{src}->{dst}", 0, 0 if count == 1 else count)
        channel_connect(
            state,
            cid,
            ids[src],
            ids[dst],
            required_tokens=count,
            push_count=count,
        )
    return dict(plan.repetition)
