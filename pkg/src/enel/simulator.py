"""Seedable stand-in for an iterative dataflow job on an elastic cluster.

Node runtimes follow the Ernest form ``theta0 + theta1/s + theta2 log s +
theta3 s`` times lognormal noise.  Work is conserved across executor
changes: a node progresses at rate ``1 / (W * T(s(t)))`` where ``s(t)`` is
the live executor count, so changing executors mid-node only changes the
speed of the remaining work.

Failures kill one executor at a uniformly drawn second of every
``interval``-long window (while more than ``min_executors`` are live).  A
killed executor comes back after ``executor_recovery_delay`` seconds.  Each
failure also discards the killed executor's share (``1/s``) of the work
each running node completed since its previous failure, so a node always
makes net progress.  A failure further raises a job-level degradation (lost
cached partitions) that slows down subsequently started nodes and inflates
their I/O; it decays at component boundaries.

Rescaling at a component boundary costs ``rescale_latency * |delta|``
seconds of pure overhead on the roots of the new component.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .graph import ComponentGraph, JobExecution, TaskNode, topological_order


@dataclass(frozen=True)
class NodeTemplate:
    name: str
    theta: tuple[float, float, float, float]
    tasks: int = 100
    cpu: float = 0.8
    shuffle: float = 0.5
    io: float = 1.0
    gc: float = 0.05
    spill: float = 0.05

    def __post_init__(self):
        if len(self.theta) != 4 or any(c < 0 for c in self.theta):
            raise ValueError(f"node {self.name}: theta must be 4 non-negative coefficients")


@dataclass(frozen=True)
class ComponentTemplate:
    name: str
    nodes: tuple[NodeTemplate, ...]
    edges: tuple[tuple[int, int], ...] = ()


@dataclass
class JobProfile:
    name: str
    components: list[ComponentTemplate]
    iterations: int = 1
    dataset_size_gb: int = 10
    parameters: str = ""
    optional_props: tuple = ("spark 3.1.1", "scala 2.12.11")

    def __post_init__(self):
        if not self.components:
            raise ValueError("a job profile needs at least one component")

    @property
    def always_props(self) -> tuple:
        return (self.name, self.parameters, self.dataset_size_gb)

    def job_template(self, run_id: str, target: float = float("inf")) -> JobExecution:
        comps = []
        for k, ct in enumerate(self.components):
            nodes = [TaskNode(id=f"n{i + 1}", props=(nt.name, nt.tasks)) for i, nt in enumerate(ct.nodes)]
            edges = [(f"n{u + 1}", f"n{v + 1}") for u, v in ct.edges]
            comps.append(ComponentGraph(k, nodes, edges, name=ct.name))
        return JobExecution(run_id, comps, self.always_props, tuple(self.optional_props), target=target,
                            job=self.name)


@dataclass
class ClusterEnv:
    min_scaleout: int = 4
    max_scaleout: int = 36
    rescale_latency: float = 0.5
    executor_recovery_delay: float = 30.0
    noise_level: float = 0.0
    failure_slowdown: float = 0.25
    degradation_decay: float = 0.5
    failure_work_loss: float = 1.0

    def __post_init__(self):
        if not 1 <= self.min_scaleout <= self.max_scaleout:
            raise ValueError("scale-out range must satisfy 1 <= min <= max")
        if self.noise_level < 0:
            raise ValueError("noise level must be non-negative")

    @property
    def scaleouts(self) -> list[int]:
        return list(range(self.min_scaleout, self.max_scaleout + 1))


@dataclass
class FailurePlan:
    enabled: bool = False
    interval: float = 90.0
    min_executors: int = 4

    def __post_init__(self):
        if self.interval <= 0:
            raise ValueError("failure interval must be positive")


# ---------------------------------------------------------------------------
# Ground truth.


def ernest_time(theta: Sequence[float], s) -> np.ndarray | float:
    s = np.asarray(s, dtype=float)
    return theta[0] + theta[1] / s + theta[2] * np.log(s) + theta[3] * s


def noise_factor(rng: np.random.Generator, noise_level: float) -> float:
    """Mean-one lognormal factor with relative spread ``noise_level``."""
    if noise_level <= 0:
        return 1.0
    return float(np.exp(noise_level * rng.standard_normal() - 0.5 * noise_level ** 2))


def ground_truth_runtime(node: NodeTemplate, s: float, rng: np.random.Generator, noise_level: float = 0.0) -> float:
    if s < 1:
        raise ValueError(f"scale-out must be >= 1, got {s}")
    return float(ernest_time(node.theta, s)) * noise_factor(rng, noise_level)


def generate_metrics(node: NodeTemplate, s: float, rng: np.random.Generator, noise_level: float = 0.0,
                     degradation: float = 0.0, failures: int = 0) -> np.ndarray:
    """``[cpu, shuffle R/W, data I/O, GC fraction, spill ratio]`` at scale-out ``s``.

    Noise-free formulas::

        cpu     = cpu0 / (1 + s/40) * (1 - 0.3 * min(d, 1))
        shuffle = shuffle0 * (1 + s/20)
        io      = io0 * (1 + d + 0.5 * failures)
        gc      = gc0 * (1 + 8/s) * (1 + d)
        spill   = spill0 * 16/s

    with ``d`` the degradation at node start.  Fractions are clamped to [0, 1].
    """
    if s < 1:
        raise ValueError(f"scale-out must be >= 1, got {s}")
    d = degradation
    m = np.array([
        node.cpu / (1.0 + s / 40.0) * (1.0 - 0.3 * min(d, 1.0)),
        node.shuffle * (1.0 + s / 20.0),
        node.io * (1.0 + d + 0.5 * failures),
        node.gc * (1.0 + 8.0 / s) * (1.0 + d),
        node.spill * 16.0 / s,
    ])
    if noise_level > 0:
        m = m * np.exp(noise_level * rng.standard_normal(5) - 0.5 * noise_level ** 2)
    m = np.maximum(m, 0.0)
    m[[0, 3, 4]] = np.minimum(m[[0, 3, 4]], 1.0)
    return m


def critical_path(comp: ComponentTemplate, s: float) -> float:
    """Noise-free wall time of one component at constant scale-out ``s``."""
    preds: dict[int, list[int]] = {i: [] for i in range(len(comp.nodes))}
    for u, v in comp.edges:
        preds[v].append(u)
    g = ComponentGraph(0, [TaskNode(f"n{i + 1}") for i in range(len(comp.nodes))],
                       [(f"n{u + 1}", f"n{v + 1}") for u, v in comp.edges])
    end: dict[int, float] = {}
    for nid in topological_order(g):
        i = int(nid[1:]) - 1
        start = max((end[p] for p in preds[i]), default=0.0)
        end[i] = start + float(ernest_time(comp.nodes[i].theta, s))
    return max(end.values())


def noise_free_runtime(profile: JobProfile, s: float) -> float:
    return sum(critical_path(c, s) for c in profile.components)


def optimal_runtime(profile: JobProfile, env: ClusterEnv) -> tuple[int, float]:
    """Scale-out with the smallest noise-free runtime and that runtime."""
    best = min(env.scaleouts, key=lambda s: noise_free_runtime(profile, s))
    return best, noise_free_runtime(profile, best)


# ---------------------------------------------------------------------------
# Failure injection.


@dataclass
class FailureEvent:
    time: float
    executors_before: int
    component: int | None = None


class FailureInjector:
    """One candidate failure per ``interval`` window at a uniformly drawn time."""

    def __init__(self, plan: FailurePlan, rng: np.random.Generator):
        self.plan = plan
        self.rng = rng
        self.window = 0
        self._next = self._draw()

    def _draw(self) -> float:
        t = self.window * self.plan.interval + float(self.rng.uniform(0.0, self.plan.interval))
        self.window += 1
        return t

    def peek(self) -> float:
        return self._next if self.plan.enabled else np.inf

    def pop(self) -> float:
        t = self._next
        self._next = self._draw()
        return t


def inject_failures(timeline: Sequence[tuple[float, int]], end_time: float, plan: FailurePlan,
                    rng: np.random.Generator) -> list[FailureEvent]:
    """Failure events for a fixed executor timeline ``[(t, executors), ...]``.

    The timeline is piecewise constant from each entry's time on.  Killed
    executors are not fed back into the timeline here; the simulator does
    that itself with the same per-window draws.
    """
    if not plan.enabled:
        return []
    times = [t for t, _ in timeline]
    injector = FailureInjector(plan, rng)
    events = []
    while injector.peek() < end_time:
        t = injector.pop()
        idx = int(np.searchsorted(times, t, side="right")) - 1
        executors = timeline[max(idx, 0)][1]
        if executors > plan.min_executors:
            events.append(FailureEvent(t, executors))
    return events


# ---------------------------------------------------------------------------
# Scaling policies used by the simulator.


class ScalingPolicy(Protocol):
    def initial_scaleout(self, job: JobExecution) -> int: ...

    def rescale(self, job: JobExecution, component: int, elapsed: float, current: int) -> int: ...


@dataclass
class FixedScaleout:
    scaleout: int
    schedule: dict[int, int] = field(default_factory=dict)  # component -> scale-out from then on

    def initial_scaleout(self, job: JobExecution) -> int:
        return self.schedule.get(0, self.scaleout)

    def rescale(self, job: JobExecution, component: int, elapsed: float, current: int) -> int:
        return self.schedule.get(component, current)


# ---------------------------------------------------------------------------
# Simulation.


@dataclass
class NodeRecord:
    component: int
    node_id: str
    start: float
    end: float
    a: int
    z: int
    r: float
    runtime: float
    metrics: list[float]
    failures: int = 0


@dataclass
class ExecutionTrace:
    run_id: str
    nodes: list[NodeRecord] = field(default_factory=list)
    timeline: list[tuple[float, int]] = field(default_factory=list)
    failures: list[FailureEvent] = field(default_factory=list)
    rescales: list[dict] = field(default_factory=list)
    total_time: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class _Running:
    index: int
    template: NodeTemplate
    start: float
    work_from: float  # time after which work progresses (end of rescale overhead)
    W: float
    a: int
    rem: float = 1.0
    rem_at_failure: float = 1.0  # remaining work right after the last failure
    last_update: float = 0.0
    first_change: float | None = None
    exec_time: float = 0.0  # integral of live executors over time
    failures: int = 0
    degradation: float = 0.0


def _node_rng(seed: int, comp: int, node: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, comp, node, stream])


def simulate_run(profile: JobProfile, env: ClusterEnv, policy: ScalingPolicy | int, target: float = float("inf"),
                 plan: FailurePlan | None = None, seed: int = 0, run_id: str = "run",
                 on_component: Callable[[JobExecution, int], None] | None = None,
                 ) -> tuple[ExecutionTrace, JobExecution]:
    """Execute one run; returns the trace and the observed job graph sequence."""
    if isinstance(policy, (int, np.integer)):
        policy = FixedScaleout(int(policy))
    plan = plan or FailurePlan()
    job = profile.job_template(run_id, target)
    trace = ExecutionTrace(run_id)
    injector = FailureInjector(plan, np.random.default_rng([seed, 104729]))
    clamp = lambda s: int(min(max(int(s), env.min_scaleout), env.max_scaleout))  # noqa: E731

    t = 0.0
    alloc = clamp(policy.initial_scaleout(job))
    down = 0
    recoveries: list[float] = []
    degradation = 0.0
    live = lambda: max(1, alloc - down)  # noqa: E731
    trace.timeline.append((0.0, live()))

    for k, ct in enumerate(profile.components):
        comp = job.components[k]
        comp_start = t
        start_live = live()
        overhead_end = t
        pending_alloc = None
        if k > 0:
            new = clamp(policy.rescale(job, k, t, alloc))
            if new != alloc:
                overhead_end = t + env.rescale_latency * abs(new - alloc)
                pending_alloc = new
                trace.rescales.append({"time": t, "component": k, "from": alloc, "to": new})
        preds = {i: [] for i in range(len(ct.nodes))}
        succs = {i: [] for i in range(len(ct.nodes))}
        for u, v in ct.edges:
            preds[v].append(u)
            succs[u].append(v)
        waiting = {i: len(preds[i]) for i in range(len(ct.nodes))}
        running: dict[int, _Running] = {}
        finished: dict[int, NodeRecord] = {}

        def start_node(i: int, now: float, work_from: float):
            tpl = ct.nodes[i]
            noise = noise_factor(_node_rng(seed, k, i, 0), env.noise_level)
            W = noise * (1.0 + degradation)
            running[i] = _Running(i, tpl, now, work_from, W, live(), last_update=work_from, degradation=degradation)

        def advance(to: float):
            # integrate executor-time and work progress up to `to` at the current live count
            for rn in running.values():
                rn.exec_time += live() * (to - max(rn.start, t_prev[0]))
            t_prev[0] = to

        def settle(now: float):
            # bring remaining work up to date before the live executor count changes
            s = live()
            for rn in running.values():
                if now > rn.work_from:
                    begin = max(rn.last_update, rn.work_from)
                    rn.rem -= (now - begin) / (rn.W * ernest_time(rn.template.theta, s))
                    rn.last_update = now
                if rn.first_change is None:
                    rn.first_change = now

        t_prev = [t]
        for i in range(len(ct.nodes)):
            if waiting[i] == 0:
                start_node(i, t, overhead_end)

        while running:
            s = live()
            completions = []
            for rn in running.values():
                if t < rn.work_from:
                    continue
                begin = max(rn.last_update, rn.work_from)
                completions.append((begin + rn.rem * rn.W * ernest_time(rn.template.theta, s), rn.index))
            t_complete = min(completions)[0] if completions else np.inf
            t_over = overhead_end if pending_alloc is not None else np.inf
            t_fail = injector.peek()
            t_rec = recoveries[0] if recoveries else np.inf
            t_next = min(t_complete, t_over, t_fail, t_rec)
            advance(t_next)
            t = t_next
            if t_next == t_over:
                settle(t)
                alloc = pending_alloc
                pending_alloc = None
                trace.timeline.append((t, live()))
            elif t_next == t_complete:
                for end_time, i in sorted(completions):
                    if end_time != t:
                        continue
                    rn = running.pop(i)
                    dur = t - rn.start
                    s_eff = rn.exec_time / dur if dur > 0 else float(live())
                    r = 1.0 if rn.first_change is None or dur <= 0 else (rn.first_change - rn.start) / dur
                    metrics = generate_metrics(rn.template, s_eff, _node_rng(seed, k, i, 1), env.noise_level,
                                               rn.degradation, rn.failures)
                    finished[i] = NodeRecord(k, f"n{i + 1}", rn.start, t, rn.a, live(), min(max(r, 0.0), 1.0),
                                             dur, metrics.tolist(), rn.failures)
                    for v in succs[i]:
                        waiting[v] -= 1
                        if waiting[v] == 0:
                            start_node(v, t, t)
            elif t_next == t_fail:
                injector.pop()
                if live() > plan.min_executors:
                    trace.failures.append(FailureEvent(t, live(), k))
                    s_before = live()
                    settle(t)
                    for rn in running.values():
                        if t >= rn.work_from:
                            done = max(0.0, rn.rem_at_failure - rn.rem)
                            rn.rem = min(1.0, rn.rem + env.failure_work_loss * done / s_before)
                            rn.rem_at_failure = rn.rem
                        rn.failures += 1
                    down += 1
                    heapq.heappush(recoveries, t + env.executor_recovery_delay)
                    degradation += env.failure_slowdown
                    trace.timeline.append((t, live()))
            else:
                settle(t)
                heapq.heappop(recoveries)
                down = max(0, down - 1)
                trace.timeline.append((t, live()))

        for i in range(len(ct.nodes)):
            rec = finished[i]
            node = comp.nodes[i]
            node.a, node.z, node.r = rec.a, rec.z, rec.r
            node.runtime = rec.runtime
            node.metrics = np.array(rec.metrics)
            trace.nodes.append(rec)
        comp.start_scaleout = start_live
        comp.end_scaleout = live()
        comp.wall_time = t - comp_start
        degradation *= env.degradation_decay
        if on_component is not None:
            on_component(job, k)

    trace.total_time = t
    return trace, job


# ---------------------------------------------------------------------------
# Shipped profiles.


def _chain(n: int) -> tuple[tuple[int, int], ...]:
    return tuple((i, i + 1) for i in range(n - 1))


def lr_like() -> JobProfile:
    prep = ComponentTemplate("lr-prepare", (
        NodeTemplate("lr read textfile", (3.0, 320.0, 0.5, 0.05), 216, cpu=0.6, io=4.0, shuffle=0.1),
        NodeTemplate("lr cache features", (1.0, 160.0, 0.2, 0.05), 216, cpu=0.7, io=2.0, spill=0.1),
    ), _chain(2))
    it = ComponentTemplate("lr-iteration", (
        NodeTemplate("lr gradient map", (0.8, 90.0, 0.2, 0.05), 216, cpu=0.9, io=0.4, gc=0.04),
        NodeTemplate("lr tree aggregate", (0.5, 20.0, 0.3, 0.08), 64, cpu=0.5, shuffle=0.8, io=0.1),
    ), _chain(2))
    final = ComponentTemplate("lr-finalize", (
        NodeTemplate("lr evaluate model", (2.0, 60.0, 0.2, 0.04), 216, cpu=0.7, io=0.5),
    ))
    return JobProfile("lr-like", [prep] + [it] * 20 + [final], iterations=20, dataset_size_gb=27,
                      parameters="logistic regression 20 iterations")


def mpc_like() -> JobProfile:
    prep = ComponentTemplate("mpc-prepare", (
        NodeTemplate("mpc read textfile", (3.0, 320.0, 0.5, 0.05), 216, cpu=0.6, io=4.0, shuffle=0.1),
        NodeTemplate("mpc stack layers", (1.0, 120.0, 0.2, 0.05), 216, cpu=0.7, io=2.0),
    ), _chain(2))
    it = ComponentTemplate("mpc-iteration", (
        NodeTemplate("mpc forward pass", (0.6, 70.0, 0.2, 0.04), 216, cpu=0.95, io=0.3, gc=0.06),
        NodeTemplate("mpc backward pass", (0.6, 90.0, 0.2, 0.04), 216, cpu=0.95, io=0.3, gc=0.07),
        NodeTemplate("mpc gradient aggregate", (0.4, 25.0, 0.3, 0.09), 64, cpu=0.5, shuffle=1.2, io=0.1),
        NodeTemplate("mpc weight update", (0.5, 10.0, 0.1, 0.03), 16, cpu=0.4, shuffle=0.2, io=0.05),
    ), _chain(4))
    final = ComponentTemplate("mpc-finalize", (
        NodeTemplate("mpc evaluate model", (2.0, 60.0, 0.2, 0.04), 216, cpu=0.7, io=0.5),
    ))
    return JobProfile("mpc-like", [prep] + [it] * 20 + [final], iterations=20, dataset_size_gb=27,
                      parameters="multilayer perceptron 20 iterations layers 200 100 50 3")


def kmeans_like() -> JobProfile:
    prep = ComponentTemplate("kmeans-prepare", (
        NodeTemplate("kmeans read points", (4.0, 480.0, 0.5, 0.06), 384, cpu=0.6, io=6.0, shuffle=0.1),
        NodeTemplate("kmeans sample centers", (1.0, 60.0, 0.2, 0.05), 384, cpu=0.5, io=0.5),
        NodeTemplate("kmeans cache points", (1.5, 200.0, 0.2, 0.05), 384, cpu=0.7, io=3.0, spill=0.15),
    ), ((0, 1), (0, 2)))
    it = ComponentTemplate("kmeans-iteration", (
        NodeTemplate("kmeans broadcast centers", (0.5, 8.0, 0.1, 0.03), 8, cpu=0.3, shuffle=0.05, io=0.05),
        NodeTemplate("kmeans assign points", (2.0, 240.0, 0.5, 0.15), 384, cpu=0.95, io=1.2, gc=0.08),
        NodeTemplate("kmeans partial sums", (1.0, 80.0, 0.3, 0.05), 384, cpu=0.8, io=0.4, shuffle=0.3),
        NodeTemplate("kmeans update centers", (0.8, 15.0, 0.3, 0.1), 8, cpu=0.4, shuffle=0.9, io=0.05),
    ), ((0, 1), (0, 2), (1, 3), (2, 3)))
    final = ComponentTemplate("kmeans-finalize", (
        NodeTemplate("kmeans compute cost", (2.0, 120.0, 0.3, 0.05), 384, cpu=0.8, io=1.0),
    ))
    return JobProfile("kmeans-like", [prep] + [it] * 10 + [final], iterations=10, dataset_size_gb=48,
                      parameters="kmeans 10 iterations 8 clusters")


def gbt_like() -> JobProfile:
    prep = ComponentTemplate("gbt-prepare", (
        NodeTemplate("gbt read vandermonde", (3.0, 360.0, 0.5, 0.05), 280, cpu=0.6, io=5.0, shuffle=0.1),
        NodeTemplate("gbt bin features", (1.0, 120.0, 0.2, 0.05), 280, cpu=0.8, io=1.0, shuffle=0.6),
    ), _chain(2))
    steps = [
        ComponentTemplate("gbt-compute-residuals", (
            NodeTemplate("gbt predict residuals", (0.5, 30.0, 0.1, 0.03), 280, cpu=0.85, io=0.3),
            NodeTemplate("gbt persist residuals", (0.3, 12.0, 0.1, 0.02), 280, cpu=0.5, io=0.6, spill=0.1),
        ), _chain(2)),
        ComponentTemplate("gbt-find-splits", (
            NodeTemplate("gbt histogram aggregate", (0.6, 45.0, 0.2, 0.05), 280, cpu=0.9, shuffle=1.0, io=0.2),
            NodeTemplate("gbt best split", (0.3, 6.0, 0.1, 0.03), 32, cpu=0.4, shuffle=0.2, io=0.05),
        ), _chain(2)),
        ComponentTemplate("gbt-grow-tree", (
            NodeTemplate("gbt partition nodes", (0.4, 25.0, 0.1, 0.03), 280, cpu=0.8, io=0.3),
            NodeTemplate("gbt collect tree", (0.2, 4.0, 0.1, 0.02), 16, cpu=0.3, io=0.02),
        ), _chain(2)),
        ComponentTemplate("gbt-update-ensemble", (
            NodeTemplate("gbt update predictions", (0.4, 20.0, 0.1, 0.03), 280, cpu=0.8, io=0.4, gc=0.06),
        )),
    ]
    final = ComponentTemplate("gbt-finalize", (
        NodeTemplate("gbt evaluate ensemble", (2.0, 60.0, 0.2, 0.04), 280, cpu=0.7, io=0.5),
    ))
    return JobProfile("gbt-like", [prep] + steps * 10 + [final], iterations=10, dataset_size_gb=35,
                      parameters="gradient boosted trees 10 iterations regression")


PROFILES: dict[str, Callable[[], JobProfile]] = {
    "lr-like": lr_like,
    "mpc-like": mpc_like,
    "kmeans-like": kmeans_like,
    "gbt-like": gbt_like,
}


def get_profile(name: str) -> JobProfile:
    try:
        return PROFILES[name]()
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; available: {', '.join(PROFILES)}") from None


# ---------------------------------------------------------------------------
# Structured config (YAML or JSON).


def _node_from_dict(d: dict) -> NodeTemplate:
    metrics = d.get("metrics", {})
    return NodeTemplate(d["name"], tuple(float(x) for x in d["theta"]), int(d.get("tasks", 100)),
                        **{k: float(v) for k, v in metrics.items()})


def _component_from_dict(d: dict) -> ComponentTemplate:
    return ComponentTemplate(d["name"], tuple(_node_from_dict(n) for n in d["nodes"]),
                             tuple(tuple(e) for e in d.get("edges", ())))


def profile_from_dict(d: dict) -> JobProfile:
    """Build a profile from a config mapping.

    Either ``{"builtin": "kmeans-like"}`` or::

        name: my-job
        iterations: 10
        dataset_size_gb: 48
        parameters: "kmeans 8 clusters"
        prepare: [<component>, ...]      # optional
        iteration: [<component>, ...]    # repeated `iterations` times
        finalize: [<component>, ...]     # optional

    where ``<component>`` is ``{name, nodes: [{name, theta: [4 floats],
    tasks, metrics: {cpu, shuffle, io, gc, spill}}], edges: [[u, v], ...]}``
    with 0-based node indices.
    """
    if "builtin" in d:
        return get_profile(d["builtin"])
    iters = int(d.get("iterations", 1))
    comps = [_component_from_dict(c) for c in d.get("prepare", [])]
    body = [_component_from_dict(c) for c in d.get("iteration", [])]
    comps += body * iters
    comps += [_component_from_dict(c) for c in d.get("finalize", [])]
    return JobProfile(d["name"], comps, iterations=iters, dataset_size_gb=int(d.get("dataset_size_gb", 10)),
                      parameters=d.get("parameters", ""),
                      optional_props=tuple(d.get("optional_props", ("spark 3.1.1", "scala 2.12.11"))))


def env_from_dict(d: dict | None) -> ClusterEnv:
    return ClusterEnv(**(d or {}))
