"""Attributed component graphs of an iterative dataflow job.

A job run is a sequence of component DAGs.  Nodes are sets of parallel
tasks; each carries its observed scale-outs and metrics plus a context.
Summary nodes (``P`` for the current run, ``H`` for history) link each
component to the roots of the next one and only feed metric prediction.
"""

from __future__ import annotations

import heapq
import json
import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

METRIC_NAMES = ("cpu_utilization", "shuffle_rw", "data_io", "gc_fraction", "spill_ratio")
K_METRICS = len(METRIC_NAMES)


class CycleError(ValueError):
    pass


def enrich_scaleout(s) -> np.ndarray:
    """Ernest-style feature map ``[1 - 1/s, log s, s]``; vectorised over ``s``."""
    if isinstance(s, (int, float, np.integer, np.floating)):
        if s < 1:
            raise ValueError(f"scale-out must be >= 1, got {s}")
        return np.array([1.0 - 1.0 / s, math.log(s), float(s)])
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 1):
        raise ValueError(f"scale-out must be >= 1, got {s}")
    return np.stack([1.0 - 1.0 / s_arr, np.log(s_arr), s_arr], axis=-1)


def _natural_key(text: str):
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", str(text))]


@dataclass
class TaskNode:
    """One set of parallel tasks.

    ``a``/``z`` are the executor counts at node start/end, ``r`` the fraction
    of node time spent at ``a``.  Observation fields stay ``None`` for nodes
    that have not run yet.
    """

    id: str
    props: tuple = ()
    a: int | None = None
    z: int | None = None
    r: float = 1.0
    metrics: np.ndarray | None = None
    runtime: float | None = None
    context: np.ndarray | None = None

    def __post_init__(self):
        if self.a is not None and self.a < 1 or self.z is not None and self.z < 1:
            raise ValueError(f"node {self.id}: scale-outs must be >= 1")
        if not 0.0 <= self.r <= 1.0:
            raise ValueError(f"node {self.id}: time fraction r={self.r} outside [0, 1]")
        if self.metrics is not None:
            self.metrics = np.asarray(self.metrics, dtype=float)
            if not np.all(np.isfinite(self.metrics)) or np.any(self.metrics < 0):
                raise ValueError(f"node {self.id}: metrics must be finite and non-negative")
        if self.runtime is not None and self.runtime < 0:
            raise ValueError(f"node {self.id}: negative runtime")

    @property
    def observed(self) -> bool:
        return self.runtime is not None and self.metrics is not None


@dataclass
class SummaryNode:
    kind: str  # "P" or "H"
    component: int
    start_scaleout: int
    end_scaleout: int
    context: np.ndarray
    metrics: np.ndarray
    run_id: str | None = None

    @property
    def id(self) -> str:
        return f"{self.kind}^{self.component}"


@dataclass
class ComponentGraph:
    index: int
    nodes: list[TaskNode]
    edges: list[tuple[str, str]] = field(default_factory=list)
    summaries: list[SummaryNode] = field(default_factory=list)
    start_scaleout: int | None = None
    end_scaleout: int | None = None
    wall_time: float | None = None
    name: str = ""

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError(f"component {self.index}: duplicate node ids")
        known = set(ids)
        for u, v in self.edges:
            if u not in known or v not in known:
                raise ValueError(f"component {self.index}: edge ({u}, {v}) references unknown node")
        if len(self.summaries) > 2:
            raise ValueError("at most two summary predecessors (P, H) may be attached")
        self._preds = {i: [] for i in ids}
        for u, v in self.edges:
            self._preds[v].append(u)
        self._by_id = {n.id: n for n in self.nodes}

    def node(self, node_id: str) -> TaskNode:
        return self._by_id[node_id]

    def predecessors(self, node_id: str) -> list[str]:
        """In-graph predecessors only; summary nodes are separate."""
        return self._preds[node_id]

    def roots(self) -> list[str]:
        return sorted((n.id for n in self.nodes if not self._preds[n.id]), key=_natural_key)

    def sinks(self) -> list[str]:
        has_succ = {u for u, _ in self.edges}
        return sorted((n.id for n in self.nodes if n.id not in has_succ), key=_natural_key)

    def summary_edges(self) -> list[tuple[str, str]]:
        return [(s.id, r) for s in self.summaries for r in self.roots()]

    @property
    def observed(self) -> bool:
        return all(n.observed for n in self.nodes)


@dataclass
class JobExecution:
    run_id: str
    components: list[ComponentGraph]
    always_props: tuple = ()
    optional_props: tuple = ()
    target: float = float("inf")
    job: str = ""

    def __post_init__(self):
        if not self.components:
            raise ValueError("a job execution needs at least one component")
        if not self.target > 0:
            raise ValueError("runtime target must be positive")
        for expected, comp in enumerate(self.components):
            if comp.index != expected:
                raise ValueError(f"component indices must be consecutive from 0; got {comp.index} at {expected}")

    @property
    def n_components(self) -> int:
        return len(self.components)

    def observed_prefix(self) -> int:
        """Number of leading components that are fully observed."""
        k = 0
        while k < len(self.components) and self.components[k].observed:
            k += 1
        return k

    def truncated(self, n_components: int) -> "JobExecution":
        return replace(self, components=self.components[:n_components])

    @property
    def wall_time(self) -> float:
        return float(sum(c.wall_time or 0.0 for c in self.components))


def topological_order(g: ComponentGraph) -> list[str]:
    """Kahn's algorithm with ties broken by (natural) node id.

    Attached summary nodes come first since they have no predecessors.
    """
    indeg = {n.id: len(g.predecessors(n.id)) for n in g.nodes}
    succ: dict[str, list[str]] = {n.id: [] for n in g.nodes}
    for u, v in g.edges:
        succ[u].append(v)
    heap = [(_natural_key(i), i) for i, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = [s.id for s in g.summaries]
    while heap:
        _, u = heapq.heappop(heap)
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, (_natural_key(v), v))
    if len(order) != len(g.nodes) + len(g.summaries):
        stuck = {i for i, d in indeg.items() if d > 0}
        u, v = next((u, v) for u, v in g.edges if u in stuck and v in stuck)
        raise CycleError(f"component {g.index} contains a cycle through edge ({u}, {v})")
    return order


def make_summary_p(g: ComponentGraph, run_id: str | None = None) -> SummaryNode:
    """Current-run summary of a component: scale-outs plus mean context and metrics."""
    nodes = [n for n in g.nodes if n.metrics is not None]
    if not nodes:
        raise ValueError(f"component {g.index} has no nodes with recorded metrics")
    start = g.start_scaleout if g.start_scaleout is not None else nodes[0].a
    end = g.end_scaleout if g.end_scaleout is not None else nodes[-1].z
    contexts = [n.context for n in nodes if n.context is not None]
    context = np.mean(contexts, axis=0) if contexts else np.zeros(0)
    return SummaryNode("P", g.index, int(start), int(end), context,
                       np.mean([n.metrics for n in nodes], axis=0), run_id=run_id)


def average_summaries(nodes: Sequence[SummaryNode], kind: str = "H") -> SummaryNode:
    return SummaryNode(
        kind, nodes[0].component,
        int(np.rint(np.mean([n.start_scaleout for n in nodes]))),
        int(np.rint(np.mean([n.end_scaleout for n in nodes]))),
        np.mean([n.context for n in nodes], axis=0),
        np.mean([n.metrics for n in nodes], axis=0),
    )


def select_historical_summaries(history: Sequence[SummaryNode], current_scaleout: int, beta: int = 3) -> SummaryNode:
    """Average the ``beta`` historical P nodes closest in end scale-out.

    ``history`` is ordered oldest to newest; on equal distance the more
    recent node ranks first.
    """
    if not history:
        raise ValueError("no historical summary nodes to select from")
    if beta < 1:
        raise ValueError("beta must be >= 1")
    ranked = sorted(range(len(history)),
                    key=lambda i: (abs(history[i].end_scaleout - current_scaleout), -i))
    return average_summaries([history[i] for i in ranked[:beta]], kind="H")


def attach_summary_nodes(nxt: ComponentGraph, p: SummaryNode | None, h: SummaryNode | None = None) -> ComponentGraph:
    """Return a copy of ``nxt`` with P (and H) as predecessors of all its roots."""
    if not nxt.roots():
        raise ValueError(f"component {nxt.index} has no root")
    summaries = [s for s in (p, h) if s is not None]
    return replace(nxt, summaries=summaries)


class SummaryHistory:
    """Historical P nodes per component index, oldest first."""

    def __init__(self):
        self._by_component: dict[int, list[SummaryNode]] = {}
        self._selected: dict[tuple[int, int, int], SummaryNode | None] = {}

    def add_run(self, job: JobExecution) -> None:
        self._selected.clear()
        for comp in job.components:
            if comp.observed:
                self._by_component.setdefault(comp.index, []).append(make_summary_p(comp, job.run_id))

    @classmethod
    def from_runs(cls, runs: Iterable[JobExecution]) -> "SummaryHistory":
        hist = cls()
        for job in runs:
            hist.add_run(job)
        return hist

    def copy(self) -> "SummaryHistory":
        out = SummaryHistory()
        out._by_component = {k: list(v) for k, v in self._by_component.items()}
        return out

    def get(self, component: int) -> list[SummaryNode]:
        return self._by_component.get(component, [])

    def select(self, component: int, scaleout: int, beta: int) -> SummaryNode | None:
        key = (component, int(scaleout), beta)
        if key not in self._selected:
            nodes = self.get(component)
            self._selected[key] = select_historical_summaries(nodes, scaleout, beta) if nodes else None
        return self._selected[key]


# ---------------------------------------------------------------------------
# JSON Lines serialisation: one record per node.


def _jsonable(p):
    return int(p) if isinstance(p, (int, np.integer)) and not isinstance(p, bool) else str(p)


def job_to_records(job: JobExecution) -> list[dict]:
    records = []
    for comp in job.components:
        for node in comp.nodes:
            records.append({
                "run_id": job.run_id,
                "component": comp.index,
                "node_id": node.id,
                "preds": list(comp.predecessors(node.id)),
                "a": node.a,
                "z": node.z,
                "r": node.r,
                "metrics": None if node.metrics is None else [float(x) for x in node.metrics],
                "context_prop_refs": [_jsonable(p) for p in node.props],
                "runtime_s": node.runtime,
                "job": job.job,
                "job_props": {"always": [_jsonable(p) for p in job.always_props],
                              "optional": [_jsonable(p) for p in job.optional_props]},
                "target_s": None if not np.isfinite(job.target) else job.target,
                "component_name": comp.name,
                "component_scaleout": [comp.start_scaleout, comp.end_scaleout],
                "component_wall_s": comp.wall_time,
            })
    return records


def jobs_to_jsonl(jobs: Iterable[JobExecution]) -> str:
    return "".join(json.dumps(rec) + "\n" for job in jobs for rec in job_to_records(job))


def jobs_from_jsonl(text: str) -> list[JobExecution]:
    by_run: dict[str, dict[int, list[dict]]] = {}
    for line in text.splitlines():
        if line.strip():
            rec = json.loads(line)
            by_run.setdefault(rec["run_id"], {}).setdefault(rec["component"], []).append(rec)
    jobs = []
    for run_id, comps in by_run.items():
        graphs = []
        first = None
        for idx in sorted(comps):
            recs = comps[idx]
            first = first or recs[0]
            nodes = [TaskNode(id=r["node_id"], props=tuple(r["context_prop_refs"]), a=r["a"], z=r["z"],
                              r=r["r"], metrics=None if r["metrics"] is None else np.array(r["metrics"]),
                              runtime=r["runtime_s"]) for r in recs]
            edges = [(p, r["node_id"]) for r in recs for p in r["preds"]]
            start, end = recs[0].get("component_scaleout", [None, None])
            graphs.append(ComponentGraph(idx, nodes, edges, start_scaleout=start, end_scaleout=end,
                                         wall_time=recs[0].get("component_wall_s"),
                                         name=recs[0].get("component_name", "")))
        props = first.get("job_props", {})
        target = first.get("target_s")
        jobs.append(JobExecution(run_id, graphs, tuple(props.get("always", ())), tuple(props.get("optional", ())),
                                 target=float("inf") if target is None else target, job=first.get("job", "")))
    return jobs
