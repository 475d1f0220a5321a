"""Message-passing model of node overheads and runtimes, with metric propagation.

Four two-layer networks make up the model:

* ``f1`` predicts the rescaling overhead of a node from its context,
  metrics, start/end scale-out and the time fraction spent at the start
  scale-out.
* ``f2`` predicts the node runtime from context, metrics, end scale-out and
  the predicted overhead.
* ``f3`` transforms a (target, predecessor) pair of node descriptors; its
  ``tanh`` projected onto the attention vector gives the edge score.
* ``f4`` maps ``f3``'s output and the predecessor metrics to a metric
  message.  Messages are averaged with softmax-normalised edge weights.

All quantities enter the networks normalised (see :class:`Scaler`); public
functions take and return raw units (seconds, raw metric values).
"""

from __future__ import annotations

import copy
import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoding import AutoencoderParams, ContextEncoder
from .graph import (
    K_METRICS,
    ComponentGraph,
    JobExecution,
    SummaryHistory,
    SummaryNode,
    enrich_scaleout,
    make_summary_p,
    topological_order,
)
from .nn import MLP, clip_by_global_norm, make_optimizer, softplus


@dataclass
class ModelConfig:
    embedding_dim: int = 8
    metric_dim: int = K_METRICS
    hidden: int = 32
    attention_dim: int = 16
    overhead_weight: float = 0.1
    beta: int = 3
    optimizer: str = "adam"
    learning_rate: float = 5e-3
    clip_norm: float = 5.0
    epochs: int = 400
    finetune_epochs: int = 20
    finetune_learning_rate: float = 2e-3
    property_size: int = 33
    autoencoder_epochs: int = 1500

    @property
    def context_dim(self) -> int:
        return 3 * self.embedding_dim

    @property
    def x_dim(self) -> int:
        return 3 + self.context_dim + 3


@dataclass
class Scaler:
    """Fixed input/output normalisation fitted on the from-scratch training set."""

    so_mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    so_std: np.ndarray = field(default_factory=lambda: np.ones(3))
    metric_scale: np.ndarray = field(default_factory=lambda: np.ones(K_METRICS))
    runtime_scale: float = 1.0

    @classmethod
    def fit(cls, runs: Sequence[JobExecution], metric_dim: int) -> "Scaler":
        nodes = [n for job in runs for c in job.components for n in c.nodes if n.observed]
        if not nodes:
            return cls(metric_scale=np.ones(metric_dim))
        so = enrich_scaleout(np.array([[n.a, n.z] for n in nodes], dtype=float).ravel())
        std = so.std(axis=0)
        std[std < 1e-6] = 1.0
        ms = np.mean([n.metrics for n in nodes], axis=0)
        ms[ms < 1e-6] = 1.0
        rs = float(np.mean([n.runtime for n in nodes]))
        return cls(so.mean(axis=0), std, ms, rs if rs > 0 else 1.0)

    def so(self, enriched: np.ndarray) -> np.ndarray:
        return (enriched - self.so_mean) / self.so_std

    def to_dict(self) -> dict:
        return {"so_mean": self.so_mean.tolist(), "so_std": self.so_std.tolist(),
                "metric_scale": self.metric_scale.tolist(), "runtime_scale": self.runtime_scale}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.array(d["so_mean"]), np.array(d["so_std"]), np.array(d["metric_scale"]),
                   float(d["runtime_scale"]))


NETWORKS = ("f1", "f2", "f3", "f4")


@dataclass
class EnelModel:
    config: ModelConfig
    f1: MLP
    f2: MLP
    f3: MLP
    f4: MLP
    attention: np.ndarray
    scaler: Scaler = field(default_factory=Scaler)
    encoder: ContextEncoder | None = None
    trained_on_runs: list[str] = field(default_factory=list)
    trained: bool = False
    last_curve: LossCurve | None = field(default=None, repr=False, compare=False)

    @classmethod
    def init(cls, config: ModelConfig | None = None, seed: int = 0) -> "EnelModel":
        cfg = config or ModelConfig()
        rng = np.random.default_rng(seed)
        C, K, H, D = cfg.context_dim, cfg.metric_dim, cfg.hidden, cfg.attention_dim
        # f1 starts near zero overhead: most nodes never rescale
        return cls(
            config=cfg,
            f1=MLP.init(C + K + 3 + 3 + 1, H, 1, rng, out_bias=-4.0),
            f2=MLP.init(C + K + 3 + 1, H, 1, rng, out_bias=0.5),
            f3=MLP.init(2 * cfg.x_dim, H, D, rng, output="linear"),
            f4=MLP.init(D + K, H, K, rng, out_bias=0.5),
            attention=rng.normal(0.0, 1.0 / np.sqrt(D), D),
            scaler=Scaler(metric_scale=np.ones(K)),
        )

    def params(self) -> dict[str, np.ndarray]:
        out = {f"{name}.{k}": v for name in NETWORKS for k, v in getattr(self, name).params().items()}
        out["attention"] = self.attention
        return out

    def clone(self) -> "EnelModel":
        # the encoder is never updated after training, so copies share it (and its cache)
        return copy.deepcopy(self, memo={id(self.encoder): self.encoder})

    # -- context handling -------------------------------------------------

    def context(self, job: JobExecution, node_props: tuple) -> np.ndarray:
        if self.encoder is None:
            return np.zeros(self.config.context_dim)
        return self.encoder.context(job.always_props, job.optional_props, node_props)

    def featurize(self, job: JobExecution) -> JobExecution:
        """Attach context vectors to every node of ``job`` (in place)."""
        token = None if self.encoder is None else self.encoder.token
        if token is not None and getattr(job, "_context_token", None) == token:
            return job
        for comp in job.components:
            for node in comp.nodes:
                node.context = self.context(job, node.props)
        if token is not None:
            job._context_token = token
        return job

    def summary_history(self, runs: Sequence[JobExecution] | SummaryHistory) -> SummaryHistory:
        """Summary nodes of ``runs``; an already built history is passed through."""
        if isinstance(runs, SummaryHistory):
            return runs
        for job in runs:
            self.featurize(job)
        return SummaryHistory.from_runs(runs)

    # -- serialisation ----------------------------------------------------

    def to_dict(self, autoencoder_ref: str | None = None) -> dict:
        d = {"config": asdict(self.config)}
        for name in NETWORKS:
            d[f"params_{name}"] = getattr(self, name).to_dict()
        d["attention"] = self.attention.tolist()
        d["scaler"] = self.scaler.to_dict()
        d["autoencoder_ref"] = autoencoder_ref
        d["trained_on_runs"] = list(self.trained_on_runs)
        d["trained"] = self.trained
        return d

    @classmethod
    def from_dict(cls, d: dict, encoder: ContextEncoder | None = None) -> "EnelModel":
        return cls(
            config=ModelConfig(**d["config"]),
            **{name: MLP.from_dict(d[f"params_{name}"]) for name in NETWORKS},
            attention=np.asarray(d["attention"], dtype=float),
            scaler=Scaler.from_dict(d["scaler"]),
            encoder=encoder,
            trained_on_runs=list(d.get("trained_on_runs", [])),
            trained=d.get("trained", True),
        )

    def save(self, path: str | Path) -> Path:
        """Write the checkpoint JSON plus a sibling autoencoder JSON."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        ref = None
        if self.encoder is not None:
            ae_path = path.with_name(path.stem + ".autoencoder.json")
            ae_path.write_text(self.encoder.params.to_json())
            ref = ae_path.name
        path.write_text(json.dumps(self.to_dict(autoencoder_ref=ref)))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "EnelModel":
        path = Path(path)
        d = json.loads(path.read_text())
        encoder = None
        if d.get("autoencoder_ref"):
            encoder = ContextEncoder(AutoencoderParams.from_json((path.parent / d["autoencoder_ref"]).read_text()))
        return cls.from_dict(d, encoder)


def count_parameters(model: EnelModel) -> int:
    """Scalar parameters of f1-f4 and the attention vector (autoencoder excluded)."""
    return sum(getattr(model, name).n_params() for name in NETWORKS) + model.attention.size


def analytic_parameter_count(config: ModelConfig) -> int:
    C, K, H, D = config.context_dim, config.metric_dim, config.hidden, config.attention_dim
    layers = [
        (C + K + 7, H), (H, 1),
        (C + K + 4, H), (H, 1),
        (2 * config.x_dim, H), (H, D),
        (D + K, H), (H, K),
    ]
    return sum(i * o + o for i, o in layers) + D


# ---------------------------------------------------------------------------
# Single-node operations (raw units in, raw units out).


def _check(vec, n: int, what: str) -> np.ndarray:
    v = np.asarray(vec, dtype=float)
    if v.shape[-1] != n:
        raise ValueError(f"{what}: expected length {n}, got {v.shape[-1]}")
    return v


def predict_overhead(model: EnelModel, c, m, a_enriched, z_enriched, r) -> float:
    cfg, sc = model.config, model.scaler
    c = _check(c, cfg.context_dim, "context")
    m = _check(m, cfg.metric_dim, "metrics")
    a = sc.so(_check(a_enriched, 3, "start scale-out"))
    z = sc.so(_check(z_enriched, 3, "end scale-out"))
    x = np.concatenate([c, m / sc.metric_scale, a, z, [float(r)]])
    return float(model.f1(x)[0] * sc.runtime_scale)


def predict_runtime(model: EnelModel, c, m, z_enriched, o: float) -> float:
    cfg, sc = model.config, model.scaler
    c = _check(c, cfg.context_dim, "context")
    m = _check(m, cfg.metric_dim, "metrics")
    z = sc.so(_check(z_enriched, 3, "end scale-out"))
    x = np.concatenate([c, m / sc.metric_scale, z, [o / sc.runtime_scale]])
    return float(model.f2(x)[0] * sc.runtime_scale)


def accumulate_runtimes(graph: ComponentGraph, t_hat: dict) -> dict:
    """Completion time per node: own runtime plus the latest predecessor's.

    Summary nodes never contribute.  Values may be scalars or arrays (one
    entry per candidate scale-out).
    """
    tt = {}
    for nid in topological_order(graph):
        if nid not in t_hat:
            continue  # summary node
        preds = graph.predecessors(nid)
        tt[nid] = t_hat[nid] + (np.max([tt[p] for p in preds], axis=0) if preds else 0.0)
    return tt


def graph_total(graph: ComponentGraph, tt: dict):
    return np.max([tt[s] for s in graph.sinks()], axis=0)


def normalize_x(model: EnelModel, x) -> np.ndarray:
    x = np.array(x, dtype=float)
    x[..., :3] = model.scaler.so(x[..., :3])
    x[..., -3:] = model.scaler.so(x[..., -3:])
    return x


def node_descriptor(a: int, context: np.ndarray, z: int) -> np.ndarray:
    """Raw ``x = enrich(a) | c | enrich(z)``."""
    return np.concatenate([enrich_scaleout(a), context, enrich_scaleout(z)])


def _softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(scores - scores.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _scores(model: EnelModel, xi_n: np.ndarray, xj_n: np.ndarray):
    """Attention scores of predecessors ``xj_n`` (..., P, dx) for target ``xi_n`` (..., dx)."""
    xi = np.broadcast_to(xi_n[..., None, :], xj_n.shape)
    h3 = model.f3(np.concatenate([xi, xj_n], axis=-1))
    return np.tanh(h3) @ model.attention, h3


def edge_weights(model: EnelModel, x_i, preds) -> np.ndarray:
    """Softmax-normalised weights of the incoming edges of one node."""
    preds = np.atleast_2d(np.asarray(preds, dtype=float))
    if preds.shape[0] == 0:
        raise ValueError("edge weights are undefined for a node without predecessors")
    xi = normalize_x(model, _check(x_i, model.config.x_dim, "target descriptor"))
    xj = normalize_x(model, _check(preds, model.config.x_dim, "predecessor descriptor"))
    scores, _ = _scores(model, xi, xj)
    return _softmax(scores)


def _propagate_n(model: EnelModel, xi_n, xj_n, mj_n) -> np.ndarray:
    scores, h3 = _scores(model, xi_n, xj_n)
    w = _softmax(scores)
    msg = model.f4(np.concatenate([h3, mj_n], axis=-1))
    return np.sum(w[..., None] * msg, axis=-2)


def propagate_metrics(model: EnelModel, x_i, preds: Sequence[tuple]) -> np.ndarray:
    """Weighted average of predecessor metric messages; ``preds`` = [(x_j, m_j), ...]."""
    if not preds:
        raise ValueError("metric propagation needs at least one predecessor")
    xj = normalize_x(model, _check(np.array([p[0] for p in preds], dtype=float), model.config.x_dim,
                                   "predecessor descriptor"))
    mj = _check(np.array([p[1] for p in preds], dtype=float), model.config.metric_dim, "metrics")
    xi = normalize_x(model, _check(x_i, model.config.x_dim, "target descriptor"))
    return _propagate_n(model, xi, xj, mj / model.scaler.metric_scale) * model.scaler.metric_scale


# ---------------------------------------------------------------------------
# Forward inference over the remaining components of a job.


@dataclass
class NodePrediction:
    predicted_overhead: np.ndarray
    predicted_runtime: np.ndarray
    accumulated_runtime: np.ndarray
    predicted_metrics: np.ndarray


@dataclass
class ForwardResult:
    remaining: np.ndarray | float
    component_totals: dict[int, np.ndarray]
    nodes: dict[tuple[int, str], NodePrediction]
    scaleouts: np.ndarray


def _summary_parts(model: EnelModel, s: SummaryNode):
    x = normalize_x(model, node_descriptor(s.start_scaleout, s.context, s.end_scaleout))
    return x, s.metrics / model.scaler.metric_scale


def forward(model: EnelModel, job: JobExecution, from_component: int, assumed_scaleout,
            history: Sequence[JobExecution] | SummaryHistory = ()) -> ForwardResult:
    """Predict the remaining runtime from ``from_component`` on, per candidate scale-out.

    The component just before ``from_component`` should be observed; if it
    is not, historical summaries selected at each candidate stand in for its
    P node.  Later components are treated as templates running at ``a = z = assumed_scaleout`` with
    ``r = 1``.  ``assumed_scaleout`` may be a scalar or a sequence of
    candidates, which are evaluated jointly.
    """
    n = job.n_components
    if not 0 <= from_component <= n:
        raise ValueError(f"from_component {from_component} outside [0, {n}]")
    scalar = np.ndim(assumed_scaleout) == 0
    S = np.atleast_1d(np.asarray(assumed_scaleout, dtype=int))
    B = len(S)
    cfg, sc = model.config, model.scaler

    def finish(total, comp_totals, nodes):
        return ForwardResult(float(total[0]) if scalar else total, comp_totals, nodes, S)

    if from_component == n:
        return finish(np.zeros(B), {}, {})

    model.featurize(job)
    hist = model.summary_history(history)
    s_n = sc.so(enrich_scaleout(S))  # (B, 3)
    ones = np.ones((B, 1))

    def h_per_candidate(component: int):
        if not hist.get(component):
            return None
        parts = [_summary_parts(model, hist.select(component, int(s), cfg.beta)) for s in S]
        return np.stack([p[0] for p in parts]), np.stack([p[1] for p in parts])

    prev_p = None  # (x (B, dx), m (B, K)) of the previous component's P node
    prev_h_fixed = None
    if from_component > 0:
        before = job.components[from_component - 1]
        if before.observed:
            p = make_summary_p(before, job.run_id)
            px, pm = _summary_parts(model, p)
            prev_p = (np.broadcast_to(px, (B, cfg.x_dim)), np.broadcast_to(pm, (B, cfg.metric_dim)))
            h = hist.select(from_component - 1, p.end_scaleout, cfg.beta)
            if h is not None:
                hx, hm = _summary_parts(model, h)
                prev_h_fixed = (np.broadcast_to(hx, (B, cfg.x_dim)), np.broadcast_to(hm, (B, cfg.metric_dim)))
        else:
            # initial allocation: the preceding component has not run, history stands in for P
            prev_h_fixed = h_per_candidate(from_component - 1)
            if prev_h_fixed is None:
                raise ValueError(f"component {from_component - 1} is neither observed nor in the history")
            prev_p = prev_h_fixed

    total = np.zeros(B)
    comp_totals: dict[int, np.ndarray] = {}
    node_preds: dict[tuple[int, str], NodePrediction] = {}
    for k in range(from_component, n):
        comp = job.components[k]
        summaries = []
        if k > 0:
            summaries.append(prev_p)
            h = prev_h_fixed if k == from_component else h_per_candidate(k - 1)
            if h is not None:
                summaries.append(h)
        done: dict[str, tuple] = {}
        t_hat: dict[str, np.ndarray] = {}
        real = {nd.id for nd in comp.nodes}
        for nid in topological_order(comp):
            if nid not in real:
                continue
            node = comp.node(nid)
            ctx = np.broadcast_to(node.context, (B, cfg.context_dim))
            x_i = np.concatenate([s_n, ctx, s_n], axis=1)
            preds = comp.predecessors(nid)
            sources = [done[p] for p in preds] if preds else summaries
            if sources:
                xj = np.stack([s[0] for s in sources], axis=1)
                mj = np.stack([s[1] for s in sources], axis=1)
                m_hat = _propagate_n(model, x_i, xj, mj)
            else:
                h0 = h_per_candidate(k)
                m_hat = h0[1] if h0 is not None else np.zeros((B, cfg.metric_dim))
            o = model.f1(np.concatenate([ctx, m_hat, s_n, s_n, ones], axis=1))
            t = model.f2(np.concatenate([ctx, m_hat, s_n, o], axis=1))
            done[nid] = (x_i, m_hat)
            t_hat[nid] = t[:, 0] * sc.runtime_scale
            node_preds[(k, nid)] = NodePrediction(o[:, 0] * sc.runtime_scale, t_hat[nid], None,
                                                  m_hat * sc.metric_scale)
        tt = accumulate_runtimes(comp, t_hat)
        for nid, val in tt.items():
            node_preds[(k, nid)].accumulated_runtime = val
        comp_totals[k] = graph_total(comp, tt)
        total = total + comp_totals[k]
        mean_ctx = np.mean([nd.context for nd in comp.nodes], axis=0)
        prev_p = (np.concatenate([s_n, np.broadcast_to(mean_ctx, (B, cfg.context_dim)), s_n], axis=1),
                  np.mean([done[nd.id][1] for nd in comp.nodes], axis=0))
    if scalar:
        for pred in node_preds.values():
            pred.predicted_overhead = float(pred.predicted_overhead[0])
            pred.predicted_runtime = float(pred.predicted_runtime[0])
            pred.accumulated_runtime = float(pred.accumulated_runtime[0])
            pred.predicted_metrics = pred.predicted_metrics[0]
        comp_totals = {k: float(v[0]) for k, v in comp_totals.items()}
    return finish(total, comp_totals, node_preds)


# ---------------------------------------------------------------------------
# Training.


@dataclass
class TrainingBatch:
    """Observed nodes of one or more runs plus their metric-propagation edges."""

    ctx: np.ndarray
    metrics: np.ndarray
    a: np.ndarray  # enriched, raw
    z: np.ndarray
    r: np.ndarray
    runtime: np.ndarray
    edge_tgt: np.ndarray
    edge_x: np.ndarray  # raw source descriptors
    edge_m: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.runtime)

    @property
    def no_rescale(self) -> np.ndarray:
        return np.all(self.a == self.z, axis=1)


def build_batch(model: EnelModel, runs: Sequence[JobExecution], history: Sequence[JobExecution] | SummaryHistory = ()) -> TrainingBatch:
    """Teacher-forced batch: every observed node with its observed inputs.

    Roots of component ``k > 0`` get the run's own P node of ``k - 1`` and
    an H node averaged over the runs that precede it.
    """
    cfg = model.config
    hist = model.summary_history(history).copy()  # extended below as runs are consumed
    ctx, met, a, z, r, rt = [], [], [], [], [], []
    e_tgt, e_x, e_m = [], [], []
    for job in runs:
        model.featurize(job)
        prev_p = None
        for comp in job.components:
            if not comp.observed:
                break
            offset = len(rt)
            index = {nd.id: offset + i for i, nd in enumerate(comp.nodes)}
            summaries = []
            if prev_p is not None:
                summaries.append(prev_p)
                h = hist.select(comp.index - 1, prev_p.end_scaleout, cfg.beta)
                if h is not None:
                    summaries.append(h)
            for nd in comp.nodes:
                ctx.append(nd.context)
                met.append(nd.metrics)
                a.append(nd.a)
                z.append(nd.z)
                r.append(nd.r)
                rt.append(nd.runtime)
                preds = comp.predecessors(nd.id)
                for p in preds:
                    src = comp.node(p)
                    e_tgt.append(index[nd.id])
                    e_x.append(node_descriptor(src.a, src.context, src.z))
                    e_m.append(src.metrics)
                if not preds:
                    for s in summaries:
                        e_tgt.append(index[nd.id])
                        e_x.append(node_descriptor(s.start_scaleout, s.context, s.end_scaleout))
                        e_m.append(s.metrics)
            prev_p = make_summary_p(comp, job.run_id)
        hist.add_run(job)
    if not rt:
        raise ValueError("no observed nodes to train on")
    return TrainingBatch(
        ctx=np.array(ctx), metrics=np.array(met),
        a=enrich_scaleout(np.array(a, dtype=float)), z=enrich_scaleout(np.array(z, dtype=float)),
        r=np.array(r, dtype=float), runtime=np.array(rt, dtype=float),
        edge_tgt=np.array(e_tgt, dtype=int),
        edge_x=np.array(e_x).reshape(-1, cfg.x_dim), edge_m=np.array(e_m).reshape(-1, cfg.metric_dim),
    )


def loss_and_grads(model: EnelModel, b: TrainingBatch, need_grads: bool = True):
    """Joint loss ``runtime MSE + metric MSE + gamma * no-rescale overhead^2``.

    Returns ``(parts, grads)`` where ``parts`` holds ``total``,
    ``runtime_mse``, ``metric_mse`` and ``overhead_reg``; ``grads`` is keyed
    like :meth:`EnelModel.params`.
    """
    sc, gamma = model.scaler, model.config.overhead_weight
    n = b.n_nodes
    A, Z = sc.so(b.a), sc.so(b.z)
    Mn = b.metrics / sc.metric_scale
    Tn = b.runtime / sc.runtime_scale

    o, c1 = model.f1.forward(np.concatenate([b.ctx, Mn, A, Z, b.r[:, None]], axis=1))
    t, c2 = model.f2.forward(np.concatenate([b.ctx, Mn, Z, o], axis=1))
    rt_err = t[:, 0] - Tn
    runtime_mse = float(np.mean(rt_err ** 2))
    nr = b.no_rescale
    n_nr = int(nr.sum())
    overhead_reg = float(np.mean(o[nr, 0] ** 2)) if n_nr else 0.0

    E = len(b.edge_tgt)
    metric_mse = 0.0
    if E:
        tgt = b.edge_tgt
        xi = np.concatenate([A[tgt], b.ctx[tgt], Z[tgt]], axis=1)
        xj = normalize_x(model, b.edge_x)
        h3, c3 = model.f3.forward(np.concatenate([xi, xj], axis=1))
        S = np.tanh(h3)
        score = S @ model.attention
        mx = np.full(n, -np.inf)
        np.maximum.at(mx, tgt, score)
        ex = np.exp(score - mx[tgt])
        w = ex / np.bincount(tgt, ex, minlength=n)[tgt]
        F4, c4 = model.f4.forward(np.concatenate([h3, b.edge_m / sc.metric_scale], axis=1))
        m_hat = np.zeros((n, model.config.metric_dim))
        np.add.at(m_hat, tgt, w[:, None] * F4)
        has = np.zeros(n, dtype=bool)
        has[tgt] = True
        m_err = m_hat[has] - Mn[has]
        metric_mse = float(np.mean(m_err ** 2))

    total = runtime_mse + metric_mse + gamma * overhead_reg
    parts = {"total": total, "runtime_mse": runtime_mse, "metric_mse": metric_mse, "overhead_reg": overhead_reg}
    if not need_grads:
        return parts, None

    grads: dict[str, np.ndarray] = {}
    dx2, g2 = model.f2.backward(c2, (2.0 * rt_err / n)[:, None])
    do = dx2[:, -1:].copy()
    if n_nr:
        do[nr] += 2.0 * gamma * o[nr] / n_nr
    _, g1 = model.f1.backward(c1, do)
    g3 = {k: np.zeros_like(v) for k, v in model.f3.params().items()}
    g4 = {k: np.zeros_like(v) for k, v in model.f4.params().items()}
    g_att = np.zeros_like(model.attention)
    if E:
        dm_hat = np.zeros_like(m_hat)
        dm_hat[has] = 2.0 * m_err / m_err.size
        dF4 = w[:, None] * dm_hat[tgt]
        dw = np.sum(dm_hat[tgt] * F4, axis=1)
        dscore = w * (dw - np.bincount(tgt, w * dw, minlength=n)[tgt])
        g_att = S.T @ dscore
        dh3 = (dscore[:, None] * model.attention[None, :]) * (1.0 - S ** 2)
        dx4, g4 = model.f4.backward(c4, dF4)
        dh3 += dx4[:, :h3.shape[1]]
        _, g3 = model.f3.backward(c3, dh3)
    for name, g in (("f1", g1), ("f2", g2), ("f3", g3), ("f4", g4)):
        for k, v in g.items():
            grads[f"{name}.{k}"] = v
    grads["attention"] = g_att
    return parts, grads


@dataclass
class LossCurve:
    rows: list[dict] = field(default_factory=list)

    def append(self, epoch: int, parts: dict) -> None:
        self.rows.append({"epoch": epoch, **parts})

    @property
    def totals(self) -> np.ndarray:
        return np.array([r["total"] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["epoch", "total", "runtime_mse", "metric_mse", "overhead_reg"])
        w.writeheader()
        w.writerows(self.rows)
        return buf.getvalue()


def _fit(model: EnelModel, batch: TrainingBatch, epochs: int, lr: float, budget_s: float | None = None) -> LossCurve:
    cfg = model.config
    opt = make_optimizer(cfg.optimizer, lr)
    params = model.params()
    curve = LossCurve()
    start = time.perf_counter()
    for epoch in range(epochs):
        parts, grads = loss_and_grads(model, batch)
        curve.append(epoch, parts)
        clip_by_global_norm(grads, cfg.clip_norm)
        opt.step(params, grads)
        if budget_s is not None and time.perf_counter() - start > budget_s:
            break
    parts, _ = loss_and_grads(model, batch, need_grads=False)
    curve.append(len(curve.rows), parts)
    return curve


def _properties(runs: Sequence[JobExecution]):
    for job in runs:
        yield from job.always_props
        yield from job.optional_props
        for comp in job.components:
            for node in comp.nodes:
                yield from node.props


def train(model: EnelModel | ModelConfig | None, dataset: Sequence[JobExecution], epochs: int | None = None,
          learning_rate: float | None = None, seed: int = 0) -> tuple[EnelModel, LossCurve]:
    """Train a fresh model on ``dataset``, encoder and scaler included.

    ``model`` only supplies the configuration; it is left untouched.
    """
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    cfg = model.config if isinstance(model, EnelModel) else (model or ModelConfig())
    fresh = EnelModel.init(cfg, seed=seed)
    fresh.encoder = ContextEncoder.fit(_properties(dataset), N=cfg.property_size, M=cfg.embedding_dim,
                                       epochs=cfg.autoencoder_epochs, seed=seed)
    fresh.scaler = Scaler.fit(dataset, cfg.metric_dim)
    batch = build_batch(fresh, dataset)
    curve = _fit(fresh, batch, cfg.epochs if epochs is None else epochs,
                 cfg.learning_rate if learning_rate is None else learning_rate)
    fresh.trained = True
    fresh.trained_on_runs = [job.run_id for job in dataset]
    return fresh, curve


def fine_tune(model: EnelModel, recent: Sequence[JobExecution], epochs: int | None = None,
              learning_rate: float | None = None, budget_s: float | None = None,
              history: Sequence[JobExecution] | SummaryHistory = ()) -> EnelModel:
    """Warm-started training on recent (possibly partial) runs; returns a tuned copy."""
    if not model.trained:
        raise ValueError("fine-tuning requires a trained model")
    tuned = model.clone()
    epochs = model.config.finetune_epochs if epochs is None else epochs
    if epochs <= 0 or not recent:
        return tuned
    batch = build_batch(tuned, recent, history)
    tuned.last_curve = _fit(tuned, batch, epochs,
                            model.config.finetune_learning_rate if learning_rate is None else learning_rate,
                            budget_s)
    return tuned
