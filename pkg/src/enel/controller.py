"""Scale-out recommendations against a runtime target."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .bell import ComponentBell
from .graph import JobExecution, SummaryHistory
from .model import EnelModel, fine_tune, forward

MET_TARGET = "met-target"
BEST_EFFORT = "best-effort"
NO_CHANGE = "no-change"


@dataclass
class SafetyConfig:
    """Hysteresis and planning slack.

    A switch away from a target-meeting current scale-out is suppressed when
    it moves by at most ``hysteresis_delta`` executors or changes the
    predicted remaining runtime by less than ``min_saving_fraction`` of the
    target.  When no candidate meets the target, the current scale-out is
    kept unless the best one saves at least that fraction.  ``margin`` plans
    against ``(1 - margin) * target``.
    """

    hysteresis_delta: int = 1
    min_saving_fraction: float = 0.05
    margin: float = 0.0
    finetune_epochs: int | None = None
    finetune_budget_s: float = 10.0
    finetune_learning_rate: float | None = None
    finetune_replay: int = 3


@dataclass
class ScalingDecision:
    chosen_scaleout: int
    predicted_remaining: float
    candidates: dict[int, float]
    reason: str
    component: int = 0
    elapsed: float = 0.0
    run_id: str = ""
    fit_s: float = 0.0
    predict_s: float = 0.0

    def __post_init__(self):
        if self.chosen_scaleout not in self.candidates:
            raise ValueError("chosen scale-out must be one of the candidates")

    def to_log(self) -> dict:
        return {"run_id": self.run_id, "component": self.component, "elapsed_s": self.elapsed,
                "candidates": {str(s): r for s, r in self.candidates.items()},
                "chosen": self.chosen_scaleout, "reason": self.reason}

    def to_json(self) -> str:
        return json.dumps(self.to_log())


def choose_scaleout(candidates: Mapping[int, float], target: float, elapsed: float = 0.0,
                    current: int | None = None, safety: SafetyConfig | None = None) -> ScalingDecision:
    """Smallest scale-out whose ``elapsed + remaining`` meets the target.

    Falls back to the scale-out with the least remaining runtime.  Candidate
    order does not matter.
    """
    safety = safety or SafetyConfig()
    if not candidates:
        raise ValueError("no candidate scale-outs")
    cands = {int(s): float(r) for s, r in candidates.items()}
    budget = (1.0 - safety.margin) * target - elapsed
    ok = [s for s, r in cands.items() if r <= budget]
    if ok:
        chosen, reason = min(ok), MET_TARGET
    else:
        chosen, reason = min(cands, key=lambda s: (cands[s], s)), BEST_EFFORT
    if current is not None and current in cands and chosen != current:
        small_move = abs(chosen - current) <= safety.hysteresis_delta
        small_gain = abs(cands[current] - cands[chosen]) < safety.min_saving_fraction * target
        if cands[current] <= budget:
            keep = small_move or small_gain
        else:
            # behind schedule: only a rescale that buys a meaningful gain is worth its overhead
            keep = reason == BEST_EFFORT and small_gain
        if keep:
            chosen, reason = current, NO_CHANGE
    return ScalingDecision(chosen, cands[chosen], cands, reason, elapsed=elapsed)


def _candidate_range(scaleout_range: Sequence[int]) -> np.ndarray:
    lo, hi = scaleout_range
    if lo < 1 or hi < lo:
        raise ValueError(f"invalid scale-out range {scaleout_range}")
    return np.arange(lo, hi + 1)


def initial_scaleout(history: Sequence[JobExecution], model: EnelModel, target: float,
                     scaleout_range: Sequence[int] = (4, 36), bell: ComponentBell | None = None,
                     job: JobExecution | None = None, safety: SafetyConfig | None = None) -> ScalingDecision:
    """Bell on the first component plus Enel over the rest, for every candidate."""
    if not history:
        raise ValueError("initial allocation needs historical runs")
    if not model.trained:
        raise ValueError("model is not trained")
    S = _candidate_range(scaleout_range)
    t0 = time.perf_counter()
    bell = bell or ComponentBell().fit(history)
    fit_s = time.perf_counter() - t0
    template = job if job is not None else history[-1]
    t0 = time.perf_counter()
    first = bell.predict(0, S)
    rest = forward(model, template, 1, S, history=history).remaining if template.n_components > 1 else 0.0
    totals = np.asarray(first + rest, dtype=float)
    decision = choose_scaleout(dict(zip(S.tolist(), totals.tolist())), target, 0.0, None, safety)
    decision.fit_s, decision.predict_s = fit_s, time.perf_counter() - t0
    decision.run_id = job.run_id if job is not None else ""
    return decision


def recommend_rescale(state: JobExecution, component: int, model: EnelModel, target: float,
                      scaleout_range: Sequence[int] = (4, 36), elapsed: float = 0.0,
                      safety: SafetyConfig | None = None, current: int | None = None,
                      history: Sequence[JobExecution] | SummaryHistory = (),
                      replay: Sequence[JobExecution] = ()) -> ScalingDecision:
    """Fine-tune on the observed prefix, then evaluate every candidate scale-out.

    ``replay`` runs (typically the most recent completed ones) join the
    prefix in the fine-tuning batch.
    """
    if component < 1:
        raise ValueError("rescale decisions are taken from the second component on")
    if elapsed < 0:
        raise ValueError("elapsed time must be non-negative")
    if not model.trained:
        raise ValueError("model is not trained")
    safety = safety or SafetyConfig()
    S = _candidate_range(scaleout_range)
    t0 = time.perf_counter()
    prefix = state.truncated(component)
    tuned = fine_tune(model, [*replay, prefix], epochs=safety.finetune_epochs,
                      learning_rate=safety.finetune_learning_rate, budget_s=safety.finetune_budget_s,
                      history=history)
    fit_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    remaining = forward(tuned, state, component, S, history=history).remaining
    predict_s = time.perf_counter() - t0
    decision = choose_scaleout(dict(zip(S.tolist(), np.asarray(remaining).tolist())), target, elapsed,
                               current, safety)
    decision.component, decision.run_id = component, state.run_id
    decision.fit_s, decision.predict_s = fit_s, predict_s
    return decision


@dataclass
class EnelController:
    """Scaling policy for the simulator backed by an Enel model.

    Decisions are logged in ``decisions``; the model itself is never mutated
    (fine-tuning works on a clone).
    """

    model: EnelModel
    history: list[JobExecution]
    target: float
    scaleout_range: tuple[int, int] = (4, 36)
    safety: SafetyConfig = field(default_factory=SafetyConfig)
    decisions: list[ScalingDecision] = field(default_factory=list)
    _summaries: SummaryHistory | None = field(default=None, repr=False)

    def _replay(self) -> list[JobExecution]:
        k = self.safety.finetune_replay
        return list(self.history[-k:]) if k > 0 else []

    def initial_scaleout(self, job: JobExecution) -> int:
        d = initial_scaleout(self.history, self.model, self.target, self.scaleout_range, job=job,
                             safety=self.safety)
        self.decisions.append(d)
        return d.chosen_scaleout

    def rescale(self, job: JobExecution, component: int, elapsed: float, current: int) -> int:
        if self._summaries is None:
            self._summaries = self.model.summary_history(self.history)
        d = recommend_rescale(job, component, self.model, self.target, self.scaleout_range, elapsed,
                              self.safety, current, self._summaries, self._replay())
        self.decisions.append(d)
        return d.chosen_scaleout


@dataclass
class BellController:
    """Per-component Bell models refit on every run; remaining = sum of component predictions."""

    history: list[JobExecution]
    target: float
    scaleout_range: tuple[int, int] = (4, 36)
    safety: SafetyConfig = field(default_factory=SafetyConfig)
    decisions: list[ScalingDecision] = field(default_factory=list)
    bell: ComponentBell | None = None

    def _decide(self, job: JobExecution, component: int, elapsed: float, current: int | None) -> int:
        S = _candidate_range(self.scaleout_range)
        t0 = time.perf_counter()
        if self.bell is None:
            self.bell = ComponentBell().fit(self.history)
        fit_s = time.perf_counter() - t0
        t0 = time.perf_counter()
        remaining = self.bell.remaining(component, job.n_components, S)
        d = choose_scaleout(dict(zip(S.tolist(), remaining.tolist())), self.target, elapsed, current, self.safety)
        d.component, d.run_id = component, job.run_id
        d.fit_s, d.predict_s = fit_s, time.perf_counter() - t0
        self.decisions.append(d)
        return d.chosen_scaleout

    def initial_scaleout(self, job: JobExecution) -> int:
        return self._decide(job, 0, 0.0, None)

    def rescale(self, job: JobExecution, component: int, elapsed: float, current: int) -> int:
        return self._decide(job, component, elapsed, current)
