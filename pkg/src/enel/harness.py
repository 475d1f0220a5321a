"""Experiment protocol: profiling, then adaptive runs under a chosen controller, with reports."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .controller import BellController, EnelController, SafetyConfig
from .graph import JobExecution, job_to_records
from .model import EnelModel, ModelConfig, fine_tune, train
from .simulator import (
    ClusterEnv,
    FailurePlan,
    FixedScaleout,
    JobProfile,
    get_profile,
    optimal_runtime,
    profile_from_dict,
    simulate_run,
)

log = logging.getLogger(__name__)

CONTROLLERS = ("enel", "bell-baseline", "static")


class ConfigError(ValueError):
    pass


class ExperimentError(RuntimeError):
    def __init__(self, run: int, controller: str, cause: Exception):
        super().__init__(f"run {run} ({controller}) failed: {cause}")
        self.run = run
        self.controller = controller


# ---------------------------------------------------------------------------
# Metrics.


@dataclass
class ViolationStats:
    per_run: list[float]
    mean: float
    median: float


def _stats(values: list[float]) -> ViolationStats:
    if not values:
        return ViolationStats([], 0.0, 0.0)
    return ViolationStats(values, float(np.mean(values)), float(np.median(values)))


def _check_targets(runs):
    pairs = [(float(a), float(t)) for a, t in runs]
    if any(t <= 0 for _, t in pairs):
        raise ValueError("runtime targets must be positive")
    return pairs


def compute_cvc(runs: Sequence[tuple[float, float]]) -> ViolationStats:
    """Constraint violation count: 1 per run whose runtime exceeds its target."""
    return _stats([1.0 if a > t else 0.0 for a, t in _check_targets(runs)])


def compute_cvs(runs: Sequence[tuple[float, float]]) -> ViolationStats:
    """Constraint violation sum in seconds: ``max(0, actual - target)`` per run."""
    return _stats([max(0.0, a - t) for a, t in _check_targets(runs)])


# ---------------------------------------------------------------------------
# Configuration.


@dataclass
class ExperimentConfig:
    profile: str = "kmeans-like"
    target: float | None = None
    target_factor: float = 1.25
    runs: int = 65
    profiling_runs: int = 10
    retrain_period: int = 5
    failure_phases: list[tuple[int, int]] = field(default_factory=list)
    controllers: list[str] = field(default_factory=lambda: ["enel", "bell-baseline"])
    seed: int = 0
    env: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    safety: dict = field(default_factory=dict)
    static_scaleout: int | None = None
    window: int = 11
    profile_config: dict | None = None

    def __post_init__(self):
        self.failure_phases = [tuple(int(x) for x in p) for p in self.failure_phases]
        if self.profiling_runs < 1 or self.profiling_runs > self.runs:
            raise ConfigError(f"need 1 <= profiling_runs <= runs, got {self.profiling_runs} and {self.runs}")
        for lo, hi in self.failure_phases:
            if not 1 <= lo <= hi <= self.runs:
                raise ConfigError(f"failure phase ({lo}, {hi}) outside [1, {self.runs}]")
        unknown = set(self.controllers) - set(CONTROLLERS)
        if unknown or not self.controllers:
            raise ConfigError(f"unknown controllers {sorted(unknown)}; choose from {CONTROLLERS}")
        if self.retrain_period < 1:
            raise ConfigError("retrain_period must be >= 1")
        if self.target is not None and self.target <= 0:
            raise ConfigError("target must be positive")
        try:
            self.cluster_env()
            self.model_config()
            self.safety_config()
            self.job_profile()
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    def cluster_env(self) -> ClusterEnv:
        return ClusterEnv(**self.env)

    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.model)

    def safety_config(self) -> SafetyConfig:
        return SafetyConfig(**self.safety)

    def job_profile(self) -> JobProfile:
        if self.profile_config is not None:
            return profile_from_dict(self.profile_config)
        return get_profile(self.profile)

    def in_failure_phase(self, run: int) -> bool:
        return any(lo <= run <= hi for lo, hi in self.failure_phases)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["failure_phases"] = [list(p) for p in self.failure_phases]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(data)


# ---------------------------------------------------------------------------
# Report.


@dataclass
class RunRecord:
    run: int
    controller: str
    phase: str
    failures_enabled: bool
    runtime_s: float
    target_s: float
    cvc: int
    cvs_s: float
    scaleouts: list[int]
    n_failures: int = 0
    train_s: float = 0.0
    fit_s: float = 0.0
    predict_s: float = 0.0
    prediction_error: float | None = None
    decisions: list[dict] = field(default_factory=list)


@dataclass
class ExperimentReport:
    config: dict
    target_s: float
    records: list[RunRecord] = field(default_factory=list)
    traces: list[dict] = field(default_factory=list)

    def runs_for(self, controller: str, phase: str | None = None) -> list[RunRecord]:
        return [r for r in self.records if r.controller == controller and (phase is None or r.phase == phase)]

    def windows(self) -> list[dict]:
        size = self.config.get("window", 11)
        out = []
        for ctrl in dict.fromkeys(r.controller for r in self.records):
            adaptive = self.runs_for(ctrl, "adaptive")
            for i in range(0, len(adaptive), size):
                chunk = adaptive[i:i + size]
                pairs = [(r.runtime_s, r.target_s) for r in chunk]
                cvc, cvs = compute_cvc(pairs), compute_cvs(pairs)
                out.append({"controller": ctrl, "first_run": chunk[0].run, "last_run": chunk[-1].run,
                            "cvc_mean": cvc.mean, "cvc_median": cvc.median,
                            "cvs_mean_min": cvs.mean / 60.0, "cvs_median_min": cvs.median / 60.0})
        return out

    def to_dict(self) -> dict:
        return {"config": self.config, "target_s": self.target_s,
                "records": [asdict(r) for r in self.records], "windows": self.windows()}

    @classmethod
    def from_dict(cls, d: dict, traces: list[dict] | None = None) -> "ExperimentReport":
        return cls(d["config"], d["target_s"], [RunRecord(**r) for r in d["records"]], traces or [])


def prediction_errors(decisions: Sequence[dict], total: float) -> list[float]:
    """Relative error of each decision's predicted remaining runtime vs. what followed."""
    errs = []
    for d in decisions:
        actual = total - d["elapsed_s"]
        if actual > 0:
            errs.append(abs(d["predicted_remaining"] - actual) / actual)
    return errs


# ---------------------------------------------------------------------------
# Experiment loop.


def _run_seed(seed: int, run: int) -> int:
    return int(np.random.SeedSequence([seed, run]).generate_state(1)[0])


def profiling_scaleouts(env: ClusterEnv, n: int) -> list[int]:
    return [int(s) for s in np.rint(np.linspace(env.min_scaleout, env.max_scaleout, n))]


def default_target(profile: JobProfile, env: ClusterEnv, factor: float = 1.25) -> float:
    return factor * optimal_runtime(profile, env)[1]


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    profile = config.job_profile()
    env = config.cluster_env()
    mcfg = config.model_config()
    safety = config.safety_config()
    target = config.target if config.target is not None else default_target(profile, env, config.target_factor)
    srange = (env.min_scaleout, env.max_scaleout)
    sweep = profiling_scaleouts(env, config.profiling_runs)
    report = ExperimentReport(config.to_dict(), target)

    for ctrl in config.controllers:
        history: list[JobExecution] = []
        base: EnelModel | None = None
        static_s = config.static_scaleout
        for run in range(1, config.runs + 1):
            try:
                profiling = run <= config.profiling_runs
                train_s = 0.0
                if profiling:
                    policy = FixedScaleout(sweep[(run - 1) % len(sweep)])
                elif ctrl == "enel":
                    j = run - config.profiling_runs - 1
                    t0 = time.perf_counter()
                    if j % config.retrain_period == 0 or base is None:
                        base, _ = train(mcfg, history, seed=config.seed)
                    else:
                        base = fine_tune(base, [history[-1]], history=history[:-1])
                    train_s = time.perf_counter() - t0
                    policy = EnelController(base, history, target, srange, safety)
                elif ctrl == "bell-baseline":
                    policy = BellController(history, target, srange, safety)
                else:
                    if static_s is None:
                        static_s = BellController(history, target, srange, safety).initial_scaleout(history[-1])
                    policy = FixedScaleout(static_s)

                plan = FailurePlan(enabled=config.in_failure_phase(run))
                trace, job = simulate_run(profile, env, policy, target, plan, _run_seed(config.seed, run),
                                          run_id=f"{ctrl}-{run}")
            except Exception as exc:
                raise ExperimentError(run, ctrl, exc) from exc

            decisions = [{**d.to_log(), "predicted_remaining": d.predicted_remaining,
                          "fit_s": d.fit_s, "predict_s": d.predict_s}
                         for d in getattr(policy, "decisions", [])]
            errs = prediction_errors(decisions, trace.total_time)
            scaleouts = [job.components[0].start_scaleout] + [r["to"] for r in trace.rescales]
            report.records.append(RunRecord(
                run=run, controller=ctrl, phase="profiling" if profiling else "adaptive",
                failures_enabled=plan.enabled, runtime_s=trace.total_time, target_s=target,
                cvc=int(trace.total_time > target), cvs_s=max(0.0, trace.total_time - target),
                scaleouts=[int(s) for s in scaleouts], n_failures=len(trace.failures), train_s=train_s,
                fit_s=sum(d["fit_s"] for d in decisions), predict_s=sum(d["predict_s"] for d in decisions),
                prediction_error=float(np.mean(errs)) if errs else None, decisions=decisions,
            ))
            report.traces.append({"controller": ctrl, "run": run, **trace.to_dict(),
                                  "job": job_to_records(job)})
            history.append(job)
            log.info("%s run %d: %.1fs (target %.1fs), scale-outs %s", ctrl, run, trace.total_time, target, scaleouts)
    return report


# ---------------------------------------------------------------------------
# Files.

RUN_FIELDS = ["run", "controller", "runtime_s", "target_s", "cvc", "cvs_s", "scaleouts", "phase",
              "failures_enabled", "n_failures", "prediction_error"]
WINDOW_FIELDS = ["controller", "first_run", "last_run", "cvc_mean", "cvc_median", "cvs_mean_min", "cvs_median_min"]
TIMING_FIELDS = ["run", "controller", "component", "fit_s", "predict_s"]


def _write_csv(path: Path, fields: list[str], rows: list[dict]) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    return path


def emit_report(report: ExperimentReport, out_dir: str | Path) -> list[Path]:
    """Write the report to ``out_dir`` as JSON, CSV and JSON Lines files.

    ``timing.csv`` and the timing fields of ``summary.json`` hold wall-clock
    measurements; every other file is a deterministic function of the
    config and seed.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    paths = [out / "summary.json"]
    paths[0].write_text(json.dumps(report.to_dict(), indent=1))
    run_rows = [{**asdict(r), "scaleouts": ";".join(map(str, r.scaleouts))} for r in report.records]
    paths.append(_write_csv(out / "runs.csv", RUN_FIELDS, run_rows))
    paths.append(_write_csv(out / "windows.csv", WINDOW_FIELDS, report.windows()))
    timing = [{"run": r.run, "controller": r.controller, "component": d["component"],
               "fit_s": d["fit_s"], "predict_s": d["predict_s"]} for r in report.records for d in r.decisions]
    paths.append(_write_csv(out / "timing.csv", TIMING_FIELDS, timing))
    dec = out / "decisions.jsonl"
    dec.write_text("".join(json.dumps({k: d[k] for k in ("run_id", "component", "elapsed_s", "candidates",
                                                         "chosen", "reason")}) + "\n"
                           for r in report.records for d in r.decisions))
    paths.append(dec)
    tr = out / "traces.jsonl"
    tr.write_text("".join(json.dumps(t, sort_keys=True) + "\n" for t in report.traces))
    paths.append(tr)
    jobs = out / "jobs.jsonl"
    jobs.write_text("".join(json.dumps(rec) + "\n" for t in report.traces for rec in t.get("job", [])))
    paths.append(jobs)
    return paths


def load_report(in_dir: str | Path) -> ExperimentReport:
    d = Path(in_dir)
    summary = json.loads((d / "summary.json").read_text())
    traces = []
    tr = d / "traces.jsonl"
    if tr.exists():
        traces = [json.loads(line) for line in tr.read_text().splitlines() if line.strip()]
    return ExperimentReport.from_dict(summary, traces)


def format_summary(report: ExperimentReport) -> str:
    lines = [f"target: {report.target_s:.1f} s"]
    lines.append(f"{'controller':<14} {'runs':>9} {'CVC mean':>9} {'CVC med':>8} {'CVS mean':>9} {'CVS med':>8}")
    for w in report.windows():
        lines.append(f"{w['controller']:<14} {w['first_run']:>4}-{w['last_run']:<4} {w['cvc_mean']:>9.2f} "
                     f"{w['cvc_median']:>8.2f} {w['cvs_mean_min']:>8.2f}m {w['cvs_median_min']:>7.2f}m")
    return "\n".join(lines)
