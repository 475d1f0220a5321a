"""Command line entry point of the ``enel`` program."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .graph import jobs_from_jsonl, jobs_to_jsonl
from .harness import ConfigError, ExperimentConfig, emit_report, format_summary, load_report, run_experiment
from .model import EnelModel, ModelConfig, count_parameters, fine_tune, train
from .simulator import ClusterEnv, FailurePlan, get_profile, simulate_run

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("enel")


def _read_jobs(path: str):
    try:
        jobs = jobs_from_jsonl(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read traces {path}: {exc}") from exc
    if not jobs:
        raise ConfigError(f"no job executions in {path}")
    return jobs


def cmd_experiment_run(args) -> int:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    report = run_experiment(cfg)
    emit_report(report, args.out)
    print(format_summary(report))
    return EXIT_OK


def cmd_experiment_report(args) -> int:
    try:
        report = load_report(args.in_dir)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot load report from {args.in_dir}: {exc}") from exc
    print(format_summary(report))
    return EXIT_OK


def cmd_model_train(args) -> int:
    jobs = _read_jobs(args.traces)
    overrides = {"epochs": args.epochs} if args.epochs is not None else {}
    model, curve = train(ModelConfig(**overrides), jobs, seed=args.seed)
    model.save(args.checkpoint)
    if args.curve:
        Path(args.curve).write_text(curve.to_csv())
    print(f"trained on {len(jobs)} runs, final loss {curve.rows[-1]['total']:.5f} -> {args.checkpoint}")
    return EXIT_OK


def cmd_model_finetune(args) -> int:
    model = _load_model(args.checkpoint)
    jobs = _read_jobs(args.traces)
    tuned = fine_tune(model, jobs, epochs=args.epochs)
    tuned.save(args.out or args.checkpoint)
    if args.curve and tuned.last_curve is not None:
        Path(args.curve).write_text(tuned.last_curve.to_csv())
    print(f"fine-tuned on {len(jobs)} runs -> {args.out or args.checkpoint}")
    return EXIT_OK


def cmd_model_inspect(args) -> int:
    model = _load_model(args.checkpoint)
    info = {"parameters": count_parameters(model), "trained": model.trained,
            "trained_on_runs": len(model.trained_on_runs), "config": model.config.__dict__}
    print(json.dumps(info, indent=2))
    return EXIT_OK


def _load_model(path: str) -> EnelModel:
    try:
        return EnelModel.load(path)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot load checkpoint {path}: {exc}") from exc


def cmd_simulate(args) -> int:
    try:
        profile = get_profile(args.profile)
        env = ClusterEnv(noise_level=args.noise)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not env.min_scaleout <= args.scaleout <= env.max_scaleout:
        raise ConfigError(f"scale-out {args.scaleout} outside [{env.min_scaleout}, {env.max_scaleout}]")
    trace, job = simulate_run(profile, env, args.scaleout, plan=FailurePlan(enabled=args.failures),
                              seed=args.seed, run_id=args.run_id)
    if args.out:
        Path(args.out).write_text(jobs_to_jsonl([job]))
    print(f"{args.profile} at s={args.scaleout}: {trace.total_time:.2f} s, "
          f"{len(trace.failures)} failures, {len(job.components)} components")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="enel", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    exp = sub.add_parser("experiment", help="run or summarise an experiment")
    exp_sub = exp.add_subparsers(dest="action", required=True)
    p = exp_sub.add_parser("run")
    p.add_argument("--config", help="YAML or JSON experiment config")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_experiment_run)
    p = exp_sub.add_parser("report")
    p.add_argument("--in", dest="in_dir", required=True)
    p.set_defaults(func=cmd_experiment_report)

    mdl = sub.add_parser("model", help="train, fine-tune or inspect checkpoints")
    mdl_sub = mdl.add_subparsers(dest="action", required=True)
    p = mdl_sub.add_parser("train")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--traces", required=True, help="JSON Lines job executions")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--curve", help="write the loss curve CSV here")
    p.set_defaults(func=cmd_model_train)
    p = mdl_sub.add_parser("finetune")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--traces", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="write the tuned checkpoint here instead of in place")
    p.add_argument("--curve")
    p.set_defaults(func=cmd_model_finetune)
    p = mdl_sub.add_parser("inspect")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_model_inspect)

    p = sub.add_parser("simulate", help="simulate one run at a fixed scale-out")
    p.add_argument("--profile", required=True)
    p.add_argument("--scaleout", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--failures", action="store_true")
    p.add_argument("--run-id", default="run-0")
    p.add_argument("--out", help="write the job graph sequence as JSON Lines")
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
