"""Enel against the per-component Bell baseline with two failure phases; writes a report."""

# %%
import sys

from enel.harness import ExperimentConfig, emit_report, format_summary, run_experiment

out = sys.argv[1] if len(sys.argv) > 1 else "demo-report"
cfg = ExperimentConfig(profile="mpc-like", runs=36, profiling_runs=10, failure_phases=[(16, 22), (28, 34)],
                       env={"noise_level": 0.05}, window=13, seed=0)
report = run_experiment(cfg)

# %% windows of adaptive runs
print(format_summary(report))

# %% failure-phase violations in minutes
for ctrl in cfg.controllers:
    hit = [r for r in report.runs_for(ctrl, "adaptive") if r.failures_enabled]
    print(f"{ctrl:<14} mean CVS under failures: {sum(r.cvs_s for r in hit) / len(hit) / 60:.2f} m")

# %%
for p in emit_report(report, out):
    print("wrote", p)
