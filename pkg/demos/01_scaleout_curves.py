"""Simulated runtimes over the scale-out range and the Bell fit of each component."""

# %%
import numpy as np

from enel.bell import ComponentBell
from enel.simulator import ClusterEnv, get_profile, noise_free_runtime, optimal_runtime, simulate_run

prof = get_profile("kmeans-like")
env = ClusterEnv(noise_level=0.05)
sweep = np.rint(np.linspace(4, 36, 10)).astype(int)

# %% noisy runs against the noise-free curve
runs = []
for i, s in enumerate(sweep):
    trace, job = simulate_run(prof, env, int(s), seed=i, run_id=f"sweep-{i}")
    runs.append(job)
    print(f"s={s:2d}  simulated {trace.total_time:7.1f} s  noise-free {noise_free_runtime(prof, s):7.1f} s")
s_opt, t_opt = optimal_runtime(prof, env)
print(f"optimum: s={s_opt}, {t_opt:.1f} s")

# %% one Bell model per component, summed over the job
bell = ComponentBell().fit(runs)
kinds = [m.kind for m in bell.models.values()]
print(f"{kinds.count('parametric')} parametric / {kinds.count('nonparametric')} non-parametric component models")
S = np.arange(4, 37, 4)
for s, t in zip(S, bell.remaining(0, len(prof.components), S)):
    print(f"Bell total at s={s:2d}: {t:7.1f} s")
