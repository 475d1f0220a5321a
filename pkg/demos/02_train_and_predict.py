"""Train the graph model on profiling runs and predict the rest of an unseen run."""

# %%
import numpy as np

from enel.model import ModelConfig, forward, train
from enel.simulator import ClusterEnv, get_profile, simulate_run

prof = get_profile("kmeans-like")
env = ClusterEnv(noise_level=0.05)
history = [simulate_run(prof, env, int(s), seed=100 + i, run_id=f"prof-{i}")[1]
           for i, s in enumerate(np.rint(np.linspace(4, 36, 10)).astype(int))]

# %% training
model, curve = train(ModelConfig(), history, seed=0)
print(f"loss {curve.rows[0]['total']:.4f} -> {curve.rows[-1]['total']:.4f} after {len(curve.rows) - 1} epochs")

# %% remaining runtime after each component of a fresh run at s=12
trace, job = simulate_run(prof, env, 12, seed=999, run_id="fresh")
elapsed = 0.0
for k in range(1, job.n_components, 3):
    elapsed = sum(c.wall_time for c in job.components[:k])
    pred = forward(model, job, k, 12, history=history).remaining
    actual = trace.total_time - elapsed
    print(f"after component {k:2d}: predicted {float(pred):7.1f} s, actual {actual:7.1f} s")

# %% what-if: the remaining runtime for every candidate scale-out
k = job.n_components // 2
res = forward(model, job, k, np.arange(4, 37), history=history)
for s, t in zip(range(4, 37, 8), res.remaining[::8]):
    print(f"finish from component {k} at s={s:2d}: {t:7.1f} s")
