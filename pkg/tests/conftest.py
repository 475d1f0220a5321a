import numpy as np
import pytest

from enel.bell import ernest_features
from enel.graph import ComponentGraph, JobExecution, TaskNode
from enel.harness import profiling_scaleouts
from enel.model import ModelConfig, train
from enel.simulator import ClusterEnv, get_profile, simulate_run


def observed_node(nid, s=8, runtime=10.0, metrics=None, props=("stage",), a=None, r=1.0):
    m = np.full(5, 0.5) if metrics is None else np.asarray(metrics, dtype=float)
    return TaskNode(nid, props, a=s if a is None else a, z=s, r=r, metrics=m, runtime=runtime)


def toy_job(run_id="toy", scaleouts=(4, 8), runtimes=((3.0, 5.0, 2.0), (4.0, 1.0, 2.5)), metric_scale=1.0):
    """Two components, each a 3-node graph n1 -> {n2, n3}."""
    comps = []
    for k, (s, rts) in enumerate(zip(scaleouts, runtimes)):
        nodes = [observed_node(f"n{i + 1}", s, rt, metric_scale * np.linspace(0.2, 1.0, 5) * (i + 1),
                               props=(f"stage {k}.{i}", 16 * (i + 1)))
                 for i, rt in enumerate(rts)]
        g = ComponentGraph(k, nodes, [("n1", "n2"), ("n1", "n3")], start_scaleout=s, end_scaleout=s,
                           wall_time=rts[0] + max(rts[1:]), name=f"comp{k}")
        comps.append(g)
    return JobExecution(run_id, comps, ("toy job", 3), ("v1.0",))


def ernest_trial(seed):
    """20 Ernest-form samples with 0.1% relative noise."""
    rng = np.random.default_rng(seed)
    theta = np.array([rng.uniform(20, 200), rng.uniform(200, 2000), rng.uniform(0, 20), rng.uniform(0, 5)])
    s = rng.integers(4, 37, size=20)
    t = (ernest_features(s) @ theta) * (1 + 0.001 * rng.standard_normal(len(s)))
    return list(zip(s.tolist(), t.tolist()))


def step_trial(seed):
    """20 samples of a three-level step function of the scale-out."""
    rng = np.random.default_rng(seed)
    edges = np.sort(rng.choice(np.arange(8, 33), size=2, replace=False))
    levels = np.sort(rng.uniform(50, 400, size=3))[::-1]
    s = rng.integers(4, 37, size=20)
    t = levels[np.searchsorted(edges, s, side="right")]
    return list(zip(s.tolist(), t.tolist()))


@pytest.fixture(scope="session")
def kmeans_env():
    return ClusterEnv(noise_level=0.05)


@pytest.fixture(scope="session")
def kmeans_history(kmeans_env):
    prof = get_profile("kmeans-like")
    runs = []
    for i, s in enumerate(profiling_scaleouts(kmeans_env, 10)):
        _, job = simulate_run(prof, kmeans_env, s, seed=1000 + i, run_id=f"prof-{i}")
        runs.append(job)
    return runs


@pytest.fixture(scope="session")
def kmeans_model(kmeans_history):
    model, curve = train(ModelConfig(), kmeans_history, seed=0)
    return model


def finite_difference_errors(loss, params, grads, step=1e-5):
    """Relative error between analytic ``grads`` and central differences of ``loss()``, per group.

    ``loss`` is re-evaluated after perturbing each entry of ``params`` in place.
    """
    out = {}
    for name, arr in params.items():
        fd = np.zeros_like(arr)
        flat, fd_flat = arr.reshape(-1), fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss()
            flat[i] = orig - step
            down = loss()
            flat[i] = orig
            fd_flat[i] = (up - down) / (2 * step)
        g = grads[name]
        denom = np.linalg.norm(fd) + np.linalg.norm(g)
        out[name] = 0.0 if denom < 1e-12 else float(np.linalg.norm(fd - g) / denom)
    return out


def toy_model_and_batch(seed=0):
    """Untrained model with fitted encoder/scaler plus a teacher-forced batch on 3-node graphs.

    The second component's roots see distinct P and H summaries so that the
    attention weights carry gradient.
    """
    from enel.encoding import ContextEncoder
    from enel.model import EnelModel, ModelConfig, Scaler, _properties, build_batch

    earlier = toy_job("earlier", scaleouts=(16, 12), runtimes=((2.0, 2.5, 1.0), (1.5, 0.5, 1.0)), metric_scale=2.0)
    job = toy_job("current")
    model = EnelModel.init(ModelConfig(), seed=seed)
    model.encoder = ContextEncoder.fit(_properties([earlier, job]), epochs=50, seed=seed)
    model.scaler = Scaler.fit([earlier, job], model.config.metric_dim)
    return model, build_batch(model, [job], history=[earlier])
