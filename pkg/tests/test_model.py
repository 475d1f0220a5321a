import inspect
import json
import time

import numpy as np
import pytest

from enel.graph import ComponentGraph, JobExecution, TaskNode, enrich_scaleout
from enel.model import (
    EnelModel,
    ModelConfig,
    accumulate_runtimes,
    analytic_parameter_count,
    build_batch,
    count_parameters,
    edge_weights,
    fine_tune,
    forward,
    loss_and_grads,
    node_descriptor,
    normalize_x,
    predict_overhead,
    predict_runtime,
    propagate_metrics,
    train,
)
from enel.simulator import ClusterEnv, get_profile, profile_from_dict, simulate_run

from conftest import toy_job, toy_model_and_batch

CHAIN_PROFILE = {
    "name": "chain",
    "iterations": 4,
    "iteration": [{"name": "step", "nodes": [{"name": "work", "theta": [100, 600, 0, 0], "tasks": 64,
                                              "metrics": {"cpu": 0.8, "io": 1.0}}]}],
}


@pytest.fixture(scope="module")
def chain_runs():
    prof = profile_from_dict(CHAIN_PROFILE)
    env = ClusterEnv()
    return [simulate_run(prof, env, s, seed=i, run_id=f"chain-{s}")[1] for i, s in enumerate([4, 6, 8, 12, 16, 24, 36])]


@pytest.fixture(scope="module")
def chain_model(chain_runs):
    return train(ModelConfig(epochs=1500), chain_runs, seed=0)[0]


def _graph(edges, ids):
    return ComponentGraph(0, [TaskNode(i) for i in ids], edges)


def test_parameter_count_default():
    m = EnelModel.init()
    assert count_parameters(m) == 5703
    assert 4000 <= count_parameters(m) <= 7000
    assert analytic_parameter_count(m.config) == count_parameters(m)
    wide = ModelConfig(hidden=64)
    assert count_parameters(EnelModel.init(wide)) == analytic_parameter_count(wide) > 5703


def test_accumulate_runtimes_examples():
    chain = _graph([("n1", "n2"), ("n2", "n3")], ["n1", "n2", "n3"])
    assert accumulate_runtimes(chain, {"n1": 2.0, "n2": 3.0, "n3": 5.0}) == {"n1": 2.0, "n2": 5.0, "n3": 10.0}
    diamond = _graph([("n1", "n2"), ("n1", "n3"), ("n2", "n4"), ("n3", "n4")], ["n1", "n2", "n3", "n4"])
    tt = accumulate_runtimes(diamond, {"n1": 1.0, "n2": 2.0, "n3": 7.0, "n4": 1.0})
    assert tt["n4"] == 9.0
    assert accumulate_runtimes(_graph([], ["n1"]), {"n1": 4.0}) == {"n1": 4.0}
    arr = accumulate_runtimes(chain, {"n1": np.array([1.0, 2.0]), "n2": np.array([1.0, 1.0]), "n3": np.zeros(2)})
    assert np.array_equal(arr["n3"], [2.0, 3.0])


def test_predict_overhead_and_runtime_non_negative(kmeans_model):
    rng = np.random.default_rng(0)
    cfg = kmeans_model.config
    for _ in range(50):
        c = rng.normal(size=cfg.context_dim)
        m = rng.random(cfg.metric_dim) * 5
        a, z = enrich_scaleout(int(rng.integers(1, 40))), enrich_scaleout(int(rng.integers(1, 40)))
        o = predict_overhead(kmeans_model, c, m, a, z, rng.random())
        assert o >= 0
        assert predict_runtime(kmeans_model, c, m, z, o) >= 0
    with pytest.raises(ValueError):
        predict_runtime(kmeans_model, np.zeros(3), np.zeros(cfg.metric_dim), enrich_scaleout(4), 0.0)


def test_predict_is_pure(kmeans_model):
    cfg = kmeans_model.config
    c, m, a = np.ones(cfg.context_dim), np.ones(cfg.metric_dim), enrich_scaleout(8)
    assert predict_overhead(kmeans_model, c, m, a, a, 1.0) == predict_overhead(kmeans_model, c, m, a, a, 1.0)


def test_runtime_does_not_take_start_scaleout():
    params = inspect.signature(predict_runtime).parameters
    assert list(params) == ["model", "c", "m", "z_enriched", "o"]


def test_edge_weights_examples(kmeans_model):
    rng = np.random.default_rng(1)
    dx = kmeans_model.config.x_dim
    xi = node_descriptor(8, rng.normal(size=24), 8)
    xj = node_descriptor(4, rng.normal(size=24), 16)
    assert np.allclose(edge_weights(kmeans_model, xi, [xj]), [1.0])
    assert np.allclose(edge_weights(kmeans_model, xi, [xj, xj]), [0.5, 0.5])
    w = edge_weights(kmeans_model, xi, [node_descriptor(s, rng.normal(size=24), s) for s in (4, 8, 12, 30)])
    assert abs(w.sum() - 1.0) < 1e-12 and np.all(w >= 0)
    with pytest.raises(ValueError):
        edge_weights(kmeans_model, xi, np.zeros((0, dx)))


def test_propagate_metrics_examples(kmeans_model):
    model = kmeans_model
    rng = np.random.default_rng(2)
    xi = node_descriptor(8, rng.normal(size=24), 8)
    xj = node_descriptor(16, rng.normal(size=24), 16)
    mj = rng.random(5)
    out = propagate_metrics(model, xi, [(xj, mj)])
    # single predecessor: weight 1, so the message itself
    h3 = model.f3(np.concatenate([normalize_x(model, xi), normalize_x(model, xj)]))
    expected = model.f4(np.concatenate([h3, mj / model.scaler.metric_scale])) * model.scaler.metric_scale
    assert np.allclose(out, expected, rtol=1e-12)
    assert np.allclose(propagate_metrics(model, xi, [(xj, mj)] * 3), out, rtol=1e-12)
    for _ in range(20):
        preds = [(node_descriptor(int(s), rng.normal(size=24), int(s)), rng.random(5) * 3)
                 for s in rng.integers(1, 37, size=rng.integers(1, 5))]
        assert np.all(propagate_metrics(model, xi, preds) >= 0)
    with pytest.raises(ValueError):
        propagate_metrics(model, xi, [])


def _constant_model(c):
    """A model whose f1 outputs 0 and f2 outputs ``c`` seconds for every node."""
    model = EnelModel.init(ModelConfig())
    for net in (model.f1, model.f2):
        net.w2[:] = 0.0
    model.f1.b2[:] = -50.0
    model.f2.b2[:] = np.log(np.expm1(c))  # softplus inverse, runtime_scale = 1
    model.trained = True
    return model


def _chain_job(lengths):
    comps = []
    for k, n in enumerate(lengths):
        ids = [f"n{i + 1}" for i in range(n)]
        comps.append(ComponentGraph(k, [TaskNode(i, (f"c{k}",)) for i in ids],
                                    list(zip(ids, ids[1:]))))
    return JobExecution("templ", comps)


def test_forward_examples():
    model = _constant_model(3.0)
    job = _chain_job([2, 1, 4])
    assert forward(model, job, 3, 8).remaining == 0.0
    # one remaining single-node component
    assert forward(model, _chain_job([1]), 0, 8).remaining == pytest.approx(3.0)
    # chains of 2, 1 and 4 nodes: c * 7
    res = forward(model, job, 0, 8)
    assert res.remaining == pytest.approx(21.0)
    assert res.component_totals == pytest.approx({0: 6.0, 1: 3.0, 2: 12.0})
    batch = forward(model, job, 0, [4, 8, 16])
    assert np.allclose(batch.remaining, 21.0)
    with pytest.raises(ValueError):
        forward(model, job, 5, 8)


def test_forward_batched_matches_scalar(kmeans_model, kmeans_history):
    job = kmeans_history[3]
    S = [4, 9, 20, 36]
    batched = forward(kmeans_model, job, 4, S, history=kmeans_history[:3]).remaining
    single = [forward(kmeans_model, job, 4, s, history=kmeans_history[:3]).remaining for s in S]
    assert np.allclose(batched, single, rtol=1e-12)


def test_forward_initial_allocation_uses_history(kmeans_model, kmeans_history):
    template = get_profile("kmeans-like").job_template("new", 300.0)
    res = forward(kmeans_model, template, 1, [8, 16, 32], history=kmeans_history)
    assert np.all(np.isfinite(res.remaining)) and np.all(res.remaining > 0)
    with pytest.raises(ValueError):
        forward(kmeans_model, template, 1, 8)


def test_train_deterministic_and_improves(kmeans_history):
    data = kmeans_history[:3]
    a, curve_a = train(ModelConfig(epochs=30), data, seed=3)
    b, _ = train(ModelConfig(epochs=30), data, seed=3)
    for k, v in a.params().items():
        assert np.array_equal(v, b.params()[k])
    held_out = kmeans_history[5]
    untrained = EnelModel.init(a.config, seed=3)
    untrained.encoder, untrained.scaler = a.encoder, a.scaler
    before = loss_and_grads(untrained, build_batch(untrained, [held_out]), need_grads=False)[0]["total"]
    after = loss_and_grads(a, build_batch(a, [held_out]), need_grads=False)[0]["total"]
    assert after < before
    assert curve_a.rows[-1]["total"] < curve_a.rows[0]["total"]
    assert curve_a.to_csv().splitlines()[0] == "epoch,total,runtime_mse,metric_mse,overhead_reg"
    with pytest.raises(ValueError):
        train(ModelConfig(), [])


def test_loss_parts_consistent():
    model, batch = toy_model_and_batch()
    parts, grads = loss_and_grads(model, batch)
    parts2, none = loss_and_grads(model, batch, need_grads=False)
    assert parts == parts2 and none is None
    assert parts["total"] == pytest.approx(parts["runtime_mse"] + parts["metric_mse"]
                                           + model.config.overhead_weight * parts["overhead_reg"])
    assert set(grads) == set(model.params())


def test_fine_tune_contract(kmeans_model, kmeans_history):
    same = fine_tune(kmeans_model, kmeans_history, epochs=0)
    for k, v in kmeans_model.params().items():
        assert np.array_equal(v, same.params()[k])
    with pytest.raises(ValueError):
        fine_tune(EnelModel.init(), kmeans_history)


def test_fine_tune_on_training_data_does_not_increase_loss(chain_model, chain_runs):
    batch = build_batch(chain_model, chain_runs)
    before = loss_and_grads(chain_model, batch, need_grads=False)[0]["total"]
    tuned = fine_tune(chain_model, chain_runs, epochs=10, learning_rate=1e-5)
    after = loss_and_grads(tuned, build_batch(tuned, chain_runs), need_grads=False)[0]["total"]
    assert after <= before + 1e-6
    # the original is untouched
    assert loss_and_grads(chain_model, batch, need_grads=False)[0]["total"] == before


def test_fine_tune_respects_budget():
    prof = get_profile("lr-like")  # 22 components
    runs = [simulate_run(prof, ClusterEnv(), s, seed=s, run_id=f"lr-{s}")[1] for s in (8, 24)]
    model, _ = train(ModelConfig(epochs=5), runs)
    t0 = time.perf_counter()
    fine_tune(model, runs, epochs=10_000, budget_s=1.0)
    assert time.perf_counter() - t0 < 3.0


def test_chain_runtime_prediction_within_ten_percent(chain_model, chain_runs):
    for job in chain_runs:
        s = job.components[0].end_scaleout
        pred = forward(chain_model, job, 1, s).remaining
        truth = (job.n_components - 1) * (100 + 600 / s)
        assert abs(pred - truth) / truth < 0.10, (s, pred, truth)


def test_no_rescale_overhead_small(chain_model, chain_runs):
    for job in chain_runs:
        for comp in job.components:
            for n in comp.nodes:
                o = predict_overhead(chain_model, n.context, n.metrics, enrich_scaleout(n.a), enrich_scaleout(n.z), 1.0)
                t = predict_runtime(chain_model, n.context, n.metrics, enrich_scaleout(n.z), o)
                assert o < 0.05 * t


def test_checkpoint_roundtrip(tmp_path, kmeans_model, kmeans_history):
    path = kmeans_model.save(tmp_path / "ckpt" / "model.json")
    doc = json.loads(path.read_text())
    for key in ("config", "params_f1", "params_f2", "params_f3", "params_f4", "attention",
                "autoencoder_ref", "trained_on_runs"):
        assert key in doc
    assert (path.parent / doc["autoencoder_ref"]).exists()
    back = EnelModel.load(path)
    job = kmeans_history[2]
    a = forward(kmeans_model, job, 5, [4, 16, 36], history=kmeans_history[:2]).remaining
    b = forward(back, job.truncated(job.n_components), 5, [4, 16, 36], history=kmeans_history[:2]).remaining
    assert np.allclose(a, b, rtol=1e-12)
    assert back.trained and back.trained_on_runs == kmeans_model.trained_on_runs
