import math

import numpy as np
import pytest

from enel.simulator import (
    PROFILES,
    ClusterEnv,
    ComponentTemplate,
    FailureInjector,
    FailurePlan,
    FixedScaleout,
    JobProfile,
    NodeTemplate,
    critical_path,
    env_from_dict,
    ernest_time,
    generate_metrics,
    get_profile,
    ground_truth_runtime,
    inject_failures,
    noise_free_runtime,
    optimal_runtime,
    profile_from_dict,
    simulate_run,
)


def _single(theta=(10.0, 80.0, 0.0, 0.0)):
    return JobProfile("single", [ComponentTemplate("c", (NodeTemplate("n", theta),))])


def _longest_path(comp, s):
    """Brute force: enumerate every root-to-sink path."""
    succ = {i: [] for i in range(len(comp.nodes))}
    has_pred = set()
    for u, v in comp.edges:
        succ[u].append(v)
        has_pred.add(v)
    w = [ernest_time(n.theta, s) for n in comp.nodes]

    def paths(i):
        if not succ[i]:
            return [w[i]]
        return [w[i] + p for j in succ[i] for p in paths(j)]

    return max(p for i in range(len(comp.nodes)) if i not in has_pred for p in paths(i))


def test_ground_truth_examples():
    node = NodeTemplate("n", (10.0, 80.0, 0.0, 0.0))
    rng = np.random.default_rng(0)
    assert ground_truth_runtime(node, 4, rng) == 30.0
    assert ground_truth_runtime(node, 8, rng) == 20.0
    a = ground_truth_runtime(node, 8, np.random.default_rng(5), 0.1)
    b = ground_truth_runtime(node, 8, np.random.default_rng(5), 0.1)
    assert a == b and a != 20.0
    with pytest.raises(ValueError):
        ground_truth_runtime(node, 0, rng)


def test_noise_is_mean_one():
    node = NodeTemplate("n", (10.0, 0.0, 0.0, 0.0))
    rng = np.random.default_rng(1)
    vals = [ground_truth_runtime(node, 4, rng, 0.2) for _ in range(20000)]
    assert np.mean(vals) == pytest.approx(10.0, rel=0.01)


def test_generate_metrics_formulas_and_ranges():
    node = NodeTemplate("n", (1, 1, 0, 0), cpu=0.9, shuffle=0.4, io=2.0, gc=0.1, spill=0.2)
    m = generate_metrics(node, 16, np.random.default_rng(0))
    assert np.allclose(m, [0.9 / 1.4, 0.4 * 1.8, 2.0, 0.1 * 1.5, 0.2])
    rng = np.random.default_rng(3)
    for s in (1, 2, 4, 36):
        for _ in range(50):
            m = generate_metrics(NodeTemplate("x", (1, 1, 0, 0), cpu=1.0, gc=0.9, spill=0.9), s, rng, 0.5, degradation=2.0)
            assert np.all(m[[0, 3, 4]] <= 1.0) and np.all(m >= 0)
    assert np.array_equal(generate_metrics(node, 8, np.random.default_rng(9), 0.1),
                          generate_metrics(node, 8, np.random.default_rng(9), 0.1))
    degraded = generate_metrics(node, 16, np.random.default_rng(0), degradation=0.5, failures=1)
    assert degraded[2] > 2.0 and degraded[0] < 0.9 / 1.4


def test_inject_failures_examples():
    plan = FailurePlan(enabled=True)
    assert inject_failures([(0.0, 4)], 80.0, plan, np.random.default_rng(0)) == []
    for seed in range(20):
        events = inject_failures([(0.0, 10)], 300.0, plan, np.random.default_rng(seed))
        assert len(events) <= math.ceil(300 / 90)
        windows = [int(e.time // 90) for e in events]
        assert len(set(windows)) == len(windows)
    a = inject_failures([(0.0, 10)], 300.0, plan, np.random.default_rng(7))
    b = inject_failures([(0.0, 10)], 300.0, plan, np.random.default_rng(7))
    assert a == b
    assert inject_failures([(0.0, 10)], 300.0, FailurePlan(enabled=False), np.random.default_rng(7)) == []


def test_failure_injector_windows():
    inj = FailureInjector(FailurePlan(enabled=True, interval=10.0), np.random.default_rng(0))
    times = [inj.pop() for _ in range(5)]
    assert all(10 * i <= t < 10 * (i + 1) for i, t in enumerate(times))


@pytest.mark.parametrize("name", sorted(PROFILES))
@pytest.mark.parametrize("s", [4, 13, 36])
def test_simulation_matches_critical_paths(name, s):
    prof = get_profile(name)
    trace, job = simulate_run(prof, ClusterEnv(), s, seed=1)
    expected = sum(_longest_path(c, s) for c in prof.components)
    assert trace.total_time == pytest.approx(expected, rel=1e-12)
    assert noise_free_runtime(prof, s) == pytest.approx(expected, rel=1e-12)
    assert job.observed_prefix() == job.n_components == len(prof.components)
    for comp in job.components:
        assert comp.start_scaleout == comp.end_scaleout == s
        assert all(n.a == n.z == s and n.r == 1.0 for n in comp.nodes)


def test_same_seed_identical_trace():
    prof, env = get_profile("mpc-like"), ClusterEnv(noise_level=0.1)
    plan = FailurePlan(enabled=True)
    a, _ = simulate_run(prof, env, 12, plan=plan, seed=42)
    b, _ = simulate_run(prof, env, 12, plan=plan, seed=42)
    c, _ = simulate_run(prof, env, 12, plan=plan, seed=43)
    assert a.to_json() == b.to_json()
    assert a.to_json() != c.to_json()


def test_rescale_latency_adds_exact_overhead():
    prof = get_profile("lr-like")
    policy = FixedScaleout(8, schedule={5: 12})
    base, _ = simulate_run(prof, ClusterEnv(rescale_latency=0.5), policy)
    double, _ = simulate_run(prof, ClusterEnv(rescale_latency=1.0), policy)
    assert len(base.rescales) == 1
    assert double.total_time - base.total_time == pytest.approx(4 * 0.5, abs=1e-9)


def test_work_conservation_mid_node_change():
    theta = (5.0, 400.0, 0.0, 0.1)
    prof = _single(theta)
    env = ClusterEnv(failure_work_loss=0.0, failure_slowdown=0.0, executor_recovery_delay=1e9)
    checked = 0
    for seed in range(10):
        trace, _ = simulate_run(prof, env, 10, plan=FailurePlan(enabled=True, interval=200.0), seed=seed)
        t1, t2 = ernest_time(theta, 10), ernest_time(theta, 9)
        if trace.failures:
            r = trace.failures[0].time / t1
            assert trace.total_time == pytest.approx(r * t1 + (1 - r) * t2, rel=1e-12)
            checked += 1
        else:
            assert trace.total_time == pytest.approx(t1)
    assert checked > 0


def test_long_node_finishes_under_frequent_failures():
    # a node far longer than interval * s must still complete
    prof = _single((0.0, 40000.0, 0.0, 0.0))
    env = ClusterEnv(failure_slowdown=0.0, executor_recovery_delay=5.0)
    trace, _ = simulate_run(prof, env, 8, plan=FailurePlan(enabled=True, interval=10.0), seed=1)
    assert len(trace.failures) > 100
    assert ernest_time((0.0, 40000.0, 0.0, 0.0), 8) < trace.total_time < math.inf


def test_failure_guard_and_recovery():
    prof = get_profile("kmeans-like")
    plan = FailurePlan(enabled=True, interval=20.0)
    for s in (4, 6, 12):
        trace, _ = simulate_run(prof, ClusterEnv(), s, plan=plan, seed=s)
        assert min(live for _, live in trace.timeline) >= min(s, plan.min_executors)
        assert all(e.executors_before > plan.min_executors for e in trace.failures)
    trace, _ = simulate_run(prof, ClusterEnv(), 4, plan=plan, seed=0)
    assert trace.failures == []


def test_failures_slow_runs_and_show_in_metrics():
    prof = get_profile("kmeans-like")
    clean, job_clean = simulate_run(prof, ClusterEnv(), 16, seed=3)
    failed, job_failed = simulate_run(prof, ClusterEnv(), 16, plan=FailurePlan(enabled=True), seed=3)
    assert failed.failures and failed.total_time > clean.total_time
    io = lambda job: np.mean([n.metrics[2] for c in job.components for n in c.nodes])  # noqa: E731
    assert io(job_failed) > io(job_clean)


def test_optimal_runtime_scans_range():
    prof = get_profile("kmeans-like")
    env = ClusterEnv()
    s_opt, t_opt = optimal_runtime(prof, env)
    assert t_opt == min(noise_free_runtime(prof, s) for s in range(4, 37))
    assert critical_path(prof.components[0], s_opt) > 0


def test_profile_and_env_config():
    d = {"name": "tiny", "iterations": 3,
         "prepare": [{"name": "load", "nodes": [{"name": "read", "theta": [1, 50, 0, 0]}]}],
         "iteration": [{"name": "step", "nodes": [{"name": "a", "theta": [1, 10, 0, 0]},
                                                  {"name": "b", "theta": [1, 5, 0, 0], "metrics": {"io": 2}}],
                        "edges": [[0, 1]]}]}
    prof = profile_from_dict(d)
    assert len(prof.components) == 4 and prof.components[1].nodes[1].io == 2.0
    assert profile_from_dict({"builtin": "gbt-like"}).name == get_profile("gbt-like").name
    assert env_from_dict({"noise_level": 0.1}).noise_level == 0.1
    with pytest.raises(ValueError):
        get_profile("nope")
    with pytest.raises(ValueError):
        NodeTemplate("bad", (1, -1, 0, 0))
    with pytest.raises(ValueError):
        ClusterEnv(min_scaleout=10, max_scaleout=4)
    with pytest.raises(ValueError):
        FailurePlan(interval=0)


def test_on_component_callback_sees_prefix():
    seen = []
    simulate_run(get_profile("kmeans-like"), ClusterEnv(), 8,
                 on_component=lambda job, k: seen.append(job.observed_prefix() == k + 1))
    assert seen and all(seen)
