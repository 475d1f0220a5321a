import numpy as np
import pytest

from enel.nn import MLP, SGD, Adam, clip_by_global_norm, make_optimizer, softplus

from conftest import finite_difference_errors


def test_softplus_stable():
    x = np.array([-1000.0, 0.0, 1000.0])
    assert np.allclose(softplus(x), [0.0, np.log(2), 1000.0])


@pytest.mark.parametrize("output", ["softplus", "linear"])
def test_mlp_gradients(output):
    rng = np.random.default_rng(0)
    net = MLP.init(6, 5, 3, rng, output=output)
    x = rng.normal(size=(4, 2, 6))
    target = rng.normal(size=(4, 2, 3))

    def loss():
        return float(np.sum((net(x) - target) ** 2))

    y, cache = net.forward(x)
    dx, grads = net.backward(cache, 2 * (y - target))
    errs = finite_difference_errors(loss, net.params(), grads)
    assert max(errs.values()) < 1e-6
    errs = finite_difference_errors(loss, {"x": x}, {"x": dx})
    assert errs["x"] < 1e-6


def test_mlp_shape_checks_and_serialisation():
    net = MLP.init(3, 4, 2, np.random.default_rng(1))
    assert net.n_params() == 3 * 4 + 4 + 4 * 2 + 2
    with pytest.raises(ValueError):
        net(np.zeros(4))
    back = MLP.from_dict(net.to_dict())
    x = np.ones(3)
    assert np.array_equal(back(x), net(x))
    assert np.all(net(np.random.default_rng(2).normal(size=(10, 3))) >= 0)


def test_clip_by_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_by_global_norm(g, 1.0) == pytest.approx(5.0)
    assert np.allclose([g["a"][0], g["b"][0]], [0.6, 0.8])
    g = {"a": np.array([0.1])}
    clip_by_global_norm(g, 1.0)
    assert g["a"][0] == 0.1


def test_optimizers_descend_quadratic():
    for opt in (Adam(0.1), SGD(0.1)):
        p = {"x": np.array([5.0, -3.0])}
        for _ in range(300):
            opt.step(p, {"x": 2 * p["x"]})
        assert np.linalg.norm(p["x"]) < 1e-2
    assert isinstance(make_optimizer("gd", 0.1), SGD)
    with pytest.raises(ValueError):
        make_optimizer("rmsprop", 0.1)
