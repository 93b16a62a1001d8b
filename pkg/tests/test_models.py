import math

import numpy as np
import pytest

from adago import models
from adago.errors import InvalidInputError, StaleCacheError
from adago.models import MLP, Batch, LinearNet, ModelSpec, ParamSet


def _linear_problem(rng, m=3, d=4, J=12):
    w_star = rng.standard_normal((m, d))
    x = rng.standard_normal((J, d))
    return w_star, Batch(x, x @ w_star.T)


def test_linear_loss_zero_at_w_star(rng):
    w_star, batch = _linear_problem(rng)
    net = LinearNet(4, 3)
    ps = net.init_params()
    ps.set_value("W", w_star)
    loss, _ = models.forward(net, ps, batch)
    assert loss == pytest.approx(0.0, abs=1e-24)


def test_linear_single_sample_hand_value():
    net = LinearNet(2, 2)
    ps = net.init_params()
    loss, _ = models.forward(net, ps, Batch([[1.0, 0.0]], [[1.0, 0.0]]))
    assert loss == 0.5


def test_zero_mlp_zero_targets():
    net = MLP(3, 5, 2)
    ps = ParamSet()
    for name, shape in (("W1", (5, 3)), ("W2", (2, 5))):
        ps.add(name, "matrix", np.zeros(shape))
    ps.add("b1", "vector", np.zeros(5))
    ps.add("b2", "vector", np.zeros(2))
    loss, _ = models.forward(net, ps, Batch(np.ones((4, 3)), np.zeros((4, 2))))
    assert loss == 0.0


def test_linear_gradient_closed_form(rng):
    w_star, batch = _linear_problem(rng, 5, 6, 30)
    net = LinearNet(6, 5)
    ps = net.init_params(rng, scale=1.0)
    models.loss_and_grad(net, ps, batch)
    xxt = batch.inputs.T @ batch.inputs
    closed = (ps.value("W") - w_star) @ xxt
    assert np.linalg.norm(ps.grad("W") - closed) <= 1e-12 * np.linalg.norm(xxt)


def test_zero_residual_zero_gradient(rng):
    w_star, batch = _linear_problem(rng)
    net = LinearNet(4, 3)
    ps = net.init_params()
    ps.set_value("W", w_star)
    models.loss_and_grad(net, ps, batch)
    assert np.max(np.abs(ps.grad("W"))) < 1e-12


def test_gelu_values():
    assert models.gelu(0.0) == 0.0
    assert abs(models.gelu(10.0) - 10.0) < 1e-6
    h = 1e-5
    fd = (models.gelu(0.5 + h) - models.gelu(0.5 - h)) / (2 * h)
    assert abs(models.gelu_prime(0.5) - fd) < 1e-8


def test_gelu_prime_grid():
    xs = np.linspace(-6, 6, 121)
    h = 1e-5
    fd = (models.gelu(xs + h) - models.gelu(xs - h)) / (2 * h)
    np.testing.assert_allclose(models.gelu_prime(xs), fd, atol=1e-8)


def test_fd_quadratic_exactness():
    class Square:
        def forward(self, params, batch):
            return float(params.value("t") ** 2), None

    ps = ParamSet()
    ps.add("t", "scalar", 3.0)
    g = models.finite_difference_gradient(Square(), ps, None, h=1e-4)
    assert g["t"] == pytest.approx(6.0, abs=1e-9)


def test_fd_taylor_order_on_linear(rng):
    # sum-reduced quadratic loss: central differences are exact up to rounding,
    # so halving h must not increase the error beyond roundoff
    w_star, batch = _linear_problem(rng)
    net = LinearNet(4, 3)
    ps = net.init_params(rng, scale=1.0)
    models.loss_and_grad(net, ps, batch)
    closed = ps.grad("W")
    e1 = np.max(np.abs(models.finite_difference_gradient(net, ps, batch, 1e-3)["W"] - closed))
    e2 = np.max(np.abs(models.finite_difference_gradient(net, ps, batch, 5e-4)["W"] - closed))
    scale = np.max(np.abs(closed))
    assert e1 < 1e-8 * scale and e2 < 1e-8 * scale


def _rel_err(a, b, floor=1e-7):
    return abs(a - b) / max(abs(a), abs(b), floor)


@pytest.mark.parametrize("loss", ["mse", "cross_entropy"])
def test_mlp_gradient_matches_fd(rng, loss):
    d_out = 3
    net = MLP(4, 7, d_out, "gelu", loss)
    ps = net.init_params(rng)
    x = rng.standard_normal((9, 4))
    y = rng.integers(0, d_out, 9) if loss == "cross_entropy" else rng.standard_normal((9, d_out))
    batch = Batch(x, y)
    models.loss_and_grad(net, ps, batch)
    names = list(ps)
    for _ in range(5):
        name = names[rng.integers(len(names))]
        idx = tuple(int(rng.integers(s)) for s in ps.value(name).shape)
        fd = models.finite_difference_entry(net, ps, batch, name, idx)
        assert _rel_err(ps.grad(name)[idx], fd) <= 1e-5


def test_cross_entropy_values(rng):
    loss, _ = models.cross_entropy(np.zeros((3, 5)), np.array([0, 1, 4]))
    assert loss == pytest.approx(math.log(5), rel=1e-14)
    z = np.array([[1e3, 0.0, 0.0]])
    loss, grad = models.cross_entropy(z, np.array([0]))
    assert loss < 1e-300 + 1e-12 and np.all(np.isfinite(grad))
    logits = rng.standard_normal((4, 3))
    labels = np.array([2, 0, 1, 1])
    _, grad = models.cross_entropy(logits, labels)
    h = 1e-6
    for i in range(4):
        for j in range(3):
            zp, zm = logits.copy(), logits.copy()
            zp[i, j] += h
            zm[i, j] -= h
            fd = (models.cross_entropy(zp, labels)[0] - models.cross_entropy(zm, labels)[0]) / (2 * h)
            assert abs(fd - grad[i, j]) < 1e-9


def test_losses_nonnegative(rng):
    net = MLP(3, 4, 2)
    ps = net.init_params(rng)
    assert models.forward(net, ps, Batch(rng.standard_normal((5, 3)), rng.standard_normal((5, 2))))[0] >= 0
    net = MLP(3, 4, 2, loss="cross_entropy")
    assert models.forward(net, ps, Batch(rng.standard_normal((5, 3)), rng.integers(0, 2, 5)))[0] >= 0


def test_stale_cache_detected(rng):
    net = MLP(3, 4, 2)
    ps = net.init_params(rng)
    _, cache = net.forward(ps, Batch(rng.standard_normal((5, 3)), rng.standard_normal((5, 2))))
    ps.set_value("b1", np.zeros(4))
    with pytest.raises(StaleCacheError):
        net.backward(ps, cache)


def test_shape_mismatch(rng):
    net = LinearNet(3, 2)
    with pytest.raises(InvalidInputError):
        net.forward(net.init_params(), Batch(np.ones((4, 5)), np.ones((4, 2))))


def test_batch_scale_unbiased(rng):
    w_star, full = _linear_problem(rng, 2, 3, 20)
    net = LinearNet(3, 2)
    ps = net.init_params(rng, scale=1.0)
    models.loss_and_grad(net, ps, full)
    g_full = ps.grad("W").copy()
    total = np.zeros_like(g_full)
    for j in range(20):
        sub = Batch(full.inputs[j : j + 1], full.targets[j : j + 1], scale=20.0)
        models.loss_and_grad(net, ps, sub)
        total += ps.grad("W")
    np.testing.assert_allclose(total / 20, g_full, atol=1e-12)


def test_model_spec_builds():
    assert isinstance(ModelSpec("linear", 3, 2, loss="mse").build(), LinearNet)
    mlp = ModelSpec("mlp", 50, 50, 100).build()
    assert (mlp.d_in, mlp.hidden, mlp.d_out) == (50, 100, 50)
