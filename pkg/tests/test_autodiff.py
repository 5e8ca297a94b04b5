import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from constrained_ddm.autodiff import evaluate, parameter_gradient, tape
from constrained_ddm.autodiff.jets import DerivativeBundle
from constrained_ddm.autodiff.tape import Node, NonFiniteError
from constrained_ddm.network import MLP, MLPConfig, xavier_init
from constrained_ddm import operators

from oracles import mlp_forward, param_fd, rel_err, spatial_fd


def _neuron(w, b):
    """u = tanh(w x + b): one hidden unit feeding an identity output."""
    net = MLP(MLPConfig(input_dim=1, hidden_layers=1, units_per_layer=1))
    theta = np.array([w, b, 1.0, 0.0])
    return net, theta


def test_single_neuron_jet():
    net, theta = _neuron(2.0, 0.0)
    bundle = evaluate(net, theta, np.array([[0.0]]))
    assert bundle.value.value[0, 0] == pytest.approx(0.0, abs=1e-15)
    assert bundle.partial(0).value[0, 0] == pytest.approx(2.0)
    assert bundle.laplacian().value[0, 0] == pytest.approx(0.0, abs=1e-15)


class _SquaredNorm:
    """Fixture model u = x^2 + y^2 expressed with graph operations."""

    def jet(self, leaves, x, order=2):
        xn = tape.constant(x)
        u = tape.sum(xn * xn, axis=1)
        rows = [tape.reshape(u, (1, -1, 1))]
        for i in range(2):
            rows.append(tape.reshape(xn[:, i] * 2.0, (1, -1, 1)))
        for _ in range(2):
            rows.append(tape.constant(np.full((1, len(x), 1), 2.0)))
        return tape.concatenate(rows, axis=0)


def test_quadratic_fixture_laplacian_is_four():
    x = np.random.default_rng(0).uniform(-2, 2, (7, 2))
    bundle = evaluate(_SquaredNorm(), [], x)
    np.testing.assert_allclose(bundle.laplacian().value[:, 0], 4.0)
    np.testing.assert_allclose(bundle.value.value[:, 0], np.sum(x**2, axis=1))


def test_random_network_matches_finite_differences():
    cfg = MLPConfig(hidden_layers=3, units_per_layer=20)
    net = MLP(cfg)
    theta = xavier_init(cfg, 3)
    x = np.random.default_rng(1).uniform(-1, 1, (10, 2))
    bundle = evaluate(net, theta.values, x)
    arrays = theta.unflatten()
    grad_fd, hess_fd = spatial_fd(lambda z: mlp_forward(arrays, 4, z), x, h=1e-4)
    assert rel_err(bundle.gradient.value, grad_fd) < 1e-5
    assert rel_err(bundle.laplacian().value, hess_fd.sum(axis=0)) < 1e-5
    # order-1 jets carry identical values and gradients
    b1 = evaluate(net, theta.values, x, order=1)
    np.testing.assert_allclose(b1.gradient.value, bundle.gradient.value, rtol=0, atol=1e-14)
    assert b1.hessian_diag is None


def test_two_output_jet_components():
    cfg = MLPConfig(hidden_layers=2, units_per_layer=8, output_dim=2)
    net = MLP(cfg)
    theta = xavier_init(cfg, 5)
    x = np.random.default_rng(2).uniform(0, 1, (6, 2))
    b = evaluate(net, theta.values, x)
    arrays = theta.unflatten()
    grad_fd, hess_fd = spatial_fd(lambda z: mlp_forward(arrays, 3, z), x)
    for j in range(2):
        bj = b.output(j)
        assert rel_err(bj.laplacian().value[:, 0], hess_fd.sum(axis=0)[:, j]) < 1e-5
        assert rel_err(bj.gradient.value[:, :, 0], grad_fd[:, :, j]) < 1e-5


def test_single_point_batch():
    net, theta = _neuron(0.7, 0.1)
    b = evaluate(net, theta, np.array([0.3]))
    assert b.value.shape == (1, 1)


def test_hand_derived_parameter_gradient():
    # loss = u(x0)^2 with u = tanh(w x0), w = 0.5, x0 = 1
    w = Node(np.array(0.5))
    u = tape.tanh(w * 1.0)
    loss = u * u
    (gw,) = tape.grad(loss, [w])
    t = math.tanh(0.5)
    assert t == pytest.approx(0.462117, abs=1e-6)
    assert float(gw) == pytest.approx(2 * t * (1 - t * t), rel=1e-12)
    assert float(gw) == pytest.approx(0.726862, abs=1e-6)


def test_unused_parameter_has_zero_gradient():
    a, b = Node(np.array(1.5)), Node(np.array(-2.0))
    ga, gb = tape.grad(tape.square(a) * 3.0, [a, b])
    assert float(ga) == pytest.approx(9.0)
    assert float(gb) == 0.0


def _laplacian_mse(net, theta, x):
    leaves = net.leaves(theta)
    b = evaluate(net, leaves, x)
    return operators.mse(b.laplacian() - 1.0), leaves


def test_laplacian_residual_parameter_gradient():
    cfg = MLPConfig(hidden_layers=2, units_per_layer=10)
    net = MLP(cfg)
    theta = xavier_init(cfg, 11).values
    x = np.random.default_rng(4).uniform(-1, 1, (5, 2))
    loss, leaves = _laplacian_mse(net, theta, x)
    g = parameter_gradient(loss, leaves)
    g_fd = param_fd(lambda t: float(_laplacian_mse(net, t, x)[0].value), theta, h=1e-6)
    assert rel_err(g, g_fd) < 1e-4


def test_leaf_gradients_do_not_accumulate_between_calls():
    a = Node(np.array([1.0, 2.0]))
    first = tape.grad(tape.sum(a * a), [a])[0].copy()
    second = tape.grad(tape.sum(a * a), [a])[0]
    np.testing.assert_allclose(first, second)


def test_non_finite_values_are_reported():
    with pytest.raises(NonFiniteError):
        tape.check_finite(Node(np.array([1.0, np.inf])), "probe")


# elementwise and structural operations against finite differences
_UNARY = {
    "tanh": (tape.tanh, np.tanh),
    "exp": (tape.exp, np.exp),
    "sin": (tape.sin, np.sin),
    "cos": (tape.cos, np.cos),
    "square": (tape.square, np.square),
    "neg": (tape.neg, np.negative),
}


@pytest.mark.parametrize("name", sorted(_UNARY))
def test_unary_ops_gradcheck(name):
    op, ref = _UNARY[name]
    x0 = np.random.default_rng(7).uniform(-1, 1, (3, 4))
    w = np.random.default_rng(8).normal(size=(3, 4))
    a = Node(x0)
    (g,) = tape.grad(tape.sum(op(a) * w), [a])
    g_fd = param_fd(lambda v: float(np.sum(ref(v.reshape(3, 4)) * w)), x0.ravel()).reshape(3, 4)
    assert rel_err(g, g_fd) < 1e-7
    np.testing.assert_allclose(op(a).value, ref(x0))


def test_binary_ops_broadcast_gradients():
    rng = np.random.default_rng(9)
    x = rng.uniform(0.5, 1.5, (4, 3))
    y = rng.uniform(0.5, 1.5, (3,))

    def f(xv, yv):
        return (xv * yv + xv / yv - yv) ** 2

    a, b = Node(x), Node(y)
    out = tape.sum(tape.power(a * b + a / b - b, 2.0))
    ga, gb = tape.grad(out, [a, b])
    fa = param_fd(lambda v: float(np.sum(f(v.reshape(4, 3), y))), x.ravel()).reshape(4, 3)
    fb = param_fd(lambda v: float(np.sum(f(x, v))), y)
    assert rel_err(ga, fa) < 1e-7
    assert rel_err(gb, fb) < 1e-7


def test_structural_ops_gradients():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(5, 2))
    m = rng.normal(size=(2, 3))
    a, w = Node(x), Node(m)
    parts = [a[:, 0:1], a[1:3], tape.reshape(a, (2, 5))]
    out = tape.sum(tape.matmul(a, w) ** 2) + tape.sum(parts[0]) * 2.0 + tape.mean(parts[1]) + tape.sum(parts[2][1])
    out = out + tape.sum(tape.concatenate([a[:, 1], a[:, 0]], axis=0) * np.arange(10.0))
    out = out + tape.sum(tape.stack([a[0], a[4]], axis=0) ** 3)
    ga, gw = tape.grad(out, [a, w])

    def f(xv, mv):
        v = np.sum((xv @ mv) ** 2) + 2 * np.sum(xv[:, 0]) + np.mean(xv[1:3]) + np.sum(xv.reshape(2, 5)[1])
        v += np.sum(np.concatenate([xv[:, 1], xv[:, 0]]) * np.arange(10.0))
        return v + np.sum(np.stack([xv[0], xv[4]]) ** 3)

    fa = param_fd(lambda v: f(v.reshape(5, 2), m), x.ravel()).reshape(5, 2)
    fw = param_fd(lambda v: f(x, v.reshape(2, 3)), m.ravel()).reshape(2, 3)
    assert rel_err(ga, fa) < 1e-7
    assert rel_err(gw, fw) < 1e-7


def test_fancy_index_accumulates_repeats():
    a = Node(np.array([1.0, 2.0, 3.0]))
    idx = np.array([0, 0, 2])
    (g,) = tape.grad(tape.sum(a[idx]), [a])
    np.testing.assert_allclose(g, [2.0, 0.0, 1.0])


def test_abs_and_sqrt_gradients():
    a = Node(np.array([-2.0, 0.5, 4.0]))
    ga = tape.grad(tape.sum(tape.absolute(a)), [a])[0]
    np.testing.assert_allclose(ga, [-1.0, 1.0, 1.0])
    b = Node(np.array([4.0, 9.0]))
    gb = tape.grad(tape.sum(tape.sqrt(b)), [b])[0]
    np.testing.assert_allclose(gb, [0.25, 1.0 / 6.0])


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    depth=st.integers(1, 2),
    width=st.integers(1, 10),
)
def test_property_jets_vs_finite_differences(seed, depth, width):
    cfg = MLPConfig(hidden_layers=depth, units_per_layer=width)
    net = MLP(cfg)
    theta = xavier_init(cfg, seed)
    x = np.random.default_rng(seed).uniform(-1, 1, (1, 2))
    b = evaluate(net, theta.values, x)
    grad_fd, hess_fd = spatial_fd(lambda z: mlp_forward(theta.unflatten(), depth + 1, z), x, h=1e-4)
    scale = 1.0 + np.abs(grad_fd).max()
    assert np.abs(b.gradient.value - grad_fd).max() / scale < 1e-6
    lap = b.laplacian().value
    assert np.abs(lap - hess_fd.sum(axis=0)).max() / (1.0 + np.abs(lap).max()) < 1e-5


def test_bundle_directional_derivative():
    cfg = MLPConfig(hidden_layers=1, units_per_layer=3)
    net = MLP(cfg)
    theta = xavier_init(cfg, 0).values
    x = np.array([[0.2, -0.4], [0.1, 0.9]])
    b = evaluate(net, theta, x)
    n = np.array([[1.0, 0.0], [0.0, -1.0]])
    d = b.directional(n).value[:, 0]
    np.testing.assert_allclose(d, [b.gradient.value[0, 0, 0], -b.gradient.value[1, 1, 0]])
    assert isinstance(b, DerivativeBundle)
