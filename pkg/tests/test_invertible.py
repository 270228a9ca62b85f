import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neural_group_actions.errors import DimensionMismatch
from neural_group_actions.invertible import (AdditiveCouplingLayer, InvertibleNet, LinearLayer, Mlp,
                                             PermutationLayer, build_net, forward, grad, inverse,
                                             numeric_jacobian)


def linear_coupling(w, b=0.0):
    """d=2 coupling with conditioner m(x1) = w*x1 + b."""
    return AdditiveCouplingLayer(2, Mlp([1, 1], [[[w]]], [[b]]))


def random_net(dim, seed, num_coupling=3, hidden=(8, 8)):
    return build_net(dim, num_coupling, np.random.default_rng(seed), hidden, zero_last=False)


def fd_param_grads(net, x, cot, step=1e-6):
    out = []
    for p in net.params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + step
            up = np.sum(cot * net.forward(x))
            p[idx] = old - step
            down = np.sum(cot * net.forward(x))
            p[idx] = old
            g[idx] = (up - down) / (2 * step)
        out.append(g)
    return out


def assert_rel_close(analytic, numeric, rtol=1e-5, floor=1e-6):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    err = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), floor)
    assert err.max() <= rtol, f"max relative error {err.max():.2e}"


def test_hand_set_coupling_forward_inverse():
    net = InvertibleNet(2, [linear_coupling(2.0)])
    np.testing.assert_array_equal(forward(net, [1.0, 3.0]), [1.0, 5.0])
    np.testing.assert_array_equal(inverse(net, [1.0, 5.0]), [1.0, 3.0])


def test_zero_conditioner_is_permutation_only():
    rng = np.random.default_rng(0)
    net = build_net(6, 3, rng, hidden=(4,))
    perms = [l for l in net.layers if isinstance(l, PermutationLayer)]
    assert len(perms) == 2
    x = rng.standard_normal(6)
    expected = x[perms[0].perm][perms[1].perm]
    np.testing.assert_array_equal(net.forward(x), expected)
    np.testing.assert_array_equal(net.inverse(expected), x)


def test_zero_conditioner_cotangent_follows_permutation():
    rng = np.random.default_rng(1)
    net = build_net(6, 3, rng, hidden=(4,))
    perms = [l.perm for l in net.layers if isinstance(l, PermutationLayer)]
    x = rng.standard_normal(6)
    for j in range(6):
        dx, _ = grad(net, x, np.eye(6)[j])
        # y_j = x[p0[p1[j]]]
        np.testing.assert_array_equal(dx, np.eye(6)[perms[0][perms[1][j]]])


def test_linear_coupling_closed_form_gradients():
    w, b = 0.7, -0.3
    net = InvertibleNet(2, [linear_coupling(w, b)])
    x = np.array([1.5, -2.0])
    c = np.array([0.4, 1.1])
    dx, (dW, db) = grad(net, x, c)
    np.testing.assert_allclose(dx, [c[0] + c[1] * w, c[1]], rtol=0, atol=1e-15)
    np.testing.assert_allclose(dW, [[c[1] * x[0]]], rtol=0, atol=1e-15)
    np.testing.assert_allclose(db, [c[1]], rtol=0, atol=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences(seed):
    net = random_net(4, seed)
    assert net.num_params <= 10_000
    rng = np.random.default_rng(100 + seed)
    x, c = rng.standard_normal(4), rng.standard_normal(4)
    dx, grads = grad(net, x, c)
    dx_fd = numeric_jacobian(net.forward, x, 1e-6).T @ c
    assert_rel_close(dx, dx_fd)
    for a, n in zip(grads, fd_param_grads(net, x, c)):
        assert_rel_close(a, n)


def test_batched_grad_sums_rows():
    net = random_net(4, 7)
    rng = np.random.default_rng(3)
    X, C = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
    dX, grads = grad(net, X, C)
    rows = [grad(net, X[i], C[i]) for i in range(5)]
    np.testing.assert_allclose(dX, np.stack([r[0] for r in rows]), atol=1e-14)
    for k, g in enumerate(grads):
        np.testing.assert_allclose(g, sum(r[1][k] for r in rows), atol=1e-13)


def test_inverse_vjp_matches_finite_differences():
    net = random_net(6, 11)
    rng = np.random.default_rng(5)
    y, c = rng.standard_normal((1, 6)), rng.standard_normal((1, 6))
    _, tape = net.inverse_tape(y)
    dy, _ = net.inverse_vjp(tape, c)
    J = numeric_jacobian(net.inverse, y[0], 1e-6)
    assert_rel_close(dy[0], J.T @ c[0])


def test_numeric_jacobian_identity():
    x = np.random.default_rng(0).standard_normal(5)
    np.testing.assert_allclose(numeric_jacobian(lambda v: v, x, 1e-6), np.eye(5), atol=1e-9)


def test_numeric_jacobian_coupling():
    net = InvertibleNet(2, [linear_coupling(2.0)])
    J = numeric_jacobian(net.forward, np.array([0.3, -1.2]), 1e-6)
    np.testing.assert_allclose(J, [[1, 0], [2, 1]], atol=1e-6)


def test_numeric_jacobian_rejects_bad_step():
    with pytest.raises(ValueError):
        numeric_jacobian(lambda v: v, np.zeros(2), 0.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), dim=st.sampled_from([2, 4, 8, 16]),
       layers=st.integers(1, 4), scale=st.floats(0.01, 100.0))
def test_round_trip(seed, dim, layers, scale):
    net = random_net(dim, seed, layers)
    rng = np.random.default_rng(seed + 1)
    x = scale * rng.standard_normal((3, dim))
    tol = 1e-12 * (1 + np.abs(x).max(axis=1, keepdims=True))
    assert (np.abs(net.inverse(net.forward(x)) - x) <= tol).all()
    assert (np.abs(net.forward(net.inverse(x)) - x) <= tol).all()


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), dim=st.sampled_from([2, 4, 6, 8]))
def test_volume_preservation(seed, dim):
    net = random_net(dim, seed, 3, hidden=(16, 16))
    x = np.random.default_rng(seed).standard_normal(dim)
    J = numeric_jacobian(net.forward, x, 1e-5)
    assert abs(abs(np.linalg.det(J)) - 1) <= 1e-6


def test_odd_dimension_rejected():
    with pytest.raises(ValueError, match="even"):
        build_net(5, 1, np.random.default_rng(0))


def test_dimension_mismatch():
    net = random_net(4, 0)
    with pytest.raises(DimensionMismatch):
        net.forward(np.zeros(3))
    with pytest.raises(DimensionMismatch):
        grad(net, np.zeros(4), np.zeros(2))
    with pytest.raises(DimensionMismatch):
        InvertibleNet(4, [PermutationLayer([1, 0])])


def test_mlp_width_consistency():
    with pytest.raises(DimensionMismatch):
        Mlp([2, 3, 2], [np.zeros((2, 3)), np.zeros((2, 2))], [np.zeros(3), np.zeros(2)])


def test_initialization():
    rng = np.random.default_rng(0)
    layer = AdditiveCouplingLayer.init(8, rng, hidden=(64, 64))
    W0, W1, W2 = layer.conditioner.weights
    a = np.sqrt(6 / (4 + 64))
    assert np.abs(W0).max() <= a and np.abs(W0).max() > 0.5 * a
    assert not W2.any() and not layer.conditioner.biases[-1].any()


def test_same_seed_same_net():
    a = build_net(16, 3, np.random.default_rng(42), zero_last=False)
    b = build_net(16, 3, np.random.default_rng(42), zero_last=False)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    x = np.random.default_rng(1).standard_normal(16)
    assert a.forward(x).tobytes() == b.forward(x).tobytes()


def test_json_round_trip_is_bit_exact():
    net = random_net(8, 3)
    net.layers.append(LinearLayer([[2.0 if i == j else 0.0 for j in range(8)] for i in range(8)]))
    text = json.dumps(net.to_dict())
    back = InvertibleNet.from_dict(json.loads(text))
    assert json.dumps(back.to_dict()) == text
    for p, q in zip(net.params, back.params):
        assert p.tobytes() == q.tobytes()
    x = np.random.default_rng(0).standard_normal((4, 8))
    assert net.forward(x).tobytes() == back.forward(x).tobytes()
    d = json.loads(text)
    assert d["schema_version"] == 1
    perm_layers = [l for l in d["layers"] if l["type"] == "permutation"]
    assert all(isinstance(l["seed"], int) for l in perm_layers)


def test_linear_layer_round_trip():
    net = InvertibleNet(2, [LinearLayer([[1, 1], [1, -1]])])
    x = np.array([0.25, 3.0])
    np.testing.assert_allclose(net.inverse(net.forward(x)), x, atol=1e-15)
    assert not net.volume_preserving
