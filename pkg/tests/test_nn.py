import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_diff, rel_err
from robust_vvc.marl.nn import Adam, Mlp, ShapeError, orthogonal, soft_update


@pytest.mark.parametrize("n_in, n_out", [(5, 3), (3, 5), (4, 4)])
def test_orthogonal(n_in, n_out):
    W = orthogonal(np.random.default_rng(0), n_in, n_out, gain=2.0)
    G = W.T @ W if n_in >= n_out else W @ W.T
    assert np.allclose(G, 4.0 * np.eye(min(n_in, n_out)), atol=1e-12)


def test_flat_storage_is_shared():
    net = Mlp([3, 4, 2], np.random.default_rng(0))
    net.flat[:] = 0.0
    assert all(np.all(W == 0) for W in net.W)
    net.W[1][0, 0] = 5.0
    assert 5.0 in net.flat
    assert net.n_params == 3 * 4 + 4 + 4 * 2 + 2


@pytest.mark.parametrize("squash", [False, True])
def test_backward_matches_finite_differences(squash):
    rng = np.random.default_rng(1)
    net = Mlp([4, 6, 5, 2], rng, squash=squash, scale=0.8, out_gain=1.0)
    x = rng.normal(size=(7, 4))
    w = rng.normal(size=(7, 2))
    y, acts = net.forward(x)
    grad, gx = net.backward(acts, w)

    def loss_p(p):
        old = net.flat.copy()
        net.flat[:] = p
        v = float(np.sum(w * net(x)))
        net.flat[:] = old
        return v

    assert rel_err(grad, central_diff(loss_p, net.flat.copy(), 1e-6)) < 1e-6
    assert rel_err(gx, central_diff(lambda z: float(np.sum(w * net(z))), x, 1e-6)) < 1e-6


def test_forward_matches_call_and_bounds():
    net = Mlp([3, 8, 2], np.random.default_rng(2), squash=True, scale=0.8, out_gain=5.0)
    x = np.random.default_rng(3).normal(size=(10, 3)) * 100
    y, _ = net.forward(x)
    assert np.array_equal(y, net(x))
    assert np.all(np.abs(y) <= 0.8)


def test_shape_errors():
    net = Mlp([3, 2])
    with pytest.raises(ShapeError):
        net(np.zeros((1, 4)))
    with pytest.raises(ShapeError):
        Mlp([3])
    with pytest.raises(ShapeError):
        soft_update(net, Mlp([3, 3]), 0.1)


def test_serialization_round_trip():
    net = Mlp([3, 5, 2], np.random.default_rng(4), squash=True, scale=0.8)
    back = Mlp.from_dict(json.loads(json.dumps(net.to_dict())))
    x = np.random.default_rng(5).normal(size=(4, 3))
    assert np.array_equal(back(x), net(x))
    bad = net.to_dict()
    bad["biases"] = bad["biases"][:1]
    with pytest.raises(ShapeError):
        Mlp.from_dict(bad)


def test_soft_update():
    a = Mlp([2, 2], np.random.default_rng(6))
    b = Mlp([2, 2], np.random.default_rng(7))
    expect = 0.01 * a.flat + 0.99 * b.flat
    soft_update(a, b, 0.01)
    assert np.allclose(b.flat, expect, atol=1e-15)


def test_adam_against_reference():
    rng = np.random.default_rng(8)
    p = rng.normal(size=6)
    ref = p.copy()
    opt = Adam(p, lr=1e-2)
    m = np.zeros(6)
    v = np.zeros(6)
    for t in range(1, 6):
        g = rng.normal(size=6)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 1e-2 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        opt.step(g)
    assert np.allclose(p, ref, atol=1e-14)


def test_adam_descends_quadratic():
    p = np.array([3.0, -2.0])
    opt = Adam(p, lr=0.05)
    for _ in range(2000):
        opt.step(2 * p)
    assert np.all(np.abs(p) < 1e-2)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), eta=st.floats(0.05, 1.0))
def test_squashed_output_bounded(seed, eta):
    rng = np.random.default_rng(seed)
    net = Mlp([4, 8, 3], rng, squash=True, scale=eta, out_gain=10.0)
    assert np.all(np.abs(net(rng.normal(size=(20, 4)) * 50)) <= eta)
