import numpy as np
import pytest

from ovfl.errors import NumericDivergenceError, ShapeError
from ovfl.nn_core import (MlpParams, SplitModel, backward, forward, init_mlp, init_split_model, mse_grad,
                          mse_loss, predict, sgd_step)


def _loss(params, x, y):
    return mse_loss(predict(params, x), y)


def test_forward_shapes_and_relu():
    p = init_mlp([5, 7, 3], rng_seed=1)
    x = np.random.default_rng(0).normal(size=(4, 5))
    tape = forward(p, x)
    assert tape.output.shape == (4, 3)
    # hidden activation is ReLU of the pre-activation, output is linear
    np.testing.assert_array_equal(tape.activations[1], np.maximum(tape.pre[0], 0.0))
    np.testing.assert_array_equal(tape.output, tape.pre[-1])


def test_glorot_bounds_and_zero_bias():
    p = init_mlp([102, 128, 256], rng_seed=3)
    for w, b, (fi, fo) in zip(p.weights, p.biases, [(102, 128), (128, 256)]):
        limit = np.sqrt(6.0 / (fi + fo))
        assert w.shape == (fo, fi)
        assert np.all(np.abs(w) <= limit)
        assert np.abs(w).max() > 0.9 * limit
        assert np.all(b == 0)


def test_init_is_deterministic():
    a = init_split_model([6, 4, 3], [5], 3, 2, 11)
    b = init_split_model([6, 4, 3], [5], 3, 2, 11)
    c = init_split_model([6, 4, 3], [5], 3, 2, 12)
    np.testing.assert_array_equal(a.flatten(), b.flatten())
    assert not np.array_equal(a.flatten(), c.flatten())


@pytest.mark.parametrize("sizes", [[3, 2], [4, 5, 3], [10, 8, 4]])
def test_backward_matches_finite_differences(sizes):
    rng = np.random.default_rng(5)
    p = init_mlp(sizes, rng_seed=2)
    p = MlpParams(p.layer_sizes, p.weights, [rng.normal(scale=0.1, size=b.shape) for b in p.biases])
    x = rng.normal(size=(6, sizes[0]))
    y = rng.normal(size=(6, sizes[-1]))
    tape = forward(p, x)
    grads, _ = backward(p, tape, mse_grad(tape.output, y))
    theta = p.flatten()
    g = grads.flatten()
    h = 1e-6
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        fd = (_loss(MlpParams.from_flat(sizes, theta + e), x, y) - _loss(MlpParams.from_flat(sizes, theta - e), x, y)) / (2 * h)
        assert abs(fd - g[i]) <= 1e-6 + 1e-5 * abs(fd)


def test_linear_layer_closed_form_gradient():
    # single linear layer: dL/dW = 2/(n*m) (XW^T - Y)^T X
    rng = np.random.default_rng(0)
    p = init_mlp([3, 2], rng_seed=0)
    x, y = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    tape = forward(p, x)
    grads, input_grad = backward(p, tape, mse_grad(tape.output, y))
    r = tape.output - y
    np.testing.assert_allclose(grads.weights[0], 2.0 / r.size * r.T @ x, atol=1e-14)
    np.testing.assert_allclose(grads.biases[0], 2.0 / r.size * r.sum(axis=0), atol=1e-14)
    np.testing.assert_allclose(input_grad, 2.0 / r.size * r @ p.weights[0], atol=1e-14)


def test_last_layer_loss_is_convex_along_lines():
    rng = np.random.default_rng(1)
    p = init_mlp([4, 6, 2], rng_seed=4)
    x, y = rng.normal(size=(10, 4)), rng.normal(size=(10, 2))
    d = rng.normal(size=p.weights[-1].shape)

    def f(s):
        w = list(p.weights)
        w[-1] = p.weights[-1] + s * d
        return _loss(MlpParams(p.layer_sizes, w, p.biases), x, y)

    for s in np.linspace(-2, 2, 9):
        assert f(s - 0.5) + f(s + 0.5) - 2 * f(s) >= -1e-12


def test_flatten_roundtrip_and_ordering():
    m = init_split_model([3, 2], [4], 2, 1, 0)
    flat = m.flatten()
    assert flat.size == m.size
    np.testing.assert_array_equal(m.from_flat(flat).flatten(), flat)
    np.testing.assert_array_equal(flat[: m.head.weights[0].size], m.head.weights[0].ravel())


def test_shape_errors():
    with pytest.raises(ShapeError):
        MlpParams([3, 2], [np.zeros((3, 2))], [np.zeros(2)])
    with pytest.raises(ShapeError):
        SplitModel(init_mlp([5, 2], 0), [init_mlp([3, 2], 1), init_mlp([3, 2], 2)])
    p = init_mlp([3, 2], 0)
    with pytest.raises(ShapeError):
        forward(p, np.zeros((4, 5)))


def test_divergence_detected():
    with pytest.raises(NumericDivergenceError):
        mse_loss(np.array([[np.inf]]), np.array([[0.0]]))
    p = init_mlp([2, 1], 0)
    bad = MlpParams(p.layer_sizes, [np.full((1, 2), np.nan)], [np.zeros(1)])
    with pytest.raises(NumericDivergenceError):
        sgd_step(p, bad, 0.1)


def test_sgd_step_is_theta_minus_eta_g():
    p = init_mlp([3, 2], 0)
    g = MlpParams(p.layer_sizes, [np.ones((2, 3))], [np.ones(2)])
    q = sgd_step(p, g, 0.25)
    np.testing.assert_array_equal(q.flatten(), p.flatten() - 0.25)
