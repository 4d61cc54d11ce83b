"""Numba kernels against their numpy fallbacks, plus determinism contracts."""

import numpy as np

from nlerkit import kernels as K


def _rand(rng, *shape):
    return rng.standard_normal(shape)


def test_dense_paths_agree():
    rng = np.random.default_rng(0)
    x, w, b = _rand(rng, 9, 7), _rand(rng, 7, 5), _rand(rng, 5)
    np.testing.assert_allclose(K.dense_forward_nb(x, w, b), K.dense_forward_np(x, w, b), atol=1e-12)
    gy = _rand(rng, 9, 5)
    for a, bb in zip(K.dense_backward_nb(x, w, gy), K.dense_backward_np(x, w, gy)):
        np.testing.assert_allclose(a, bb, atol=1e-12)


def test_conv1d_paths_agree():
    rng = np.random.default_rng(1)
    x, w, b = _rand(rng, 4, 3, 13), _rand(rng, 6, 3, 5), _rand(rng, 6)
    np.testing.assert_allclose(K.conv1d_forward_nb(x, w, b), K.conv1d_forward_np(x, w, b), atol=1e-12)
    gy = _rand(rng, 4, 6, 9)
    for a, bb in zip(K.conv1d_backward_nb(x, w, gy), K.conv1d_backward_np(x, w, gy)):
        np.testing.assert_allclose(a, bb, atol=1e-12)


def test_conv2d_paths_agree():
    rng = np.random.default_rng(2)
    x, w, b = _rand(rng, 3, 2, 9, 9), _rand(rng, 4, 2, 3, 3), _rand(rng, 4)
    np.testing.assert_allclose(K.conv2d_forward_nb(x, w, b), K.conv2d_forward_np(x, w, b), atol=1e-12)
    gy = _rand(rng, 3, 4, 7, 7)
    for a, bb in zip(K.conv2d_backward_nb(x, w, gy), K.conv2d_backward_np(x, w, gy)):
        np.testing.assert_allclose(a, bb, atol=1e-12)


def test_dense_numba_batch_consistency_exact():
    """Batched forward equals per-example forward bit for bit on the numba path."""
    rng = np.random.default_rng(3)
    x, w, b = _rand(rng, 16, 10), _rand(rng, 10, 8), _rand(rng, 8)
    full = K.dense_forward_nb(x, w, b)
    rows = np.concatenate([K.dense_forward_nb(x[i : i + 1], w, b) for i in range(16)])
    np.testing.assert_array_equal(full, rows)


def test_conv_numba_batch_consistency_exact():
    rng = np.random.default_rng(4)
    x, w, b = _rand(rng, 6, 3, 11), _rand(rng, 5, 3, 5), _rand(rng, 5)
    full = K.conv1d_forward_nb(x, w, b)
    rows = np.concatenate([K.conv1d_forward_nb(x[i : i + 1], w, b) for i in range(6)])
    np.testing.assert_array_equal(full, rows)


def test_avgpool_floor_and_backward():
    x = np.arange(2 * 1 * 5 * 5, dtype=np.float64).reshape(2, 1, 5, 5)
    y = K.avgpool2d_forward(x)
    assert y.shape == (2, 1, 2, 2)
    assert y[0, 0, 0, 0] == (x[0, 0, 0, 0] + x[0, 0, 0, 1] + x[0, 0, 1, 0] + x[0, 0, 1, 1]) / 4
    gy = np.ones_like(y)
    gx = K.avgpool2d_backward(x.shape, gy)
    assert gx.shape == x.shape
    np.testing.assert_array_equal(gx[:, :, :4, :4], 0.25)
    np.testing.assert_array_equal(gx[:, :, 4, :], 0.0)  # cropped row gets no gradient


def test_sis_simulator_backends_bit_identical():
    weights = np.exp(-np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.fill_diagonal(weights, 0.0)
    times = np.arange(5.0)
    for seed in (0, 1, 12345):
        a = K.sis_simulate_nb(2, weights, 0.135, 1.3, 0.8, 1, times, seed)
        b = K.sis_simulate_np(2, weights, 0.135, 1.3, 0.8, 1, times, seed)
        np.testing.assert_array_equal(a, b)


def test_sis_simulator_deterministic():
    weights = np.zeros((1, 1))
    times = np.arange(13.0)
    a = K.sis_simulate(1, weights, 0.135, 1.0, 1.0, 0, times, 77)
    b = K.sis_simulate(1, weights, 0.135, 1.0, 1.0, 0, times, 77)
    np.testing.assert_array_equal(a, b)


def test_sis_simulator_absorbing_without_self_infection():
    # eta = 0 and nobody infected: no event can ever fire
    weights = np.exp(-np.ones((2, 2)))
    np.fill_diagonal(weights, 0.0)
    out = K.sis_simulate(2, weights, 0.0, 2.0, 1.0, 0, np.arange(6.0), 5)
    np.testing.assert_array_equal(out, 0)
