"""Dual-path numeric kernels: numba ``@njit`` and pure-numpy fallbacks.

Every kernel exists twice: ``<name>_nb`` (numba, explicit loops) and
``<name>_np`` (vectorized numpy). The unsuffixed name dispatches to one of
them according to :mod:`nlerkit.backend`. Conventions shared by both paths:

* all float arrays are C-contiguous float64,
* reductions over the batch run in fixed index order, so results are
  deterministic and batched outputs equal per-example outputs on the numba
  path (the numpy path delegates to BLAS and matches to rounding only),
* convolutions are "valid" (no padding), stride 1.

The CTMC simulator consumes uniforms from the legacy MT19937 stream seeded
inside the kernel; numba reproduces numpy's stream bit-exactly, so both
paths generate identical trajectories for the same seed.
"""

import numpy as np

from .backend import LAYER_KERNELS_NUMBA, SIM_KERNELS_NUMBA, njit, prange

# ---------------------------------------------------------------------------
# dense layer: y[r, o] = b[o] + sum_f x[r, f] * w[f, o]
# ---------------------------------------------------------------------------


@njit(cache=True, parallel=True)
def dense_forward_nb(x, w, b):
    rows, fan_in = x.shape
    fan_out = w.shape[1]
    y = np.empty((rows, fan_out))
    for r in prange(rows):
        for o in range(fan_out):
            acc = b[o]
            for f in range(fan_in):
                acc += x[r, f] * w[f, o]
            y[r, o] = acc
    return y


def dense_forward_np(x, w, b):
    return x @ w + b


@njit(cache=True, parallel=True)
def dense_backward_nb(x, w, gy):
    rows, fan_in = x.shape
    fan_out = w.shape[1]
    gx = np.empty((rows, fan_in))
    gw = np.empty((fan_in, fan_out))
    gb = np.empty(fan_out)
    for r in prange(rows):
        for f in range(fan_in):
            acc = 0.0
            for o in range(fan_out):
                acc += gy[r, o] * w[f, o]
            gx[r, f] = acc
    for f in prange(fan_in):
        for o in range(fan_out):
            acc = 0.0
            for r in range(rows):
                acc += x[r, f] * gy[r, o]
            gw[f, o] = acc
    for o in range(fan_out):
        acc = 0.0
        for r in range(rows):
            acc += gy[r, o]
        gb[o] = acc
    return gx, gw, gb


def dense_backward_np(x, w, gy):
    gx = gy @ w.T
    gw = x.T @ gy
    gb = gy.sum(axis=0)
    return gx, gw, gb


# ---------------------------------------------------------------------------
# conv1d, kernel size K, valid, stride 1
# x: [B, Ci, L], w: [Co, Ci, K], y: [B, Co, L - K + 1]
# ---------------------------------------------------------------------------


@njit(cache=True, parallel=True)
def conv1d_forward_nb(x, w, b):
    batch, cin, length = x.shape
    cout, _, ksz = w.shape
    lout = length - ksz + 1
    y = np.empty((batch, cout, lout))
    for bi in prange(batch):
        for o in range(cout):
            for t in range(lout):
                acc = b[o]
                for c in range(cin):
                    for k in range(ksz):
                        acc += x[bi, c, t + k] * w[o, c, k]
                y[bi, o, t] = acc
    return y


def conv1d_forward_np(x, w, b):
    win = np.lib.stride_tricks.sliding_window_view(x, w.shape[2], axis=2)
    y = np.einsum("bctk,ock->bot", win, w, optimize=True)
    return y + b[None, :, None]


@njit(cache=True, parallel=True)
def conv1d_backward_nb(x, w, gy):
    batch, cin, length = x.shape
    cout, _, ksz = w.shape
    lout = length - ksz + 1
    gx = np.zeros((batch, cin, length))
    gw = np.empty((cout, cin, ksz))
    gb = np.empty(cout)
    for bi in prange(batch):
        for o in range(cout):
            for t in range(lout):
                g = gy[bi, o, t]
                for c in range(cin):
                    for k in range(ksz):
                        gx[bi, c, t + k] += g * w[o, c, k]
    for o in prange(cout):
        for c in range(cin):
            for k in range(ksz):
                acc = 0.0
                for bi in range(batch):
                    for t in range(lout):
                        acc += x[bi, c, t + k] * gy[bi, o, t]
                gw[o, c, k] = acc
    for o in range(cout):
        acc = 0.0
        for bi in range(batch):
            for t in range(lout):
                acc += gy[bi, o, t]
        gb[o] = acc
    return gx, gw, gb


def conv1d_backward_np(x, w, gy):
    ksz = w.shape[2]
    lout = gy.shape[2]
    gx = np.zeros_like(x)
    gw = np.empty_like(w)
    for k in range(ksz):
        gx[:, :, k : k + lout] += np.tensordot(gy, w[:, :, k], axes=([1], [0])).transpose(0, 2, 1)
        gw[:, :, k] = np.tensordot(gy, x[:, :, k : k + lout], axes=([0, 2], [0, 2]))
    gb = gy.sum(axis=(0, 2))
    return gx, gw, gb


# ---------------------------------------------------------------------------
# conv2d, kernel KxK, valid, stride 1
# x: [B, Ci, H, W], w: [Co, Ci, K, K], y: [B, Co, H - K + 1, W - K + 1]
# ---------------------------------------------------------------------------


@njit(cache=True, parallel=True)
def conv2d_forward_nb(x, w, b):
    batch, cin, height, width = x.shape
    cout, _, ksz, _ = w.shape
    hout = height - ksz + 1
    wout = width - ksz + 1
    y = np.empty((batch, cout, hout, wout))
    for bi in prange(batch):
        for o in range(cout):
            for i in range(hout):
                for j in range(wout):
                    acc = b[o]
                    for c in range(cin):
                        for ki in range(ksz):
                            for kj in range(ksz):
                                acc += x[bi, c, i + ki, j + kj] * w[o, c, ki, kj]
                    y[bi, o, i, j] = acc
    return y


def conv2d_forward_np(x, w, b):
    ksz = w.shape[2]
    win = np.lib.stride_tricks.sliding_window_view(x, (ksz, ksz), axis=(2, 3))
    y = np.einsum("bcijkl,ockl->boij", win, w, optimize=True)
    return y + b[None, :, None, None]


@njit(cache=True, parallel=True)
def conv2d_backward_nb(x, w, gy):
    batch, cin, height, width = x.shape
    cout, _, ksz, _ = w.shape
    hout = height - ksz + 1
    wout = width - ksz + 1
    gx = np.zeros((batch, cin, height, width))
    gw = np.empty((cout, cin, ksz, ksz))
    gb = np.empty(cout)
    for bi in prange(batch):
        for o in range(cout):
            for i in range(hout):
                for j in range(wout):
                    g = gy[bi, o, i, j]
                    for c in range(cin):
                        for ki in range(ksz):
                            for kj in range(ksz):
                                gx[bi, c, i + ki, j + kj] += g * w[o, c, ki, kj]
    for o in prange(cout):
        for c in range(cin):
            for ki in range(ksz):
                for kj in range(ksz):
                    acc = 0.0
                    for bi in range(batch):
                        for i in range(hout):
                            for j in range(wout):
                                acc += x[bi, c, i + ki, j + kj] * gy[bi, o, i, j]
                    gw[o, c, ki, kj] = acc
    for o in range(cout):
        acc = 0.0
        for bi in range(batch):
            for i in range(hout):
                for j in range(wout):
                    acc += gy[bi, o, i, j]
        gb[o] = acc
    return gx, gw, gb


def conv2d_backward_np(x, w, gy):
    ksz = w.shape[2]
    hout, wout = gy.shape[2], gy.shape[3]
    gx = np.zeros_like(x)
    gw = np.empty_like(w)
    for ki in range(ksz):
        for kj in range(ksz):
            contrib = np.tensordot(gy, w[:, :, ki, kj], axes=([1], [0]))
            gx[:, :, ki : ki + hout, kj : kj + wout] += contrib.transpose(0, 3, 1, 2)
            gw[:, :, ki, kj] = np.tensordot(
                gy, x[:, :, ki : ki + hout, kj : kj + wout], axes=([0, 2, 3], [0, 2, 3])
            )
    gb = gy.sum(axis=(0, 2, 3))
    return gx, gw, gb


# ---------------------------------------------------------------------------
# average pooling 2x2 stride 2, floor division of odd extents
# (memory bound; a single numpy implementation serves both backends)
# ---------------------------------------------------------------------------


def avgpool2d_forward(x):
    batch, ch, height, width = x.shape
    hout, wout = height // 2, width // 2
    xc = x[:, :, : 2 * hout, : 2 * wout]
    return xc.reshape(batch, ch, hout, 2, wout, 2).mean(axis=(3, 5))


def avgpool2d_backward(x_shape, gy):
    batch, ch, height, width = x_shape
    hout, wout = height // 2, width // 2
    gx = np.zeros(x_shape)
    spread = np.repeat(np.repeat(gy, 2, axis=2), 2, axis=3) * 0.25
    gx[:, :, : 2 * hout, : 2 * wout] = spread
    return gx


# ---------------------------------------------------------------------------
# SIS CTMC simulator
#
# State is a bitmask over nodes. Each step redraws one exponential waiting
# time per node from its current rate (memoryless, so redrawing is
# equivalent to keeping clocks) and applies the earliest flip. Exponentials
# are derived from uniforms as -log(1 - u)/rate so both backends consume
# the identical MT19937 stream.
# ---------------------------------------------------------------------------


def _sis_simulate_body(np_random, n_nodes, weights, eta, lam, mu, init_state, obs_times):
    n_obs = obs_times.shape[0]
    out = np.empty(n_obs, dtype=np.int64)
    state = init_state
    t = 0.0
    next_obs = 0
    while next_obs < n_obs and obs_times[next_obs] <= t:
        out[next_obs] = state
        next_obs += 1
    while next_obs < n_obs:
        best_dt = np.inf
        best_node = -1
        for k in range(n_nodes):
            if (state >> k) & 1:
                rate = mu
            else:
                rate = eta
                for j in range(n_nodes):
                    if (state >> j) & 1:
                        rate += lam * weights[k, j]
            if rate > 0.0:
                u = np_random()
                dt = -np.log(1.0 - u) / rate
                if dt < best_dt:
                    best_dt = dt
                    best_node = k
        if best_node < 0:
            # absorbing: no event can ever fire again
            while next_obs < n_obs:
                out[next_obs] = state
                next_obs += 1
            break
        t_event = t + best_dt
        while next_obs < n_obs and obs_times[next_obs] < t_event:
            out[next_obs] = state
            next_obs += 1
        state = state ^ (1 << best_node)
        t = t_event
    return out


@njit(cache=True)
def sis_simulate_nb(n_nodes, weights, eta, lam, mu, init_state, obs_times, seed):
    np.random.seed(seed)
    n_obs = obs_times.shape[0]
    out = np.empty(n_obs, dtype=np.int64)
    state = init_state
    t = 0.0
    next_obs = 0
    while next_obs < n_obs and obs_times[next_obs] <= t:
        out[next_obs] = state
        next_obs += 1
    while next_obs < n_obs:
        best_dt = np.inf
        best_node = -1
        for k in range(n_nodes):
            if (state >> k) & 1:
                rate = mu
            else:
                rate = eta
                for j in range(n_nodes):
                    if (state >> j) & 1:
                        rate += lam * weights[k, j]
            if rate > 0.0:
                u = np.random.random()
                dt = -np.log(1.0 - u) / rate
                if dt < best_dt:
                    best_dt = dt
                    best_node = k
        if best_node < 0:
            while next_obs < n_obs:
                out[next_obs] = state
                next_obs += 1
            break
        t_event = t + best_dt
        while next_obs < n_obs and obs_times[next_obs] < t_event:
            out[next_obs] = state
            next_obs += 1
        state = state ^ (1 << best_node)
        t = t_event
    return out


def sis_simulate_np(n_nodes, weights, eta, lam, mu, init_state, obs_times, seed):
    rs = np.random.RandomState(seed)
    return _sis_simulate_body(
        rs.random_sample, n_nodes, weights, eta, lam, mu, init_state, obs_times
    )


if LAYER_KERNELS_NUMBA:
    dense_forward = dense_forward_nb
    dense_backward = dense_backward_nb
    conv1d_forward = conv1d_forward_nb
    conv1d_backward = conv1d_backward_nb
    conv2d_forward = conv2d_forward_nb
    conv2d_backward = conv2d_backward_nb
else:
    dense_forward = dense_forward_np
    dense_backward = dense_backward_np
    conv1d_forward = conv1d_forward_np
    conv1d_backward = conv1d_backward_np
    conv2d_forward = conv2d_forward_np
    conv2d_backward = conv2d_backward_np

sis_simulate = sis_simulate_nb if SIM_KERNELS_NUMBA else sis_simulate_np
