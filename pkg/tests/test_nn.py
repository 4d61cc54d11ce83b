"""Network engine: architectures, forward/backward gradients, Adam."""

import numpy as np
import pytest

from nlerkit.nn import (
    Adam,
    AvgPool2d,
    ConcatTheta,
    Conv1d,
    Conv2d,
    Dense,
    Flatten,
    NoCachedForward,
    NOMINAL_COUNTS,
    ReLU,
    ShapeMismatch,
    SiLU,
    SIS_ARCHITECTURES,
    SPATIAL_ARCHITECTURES,
    TransposeTimeChannel,
    UnknownSizeLabel,
    build_architecture,
    theta_input_gradient,
)


def flat_params(model):
    return np.concatenate([p.ravel() for p in model.params()])


def numeric_weight_grad(model, x, theta, upstream, n_probe, rng, h=1e-6):
    """Central-difference gradient of sum(upstream * logits) wrt sampled weights."""
    params = model.params()
    sizes = [p.size for p in params]
    total = sum(sizes)
    picks = rng.choice(total, size=min(n_probe, total), replace=False)
    out = {}
    for flat_idx in picks:
        acc = 0
        for p in params:
            if flat_idx < acc + p.size:
                view = p.ravel()
                j = flat_idx - acc
                old = view[j]
                view[j] = old + h
                up = float(upstream @ model.forward(x, theta))
                view[j] = old - h
                dn = float(upstream @ model.forward(x, theta))
                view[j] = old
                out[flat_idx] = (up - dn) / (2 * h)
                break
            acc += p.size
    return out


def check_gradients(model, x, theta, rng, n_probe=25, rtol=1e-6):
    upstream = rng.standard_normal(x.shape[0])
    model.forward(x, theta)
    model.backward(upstream)
    gvec = model.grad_vector()
    numeric = numeric_weight_grad(model, x, theta, upstream, n_probe, rng)
    scale = max(np.max(np.abs(list(numeric.values()))), 1e-8)
    for idx, fd in numeric.items():
        assert abs(gvec[idx] - fd) / max(abs(fd), 1e-3 * scale) < rtol


# ---------------------------------------------------------------------------
# architecture construction
# ---------------------------------------------------------------------------


def test_gp_30k_architecture_table():
    model = build_architecture("gp", "30K", input_shape=(1, 25, 25), theta_dim=3, seed=0)
    convs = [l for l in model.layers if isinstance(l, Conv2d)]
    denses = [l for l in model.layers if isinstance(l, Dense)]
    assert [c.w.shape[0] for c in convs] == [40, 40, 32]
    assert [d.w.shape[1] for d in denses] == [48, 32, 1]
    assert isinstance(model.layers[1], ReLU)


def test_sis_100k_architecture_table():
    model = build_architecture("sis", "100K", input_shape=(13, 8), theta_dim=2, seed=0)
    denses = [l for l in model.layers if isinstance(l, Dense)]
    convs = [l for l in model.layers if isinstance(l, Conv1d)]
    assert [d.w.shape[1] for d in denses[:2]] == [64, 64]  # embedder
    assert [c.w.shape[0] for c in convs] == [64, 64, 96]
    assert [d.w.shape[1] for d in denses[2:]] == [128, 64, 32, 1]


def test_spatial_shape_chain_25():
    """25 -> 23 -> 11 -> 9 -> 4 -> 2 -> 1 through three conv+pool blocks."""
    model = build_architecture("gp", "30K", input_shape=(1, 25, 25), theta_dim=3, seed=0)
    x = np.zeros((1, 1, 25, 25))
    shapes = []
    for layer in model.layers:
        if isinstance(layer, ConcatTheta):
            x = layer.forward(x, np.zeros((1, 3)))
        else:
            x = layer.forward(x)
        if isinstance(layer, (Conv2d, AvgPool2d)):
            shapes.append(x.shape[2])
    assert shapes == [23, 11, 9, 4, 2, 1]


@pytest.mark.parametrize("label", list(SIS_ARCHITECTURES))
def test_sis_parameter_counts_within_20pct(label):
    model = build_architecture("sis", label, input_shape=(13, 8), theta_dim=2, seed=0)
    nominal = NOMINAL_COUNTS[label]
    assert 0.8 * nominal <= model.num_params() <= 1.2 * nominal


@pytest.mark.parametrize("label", list(SPATIAL_ARCHITECTURES))
def test_spatial_parameter_counts_within_20pct(label):
    model = build_architecture("gp", label, input_shape=(1, 25, 25), theta_dim=3, seed=0)
    nominal = NOMINAL_COUNTS[label]
    assert 0.8 * nominal <= model.num_params() <= 1.2 * nominal


def test_unknown_size_label():
    with pytest.raises(UnknownSizeLabel):
        build_architecture("sis", "7K", input_shape=(13, 8), theta_dim=2)
    with pytest.raises(UnknownSizeLabel):
        build_architecture("nope", "30K", input_shape=(1, 8, 8), theta_dim=3)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def test_zero_weights_give_zero_logit():
    model = build_architecture("sis", "3K", input_shape=(13, 4), theta_dim=2, seed=0)
    model.set_weights([np.zeros_like(p) for p in model.params()])
    rng = np.random.default_rng(0)
    logits = model.forward(rng.random((5, 13, 4)), rng.standard_normal((5, 2)))
    np.testing.assert_array_equal(logits, 0.0)


def test_activation_units():
    assert SiLU().forward(np.array([0.0]))[0] == 0.0
    assert ReLU().forward(np.array([-1.0]))[0] == 0.0
    assert ReLU().forward(np.array([2.0]))[0] == 2.0


def test_hand_computed_two_layer_logit():
    """Tiny dense net with hand-set weights against manual arithmetic."""
    import math

    from nlerkit.nn import RatioModel

    rng = np.random.default_rng(0)
    d1, d2 = Dense(2, 2, rng), Dense(2, 1, rng)
    d1.w[...] = [[1.0, 0.5], [-1.0, 2.0]]
    d1.b[...] = [0.1, -0.2]
    d2.w[...] = [[0.3], [-0.7]]
    d2.b[...] = [0.05]
    model = RatioModel(
        layers=[Flatten(), ConcatTheta(1), d1, SiLU(), d2],
        theta_dim=1, input_shape=(1,), case="toy", size_label="toy",
    )
    # by hand: z = [x + 0.4 + 0.1, 0.5x - 0.8 - 0.2], a = z*sigmoid(z),
    # logit = 0.3 a0 - 0.7 a1 + 0.05 with x = 0.7, theta = -0.4
    z0, z1 = 1.2, -0.65
    a0 = z0 / (1.0 + math.exp(-z0))
    a1 = z1 / (1.0 + math.exp(-z1))
    expected = 0.3 * a0 - 0.7 * a1 + 0.05
    logits = model.forward(np.array([[0.7]]), np.array([[-0.4]]))
    assert abs(logits[0] - expected) < 1e-14


def test_batch_matches_per_example_exact_on_numba_kernels(monkeypatch):
    """Fixed-order numba kernels make batching bit-invisible; the BLAS path
    is held to rounding-level agreement below."""
    from nlerkit import kernels

    monkeypatch.setattr(kernels, "dense_forward", kernels.dense_forward_nb)
    monkeypatch.setattr(kernels, "conv2d_forward", kernels.conv2d_forward_nb)
    model = build_architecture("gp", "30K", input_shape=(1, 8, 8), theta_dim=3, seed=3, conv_blocks=2)
    rng = np.random.default_rng(5)
    x = rng.standard_normal((7, 1, 8, 8))
    th = rng.standard_normal((7, 3))
    full = model.forward(x, th)
    singles = np.concatenate([model.forward(x[i : i + 1], th[i : i + 1]) for i in range(7)])
    np.testing.assert_array_equal(full, singles)


def test_fanout_matches_naive_stacked_computation():
    """The shared-trunk path must reproduce tiled-input forward/backward."""
    net = build_architecture("sis", "3K", input_shape=(13, 4), theta_dim=2, seed=0)
    rng = np.random.default_rng(0)
    x = rng.random((5, 13, 4))
    th = rng.standard_normal((5, 2))
    stack = np.concatenate([th, th + 0.1, th - 0.2])
    naive = net.forward(np.concatenate([x] * 3), stack)
    fan = net.forward_fanout(x, stack, 3)
    np.testing.assert_allclose(fan, naive, atol=1e-14)

    up = rng.standard_normal(15)
    net.forward(np.concatenate([x] * 3), stack)
    net.backward(up)
    g_naive = net.grad_vector().copy()
    net.forward_fanout(x, stack, 3)
    net.backward_fanout(up)
    g_fan = net.grad_vector().copy()
    scale = np.max(np.abs(g_naive))
    assert np.max(np.abs(g_naive - g_fan)) < 1e-12 * max(scale, 1.0)


def test_fanout_shape_guards():
    net = build_architecture("toy", "toy", input_shape=(1,), theta_dim=1, seed=0)
    with pytest.raises(NoCachedForward):
        net.backward_fanout(np.ones(2))
    with pytest.raises(ShapeMismatch):
        net.forward_fanout(np.zeros((2, 1)), np.zeros((3, 1)), 2)


def test_batch_matches_per_example_default_path():
    model = build_architecture("gp", "30K", input_shape=(1, 8, 8), theta_dim=3, seed=3, conv_blocks=2)
    rng = np.random.default_rng(5)
    x = rng.standard_normal((7, 1, 8, 8))
    th = rng.standard_normal((7, 3))
    full = model.forward(x, th)
    singles = np.concatenate([model.forward(x[i : i + 1], th[i : i + 1]) for i in range(7)])
    np.testing.assert_allclose(full, singles, rtol=1e-12, atol=1e-12)


def test_shape_mismatch_raised():
    model = build_architecture("sis", "3K", input_shape=(13, 4), theta_dim=2, seed=0)
    with pytest.raises(ShapeMismatch):
        model.forward(np.zeros((2, 13, 5)), np.zeros((2, 2)))
    with pytest.raises(ShapeMismatch):
        model.forward(np.zeros((2, 13, 4)), np.zeros((2, 3)))


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def test_gradcheck_sis_stack():
    """Covers dense, SiLU, transpose, conv1d, flatten, concat-theta."""
    rng = np.random.default_rng(7)
    model = build_architecture("sis", "3K", input_shape=(13, 4), theta_dim=2, seed=7)
    x = rng.random((4, 13, 4))
    th = rng.standard_normal((4, 2)) * 0.5
    check_gradients(model, x, th, rng)


def test_gradcheck_spatial_stack():
    """Covers conv2d, ReLU, avgpool."""
    rng = np.random.default_rng(8)
    model = build_architecture("gp", "30K", input_shape=(1, 9, 9), theta_dim=3, seed=8, conv_blocks=2)
    x = rng.standard_normal((3, 1, 9, 9))
    th = rng.standard_normal((3, 3)) * 0.5
    check_gradients(model, x, th, rng)


def test_zero_upstream_zero_gradients():
    model = build_architecture("toy", "toy", input_shape=(1,), theta_dim=1, seed=1)
    rng = np.random.default_rng(9)
    model.forward(rng.random((4, 1)), rng.standard_normal((4, 1)))
    model.backward(np.zeros(4))
    assert np.all(model.grad_vector() == 0.0)


def test_linear_model_least_squares_gradient():
    """Single dense layer + squared loss has the closed-form LS gradient."""
    rng = np.random.default_rng(10)
    layer = Dense(3, 1, rng)
    x = rng.standard_normal((16, 3))
    y = rng.standard_normal(16)
    pred = layer.forward(x).ravel()
    resid = pred - y
    layer.backward((2.0 * resid).reshape(-1, 1))
    np.testing.assert_allclose(layer.gw.ravel(), 2.0 * x.T @ resid, rtol=1e-12)
    np.testing.assert_allclose(layer.gb, [2.0 * resid.sum()], rtol=1e-12)


def test_backward_before_forward_raises():
    model = build_architecture("toy", "toy", input_shape=(1,), theta_dim=1, seed=0)
    with pytest.raises(NoCachedForward):
        model.backward(np.ones(1))


# ---------------------------------------------------------------------------
# theta input gradient
# ---------------------------------------------------------------------------


def test_theta_gradient_zero_when_ignored():
    model = build_architecture("toy", "toy", input_shape=(1,), theta_dim=1, seed=2)
    concat_idx = next(i for i, l in enumerate(model.layers) if isinstance(l, ConcatTheta))
    first_dense = model.layers[concat_idx + 1]
    first_dense.w[-1, :] = 0.0  # theta column
    rng = np.random.default_rng(11)
    grad = theta_input_gradient(model, rng.random((5, 1)), rng.standard_normal((5, 1)))
    np.testing.assert_array_equal(grad, 0.0)


def test_theta_gradient_matches_fd():
    rng = np.random.default_rng(12)
    model = build_architecture("sis", "3K", input_shape=(13, 4), theta_dim=2, seed=12)
    x = rng.random((6, 13, 4))
    th = rng.standard_normal((6, 2)) * 0.3
    grad = theta_input_gradient(model, x, th)
    h = 1e-7
    for k in range(2):
        tp, tm = th.copy(), th.copy()
        tp[:, k] += h
        tm[:, k] -= h
        fd = (model.forward(x, tp) - model.forward(x, tm)) / (2 * h)
        rel = np.max(np.abs(fd - grad[:, k])) / max(np.max(np.abs(fd)), 1e-12)
        assert rel < 1e-5


def test_theta_gradient_linear_model_constant():
    rng = np.random.default_rng(13)
    layers = [Flatten(), ConcatTheta(2), Dense(3, 1, rng)]
    from nlerkit.nn import RatioModel

    model = RatioModel(layers=layers, theta_dim=2, input_shape=(1,), case="toy", size_label="toy")
    grad = theta_input_gradient(model, rng.random((4, 1)), rng.standard_normal((4, 2)))
    np.testing.assert_allclose(grad, np.tile(layers[-1].w[1:, 0], (4, 1)), rtol=1e-14)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def test_adam_zero_gradient_no_decay_is_identity():
    rng = np.random.default_rng(14)
    w = rng.standard_normal((3, 2))
    before = w.copy()
    opt = Adam([w], lr=0.1, weight_decay=0.0)
    opt.step([w], [np.zeros_like(w)])
    np.testing.assert_array_equal(w, before)


def test_adam_first_step_is_learning_rate():
    w = np.array([1.0])
    opt = Adam([w], lr=1e-3)
    opt.step([w], [np.ones(1)])
    assert abs((1.0 - w[0]) - 1e-3) < 1e-9


def reference_adam_trace(w0, lr, wd, steps):
    """Independent arithmetic re-derivation of the update on f(w) = w^2 / 2."""
    b1, b2, eps = 0.9, 0.999, 1e-8
    w = w0
    m = v = 0.0
    trace = []
    for t in range(1, steps + 1):
        g = w + wd * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        w = w - lr * mh / (np.sqrt(vh) + eps)
        trace.append(w)
    return trace


def test_adam_matches_reference_trace_on_quadratic():
    w = np.array([0.7])
    opt = Adam([w], lr=0.05, weight_decay=0.01)
    got = []
    for _ in range(10):
        opt.step([w], [w.copy()])  # gradient of w^2/2 is w
        got.append(w[0])
    np.testing.assert_allclose(got, reference_adam_trace(0.7, 0.05, 0.01, 10), rtol=1e-12)


def test_adam_shape_mismatch():
    w = np.ones((2, 2))
    opt = Adam([w], lr=0.1)
    with pytest.raises(ShapeMismatch):
        opt.step([w], [np.ones(3)])
