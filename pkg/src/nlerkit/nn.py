"""Minimal neural-network engine with manual forward/backward.

Only what the ratio estimators need: dense layers (applied to the trailing
axis, so the same layer acts per time step on sequence input), 1D/2D valid
convolutions, 2x2 average pooling, SiLU/ReLU activations, a time/channel
transpose, flatten, and a layer that concatenates the working parameter
vector into the feature stream. Everything is float64 and batch-first.

``backward`` replaces (not accumulates) per-layer weight gradients, so a
cached forward pass can be differentiated several times with different
upstream gradients - the training loop uses this to split BCE and score
gradients when refreshing the adaptive loss weight.

Architectures follow the case-study tables: the SIS network embeds each
observed node-state vector with a small dense stack, transposes to channels,
and applies three kernel-5 1D convolutions; the spatial networks apply
kernel-3 2D convolution blocks with ReLU and average pooling. All dense
hidden activations are SiLU, and the final layer is linear with a single
logit output.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .kernels import avgpool2d_backward, avgpool2d_forward


class ShapeMismatch(Exception):
    pass


class NoCachedForward(Exception):
    pass


class UnknownSizeLabel(Exception):
    pass


def _uniform_init(rng, shape, fan_in, fan_out, style):
    if style == "he":
        limit = math.sqrt(6.0 / fan_in)
    else:  # xavier
        limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base: parameter-free, shape-preserving."""

    def params(self):
        return []

    def grads(self):
        return []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, gy):
        raise NotImplementedError

    def _require_cache(self):
        if getattr(self, "_cache", None) is None:
            raise NoCachedForward(f"{type(self).__name__}.backward called before forward")


class Dense(Layer):
    """Affine map on the trailing axis; acts per time step on [B, T, F] input."""

    def __init__(self, fan_in, fan_out, rng, init="xavier"):
        self.w = _uniform_init(rng, (fan_in, fan_out), fan_in, fan_out, init)
        self.b = np.zeros(fan_out)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._cache = None

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.gw, self.gb]

    def forward(self, x):
        if x.shape[-1] != self.w.shape[0]:
            raise ShapeMismatch(f"dense expects trailing dim {self.w.shape[0]}, got {x.shape}")
        lead = x.shape[:-1]
        x2 = np.ascontiguousarray(x.reshape(-1, x.shape[-1]))
        self._cache = (x2, lead)
        y2 = kernels.dense_forward(x2, self.w, self.b)
        return y2.reshape(*lead, self.w.shape[1])

    def backward(self, gy):
        self._require_cache()
        x2, lead = self._cache
        gy2 = np.ascontiguousarray(gy.reshape(-1, self.w.shape[1]))
        gx2, self.gw, self.gb = kernels.dense_backward(x2, self.w, gy2)
        return gx2.reshape(*lead, self.w.shape[0])


class Conv1d(Layer):
    def __init__(self, cin, cout, ksize, rng, init="xavier"):
        fan_in = cin * ksize
        fan_out = cout * ksize
        self.w = _uniform_init(rng, (cout, cin, ksize), fan_in, fan_out, init)
        self.b = np.zeros(cout)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._cache = None

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.gw, self.gb]

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.w.shape[1]:
            raise ShapeMismatch(f"conv1d expects [B, {self.w.shape[1]}, L], got {x.shape}")
        if x.shape[2] < self.w.shape[2]:
            raise ShapeMismatch("conv1d input shorter than kernel")
        x = np.ascontiguousarray(x)
        self._cache = x
        return kernels.conv1d_forward(x, self.w, self.b)

    def backward(self, gy):
        self._require_cache()
        gx, self.gw, self.gb = kernels.conv1d_backward(
            self._cache, self.w, np.ascontiguousarray(gy)
        )
        return gx


class Conv2d(Layer):
    def __init__(self, cin, cout, ksize, rng, init="he"):
        fan_in = cin * ksize * ksize
        fan_out = cout * ksize * ksize
        self.w = _uniform_init(rng, (cout, cin, ksize, ksize), fan_in, fan_out, init)
        self.b = np.zeros(cout)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._cache = None

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.gw, self.gb]

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.w.shape[1]:
            raise ShapeMismatch(f"conv2d expects [B, {self.w.shape[1]}, H, W], got {x.shape}")
        if x.shape[2] < self.w.shape[2] or x.shape[3] < self.w.shape[3]:
            raise ShapeMismatch("conv2d input smaller than kernel")
        x = np.ascontiguousarray(x)
        self._cache = x
        return kernels.conv2d_forward(x, self.w, self.b)

    def backward(self, gy):
        self._require_cache()
        gx, self.gw, self.gb = kernels.conv2d_backward(
            self._cache, self.w, np.ascontiguousarray(gy)
        )
        return gx


class AvgPool2d(Layer):
    """2x2 pooling, stride 2; odd trailing rows/cols are dropped (floor)."""

    def __init__(self):
        self._cache = None

    def forward(self, x):
        self._cache = x.shape
        return avgpool2d_forward(x)

    def backward(self, gy):
        self._require_cache()
        return avgpool2d_backward(self._cache, gy)


class SiLU(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x):
        sig = 1.0 / (1.0 + np.exp(-x))
        self._cache = (x, sig)
        return x * sig

    def backward(self, gy):
        self._require_cache()
        x, sig = self._cache
        return gy * sig * (1.0 + x * (1.0 - sig))


class ReLU(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, gy):
        self._require_cache()
        return np.where(self._cache, gy, 0.0)


class TransposeTimeChannel(Layer):
    """[B, T, C] <-> [B, C, T]."""

    def __init__(self):
        self._cache = None

    def forward(self, x):
        if x.ndim != 3:
            raise ShapeMismatch(f"transpose expects rank-3 input, got {x.shape}")
        self._cache = True
        return np.ascontiguousarray(np.swapaxes(x, 1, 2))

    def backward(self, gy):
        self._require_cache()
        return np.ascontiguousarray(np.swapaxes(gy, 1, 2))


class Flatten(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, gy):
        self._require_cache()
        return gy.reshape(self._cache)


class ConcatTheta(Layer):
    """Append the working parameter vector to the flat feature vector.

    backward() stores the gradient with respect to theta on the layer
    (``gtheta``), which is how exact input-parameter gradients reach the
    finite-difference calibration.
    """

    def __init__(self, theta_dim):
        self.theta_dim = theta_dim
        self.gtheta = None
        self._cache = None

    def forward(self, x, theta):
        if theta.ndim != 2 or theta.shape != (x.shape[0], self.theta_dim):
            raise ShapeMismatch(
                f"theta must be [batch, {self.theta_dim}], got {theta.shape} for batch {x.shape[0]}"
            )
        self._cache = x.shape[1]
        return np.concatenate([x, theta], axis=1)

    def backward(self, gy):
        self._require_cache()
        nfeat = self._cache
        self.gtheta = gy[:, nfeat:].copy()
        return gy[:, :nfeat]


@dataclass
class RatioModel:
    """Layer stack producing one unnormalized logit per (x, theta) example."""

    layers: list
    theta_dim: int
    input_shape: tuple
    case: str
    size_label: str
    scale: dict = field(default_factory=dict)

    def forward(self, x, theta):
        x = np.asarray(x, dtype=np.float64)
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        if x.shape[1:] != tuple(self.input_shape):
            raise ShapeMismatch(f"expected input shape {self.input_shape}, got {x.shape[1:]}")
        for layer in self.layers:
            if isinstance(layer, ConcatTheta):
                x = layer.forward(x, theta)
            else:
                x = layer.forward(x)
        return x.ravel()

    def backward(self, glogits):
        g = np.asarray(glogits, dtype=np.float64).reshape(-1, 1)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def grads(self):
        out = []
        for layer in self.layers:
            out.extend(layer.grads())
        return out

    def grad_vector(self):
        return np.concatenate([g.ravel() for g in self.grads()])

    def num_params(self):
        return sum(p.size for p in self.params())

    def get_weights(self):
        return [p.copy() for p in self.params()]

    def set_weights(self, weights):
        params = self.params()
        if len(weights) != len(params):
            raise ShapeMismatch("weight list length mismatch")
        for p, w in zip(params, weights):
            if p.shape != w.shape:
                raise ShapeMismatch(f"weight shape {w.shape} != parameter shape {p.shape}")
            p[...] = w

    def theta_gradient(self):
        for layer in self.layers:
            if isinstance(layer, ConcatTheta):
                if layer.gtheta is None:
                    raise NoCachedForward("no backward pass has reached the theta input")
                return layer.gtheta
        raise ShapeMismatch("model has no ConcatTheta layer")

    def _split(self):
        for i, layer in enumerate(self.layers):
            if isinstance(layer, ConcatTheta):
                return self.layers[:i], self.layers[i:]
        raise ShapeMismatch("model has no ConcatTheta layer")

    def forward_fanout(self, x, theta_stack, copies):
        """Forward for `copies` theta variants sharing one observation batch.

        The feature trunk (everything before the theta concatenation) runs
        once on the B observations; only the dense head sees the stacked
        copies. Exactly equivalent to forward(tile(x, copies), theta_stack)
        because the trunk is a fixed function of x alone.
        """
        x = np.asarray(x, dtype=np.float64)
        theta_stack = np.atleast_2d(np.asarray(theta_stack, dtype=np.float64))
        if x.shape[1:] != tuple(self.input_shape):
            raise ShapeMismatch(f"expected input shape {self.input_shape}, got {x.shape[1:]}")
        if theta_stack.shape[0] != copies * x.shape[0]:
            raise ShapeMismatch(
                f"theta stack has {theta_stack.shape[0]} rows, expected {copies} x {x.shape[0]}"
            )
        trunk, head = self._split()
        feats = x
        for layer in trunk:
            feats = layer.forward(feats)
        self._fanout = (copies, x.shape[0])
        h = np.concatenate([feats] * copies, axis=0)
        for layer in head:
            if isinstance(layer, ConcatTheta):
                h = layer.forward(h, theta_stack)
            else:
                h = layer.forward(h)
        return h.ravel()

    def backward_fanout(self, glogits):
        """Backward matching forward_fanout: head copies' feature gradients
        are summed per observation before entering the trunk."""
        copies, b = getattr(self, "_fanout", (None, None))
        if copies is None:
            raise NoCachedForward("backward_fanout called before forward_fanout")
        trunk, head = self._split()
        g = np.asarray(glogits, dtype=np.float64).reshape(-1, 1)
        for layer in reversed(head):
            g = layer.backward(g)
        g = g.reshape(copies, b, -1).sum(axis=0)
        for layer in reversed(trunk):
            g = layer.backward(g)
        return g


def theta_input_gradient(model, x, theta):
    """Exact gradient of the logit with respect to each example's theta input."""
    logits = model.forward(x, theta)
    model.backward(np.ones_like(logits))
    return model.theta_gradient()


# ---------------------------------------------------------------------------
# architecture tables: (case, size label) -> layer widths
# ---------------------------------------------------------------------------

SIS_ARCHITECTURES = {
    "3K": ([16, 8], [8, 12, 16], [30, 12]),
    "10K": ([32, 16], [16, 24, 24], [52, 32]),
    "30K": ([64, 32], [32, 32, 48], [64, 64, 32]),
    "100K": ([64, 64], [64, 64, 96], [128, 64, 32]),
}

SPATIAL_ARCHITECTURES = {
    "30K": ([40, 40, 32], [48, 32]),
    "100K": ([80, 80, 44], [64, 64, 32]),
    "300K": ([128, 128, 108], [128, 80, 64]),
    "1M": ([256, 256, 136], [256, 176, 96]),
}

TOY_ARCHITECTURES = {
    "toy": [64, 64, 32],
}

NOMINAL_COUNTS = {"3K": 3_000, "10K": 10_000, "30K": 30_000, "100K": 100_000, "300K": 300_000, "1M": 1_000_000}

CONV1D_KERNEL = 5
CONV2D_KERNEL = 3


def _layer_rngs(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _dense_stack(widths, fan_in, rngs, rng_offset):
    layers = []
    prev = fan_in
    idx = rng_offset
    for width in widths:
        layers.append(Dense(prev, width, rngs[idx]))
        layers.append(SiLU())
        prev = width
        idx += 1
    layers.append(Dense(prev, 1, rngs[idx]))
    return layers, idx + 1


def build_architecture(case, size_label, *, input_shape, theta_dim, seed=0, conv_blocks=3):
    """Construct the ratio network for a case study.

    conv_blocks applies to the spatial cases only; small grids need two
    blocks because a third convolution would exhaust the spatial extent.
    Pooling is skipped whenever it would floor the extent to zero.
    """
    case = case.lower()
    rngs = _layer_rngs(seed, 64)
    if case == "sis":
        if size_label not in SIS_ARCHITECTURES:
            raise UnknownSizeLabel(f"no SIS architecture for size {size_label!r}")
        embed, channels, hidden = SIS_ARCHITECTURES[size_label]
        t_len, k_nodes = input_shape
        layers = []
        idx = 0
        prev = k_nodes
        for width in embed:
            layers.append(Dense(prev, width, rngs[idx]))
            layers.append(SiLU())
            prev = width
            idx += 1
        layers.append(TransposeTimeChannel())
        length = t_len
        for ch in channels:
            layers.append(Conv1d(prev, ch, CONV1D_KERNEL, rngs[idx]))
            layers.append(SiLU())
            prev = ch
            idx += 1
            length -= CONV1D_KERNEL - 1
            if length < 1:
                raise ShapeMismatch(f"sequence length exhausted, T={t_len} too short")
        layers.append(Flatten())
        layers.append(ConcatTheta(theta_dim))
        stack, idx = _dense_stack(hidden, prev * length + theta_dim, rngs, idx)
        layers.extend(stack)
    elif case in ("gp", "stp"):
        if size_label not in SPATIAL_ARCHITECTURES:
            raise UnknownSizeLabel(f"no spatial architecture for size {size_label!r}")
        channels, hidden = SPATIAL_ARCHITECTURES[size_label]
        channels = channels[:conv_blocks]
        _, height, width = input_shape
        layers = []
        idx = 0
        prev = input_shape[0]
        for ch in channels:
            layers.append(Conv2d(prev, ch, CONV2D_KERNEL, rngs[idx], init="he"))
            layers.append(ReLU())
            prev = ch
            idx += 1
            height -= CONV2D_KERNEL - 1
            width -= CONV2D_KERNEL - 1
            if height < 1 or width < 1:
                raise ShapeMismatch(f"spatial extent exhausted for grid {input_shape}")
            if height >= 2 and width >= 2:
                layers.append(AvgPool2d())
                height //= 2
                width //= 2
        layers.append(Flatten())
        layers.append(ConcatTheta(theta_dim))
        stack, idx = _dense_stack(hidden, prev * height * width + theta_dim, rngs, idx)
        layers.extend(stack)
    elif case == "toy":
        if size_label not in TOY_ARCHITECTURES:
            raise UnknownSizeLabel(f"no toy architecture for size {size_label!r}")
        hidden = TOY_ARCHITECTURES[size_label]
        layers = [Flatten(), ConcatTheta(theta_dim)]
        stack, _ = _dense_stack(hidden, input_shape[0] + theta_dim, rngs, 0)
        layers.extend(stack)
    else:
        raise UnknownSizeLabel(f"unknown case {case!r}")
    return RatioModel(
        layers=layers,
        theta_dim=theta_dim,
        input_shape=tuple(input_shape),
        case=case,
        size_label=size_label,
        scale={"conv_blocks": conv_blocks} if case in ("gp", "stp") else {},
    )


# ---------------------------------------------------------------------------
# Adam with classic L2 weight decay (decay added to the gradient)
# ---------------------------------------------------------------------------


class Adam:
    def __init__(self, params, lr=1e-3, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        if len(params) != len(self.m) or len(grads) != len(params):
            raise ShapeMismatch("optimizer state does not match parameter list")
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ShapeMismatch(f"gradient shape {g.shape} != parameter shape {p.shape}")
            geff = g + self.weight_decay * p
            m *= self.beta1
            m += (1.0 - self.beta1) * geff
            v *= self.beta2
            v += (1.0 - self.beta2) * geff * geff
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
