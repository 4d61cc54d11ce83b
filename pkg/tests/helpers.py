"""Shared oracles for the test suite."""

import numpy as np


def fd_model_score(model, x, theta_w, h=1e-6):
    """Central finite difference of a model's exact log-likelihood."""
    d = len(theta_w)
    out = np.zeros(d)
    for k in range(d):
        tp, tm = theta_w.copy(), theta_w.copy()
        tp[k] += h
        tm[k] -= h
        out[k] = (model.log_likelihood(x, tp) - model.log_likelihood(x, tm)) / (2 * h)
    return out


def numeric_weight_gradient(model, x, theta, upstream, n_probe, rng, h=1e-6):
    """Central-difference gradient of sum(upstream * logits) wrt sampled weights."""
    params = model.params()
    total = sum(p.size for p in params)
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


def max_weight_grad_rel_error(model, x, theta, rng, n_probe=25):
    upstream = rng.standard_normal(x.shape[0])
    model.forward(x, theta)
    model.backward(upstream)
    gvec = model.grad_vector()
    numeric = numeric_weight_gradient(model, x, theta, upstream, n_probe, rng)
    scale = max(np.max(np.abs(list(numeric.values()))), 1e-8)
    worst = 0.0
    for idx, fd in numeric.items():
        worst = max(worst, abs(gvec[idx] - fd) / max(abs(fd), 1e-3 * scale))
    return worst


def draw_theta(space, rng, box=None):
    box = space.train_box() if box is None else box
    return box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random(space.dim)
