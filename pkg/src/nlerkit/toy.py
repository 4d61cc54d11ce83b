"""1D Gaussian location model, x ~ N(theta, 1) with theta uniform on [-2, 2].

Verification harness only: every quantity (likelihood, score, evidence,
log ratio) has a closed or quadrature form, so trained ratio models can be
compared against exact answers.
"""

import math

import numpy as np

from .params import toy_space

_LOG_2PI = math.log(2.0 * math.pi)


class ToyModel:
    case = "toy"

    def __init__(self):
        self.space = toy_space()
        self.theta_dim = 1

    @property
    def input_shape(self):
        return (1,)

    def simulate(self, theta_w, rng):
        return np.array([theta_w[0] + rng.standard_normal()])

    def log_likelihood(self, x, theta_w):
        x = np.asarray(x, dtype=np.float64).ravel()
        return float(-0.5 * (x[0] - theta_w[0]) ** 2 - 0.5 * _LOG_2PI)

    def log_likelihood_batch(self, xs, theta_w):
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        return -0.5 * (xs[:, 0] - theta_w[0]) ** 2 - 0.5 * _LOG_2PI

    def score(self, x, theta_w):
        x = np.asarray(x, dtype=np.float64).ravel()
        return np.array([x[0] - theta_w[0]])

    def encode(self, xs):
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim == 1:
            xs = xs[:, None]
        return xs

    def log_evidence(self, x, n_quad=4001):
        """log p(x) with theta marginalized over the uniform design, by quadrature."""
        x = np.asarray(x, dtype=np.float64).ravel()[0]
        lo, hi = self.space.bounds[0]
        grid = np.linspace(lo, hi, n_quad)
        dens = np.exp(-0.5 * (x - grid) ** 2) / math.sqrt(2.0 * math.pi)
        return math.log(np.trapezoid(dens, grid) / (hi - lo))

    def log_ratio(self, x, theta_w):
        """Exact log likelihood-to-evidence ratio, the Bayes-optimal logit."""
        return self.log_likelihood(x, theta_w) - self.log_evidence(x)
