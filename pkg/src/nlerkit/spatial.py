"""Anisotropic Gaussian and Student-t spatial processes on a regular grid.

The covariance kernel is exponential with separate length scales per axis,

    cov(s, s') = sigma^2 * exp(-sqrt(dx^2 / lx^2 + dy^2 / ly^2)),

plus an optional nugget eps^2 on the diagonal; sigma^2 is fixed at 1. Fields
are stored row-major over the grid (first axis y/rows, second axis x/cols)
and flattened to length S = side^2 vectors.

The Student-t process scales a Gaussian field by sqrt((nu - 2) / R) with
R ~ chi^2_nu, which keeps the field covariance equal to the kernel matrix
and requires nu > 2.

Scores are analytic in working coordinates (log lx, log ly, log eps) for the
GP and (log lx, log ly, log(nu - 2)) for the STP. Traces tr(Sigma^-1 dSigma)
use triangular solves against the partial's columns, never an explicit
inverse.
"""

import math
from dataclasses import dataclass

import numpy as np

from .numerics import DomainError, cholesky, digamma, log_det, spd_solve
from .params import gp_space, stp_space

SIGMA2 = 1.0


@dataclass(frozen=True)
class GridSpec:
    side: int
    extent: tuple = (-3.0, 3.0)

    def __post_init__(self):
        if self.side < 2:
            raise ValueError("grid needs at least 2 points per axis")

    @property
    def n_points(self):
        return self.side * self.side

    def locations(self):
        """[S, 2] coordinates, row-major: point i*side + j sits at (x_j, y_i)."""
        axis = np.linspace(self.extent[0], self.extent[1], self.side)
        xx, yy = np.meshgrid(axis, axis)
        return np.column_stack([xx.ravel(), yy.ravel()])


def _scaled_distance(grid, lx, ly):
    loc = grid.locations()
    dx = loc[:, 0][:, None] - loc[:, 0][None, :]
    dy = loc[:, 1][:, None] - loc[:, 1][None, :]
    return dx, dy, np.sqrt((dx / lx) ** 2 + (dy / ly) ** 2)


def build_covariance(grid, lx, ly, eps):
    """Kernel matrix Sigma(l_x, l_y, eps), symmetric by construction."""
    _, _, r = _scaled_distance(grid, lx, ly)
    cov = SIGMA2 * np.exp(-r)
    cov[np.diag_indices_from(cov)] += eps * eps
    return cov


def covariance_partials(grid, lx, ly, eps, include_eps):
    """dSigma/d(working coordinate) for log lx, log ly and optionally log eps.

    For the length scales, d/d(log lx) = sigma^2 e^{-r} (dx^2/lx^2) / r with
    the r = 0 diagonal set to zero; the nugget derivative is 2 eps^2 I.
    """
    dx, dy, r = _scaled_distance(grid, lx, ly)
    decay = SIGMA2 * np.exp(-r)
    with np.errstate(invalid="ignore", divide="ignore"):
        d_lx = decay * (dx / lx) ** 2 / r
        d_ly = decay * (dy / ly) ** 2 / r
    d_lx[r == 0] = 0.0
    d_ly[r == 0] = 0.0
    parts = [d_lx, d_ly]
    if include_eps:
        parts.append(2.0 * eps * eps * np.eye(grid.n_points))
    return parts


def simulate_gp(grid, lx, ly, eps, rng):
    factor = cholesky(build_covariance(grid, lx, ly, eps))
    return factor.lower @ rng.standard_normal(grid.n_points)


def simulate_stp(grid, lx, ly, nu, rng):
    if nu <= 2.0:
        raise DomainError(f"STP requires nu > 2, got {nu}")
    z = simulate_gp(grid, lx, ly, 0.0, rng)
    r = rng.chisquare(nu)
    return z * math.sqrt((nu - 2.0) / r)


def gaussian_log_density(x, factor):
    """Zero-mean multivariate normal log density from a Cholesky factor."""
    x = np.asarray(x, dtype=np.float64)
    s = factor.dim
    quad = float(x @ spd_solve(factor, x))
    return -0.5 * s * math.log(2.0 * math.pi) - 0.5 * log_det(factor) - 0.5 * quad


def student_log_density(x, factor, nu):
    """Variance-normalized multivariate Student-t log density, nu > 2."""
    if nu <= 2.0:
        raise DomainError(f"STP requires nu > 2, got {nu}")
    x = np.asarray(x, dtype=np.float64)
    s = factor.dim
    quad = float(x @ spd_solve(factor, x))
    return (
        math.lgamma((nu + s) / 2.0)
        - math.lgamma(nu / 2.0)
        - 0.5 * s * math.log(math.pi * (nu - 2.0))
        - 0.5 * log_det(factor)
        - 0.5 * (nu + s) * math.log1p(quad / (nu - 2.0))
    )


def _trace_solve(factor, mat):
    return float(np.trace(spd_solve(factor, mat)))


class GpModel:
    """Gaussian process with nugget; working theta = (log lx, log ly, log eps)."""

    case = "gp"

    def __init__(self, grid=None):
        self.grid = grid if grid is not None else GridSpec(side=25)
        self.space = gp_space()
        self.theta_dim = 3

    @property
    def input_shape(self):
        return (1, self.grid.side, self.grid.side)

    def _raw(self, theta_w):
        return math.exp(theta_w[0]), math.exp(theta_w[1]), math.exp(theta_w[2])

    def _factor(self, theta_w):
        lx, ly, eps = self._raw(theta_w)
        return cholesky(build_covariance(self.grid, lx, ly, eps))

    def simulate(self, theta_w, rng):
        lx, ly, eps = self._raw(theta_w)
        return simulate_gp(self.grid, lx, ly, eps, rng)

    def log_likelihood(self, x, theta_w):
        return gaussian_log_density(x, self._factor(theta_w))

    def log_likelihood_batch(self, xs, theta_w):
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        factor = self._factor(theta_w)
        s = factor.dim
        alpha = spd_solve(factor, xs.T)
        quads = np.einsum("is,si->i", xs, alpha)
        return -0.5 * s * math.log(2.0 * math.pi) - 0.5 * log_det(factor) - 0.5 * quads

    def score(self, x, theta_w):
        """Per working coordinate: 0.5 x'S^-1 dS S^-1 x - 0.5 tr(S^-1 dS)."""
        lx, ly, eps = self._raw(theta_w)
        factor = self._factor(theta_w)
        alpha = spd_solve(factor, np.asarray(x, dtype=np.float64))
        parts = covariance_partials(self.grid, lx, ly, eps, include_eps=True)
        out = np.empty(3)
        for k, dcov in enumerate(parts):
            quad = float(alpha @ dcov @ alpha)
            out[k] = 0.5 * quad - 0.5 * _trace_solve(factor, dcov)
        return out

    def encode(self, xs):
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        return xs.reshape(xs.shape[0], 1, self.grid.side, self.grid.side)


class StpModel:
    """Student-t process, eps fixed at 0; working theta = (log lx, log ly, log(nu-2))."""

    case = "stp"

    def __init__(self, grid=None):
        self.grid = grid if grid is not None else GridSpec(side=25)
        self.space = stp_space()
        self.theta_dim = 3

    @property
    def input_shape(self):
        return (1, self.grid.side, self.grid.side)

    def _raw(self, theta_w):
        return math.exp(theta_w[0]), math.exp(theta_w[1]), 2.0 + math.exp(theta_w[2])

    def _factor(self, theta_w):
        lx, ly, _ = self._raw(theta_w)
        return cholesky(build_covariance(self.grid, lx, ly, 0.0))

    def simulate(self, theta_w, rng):
        lx, ly, nu = self._raw(theta_w)
        return simulate_stp(self.grid, lx, ly, nu, rng)

    def log_likelihood(self, x, theta_w):
        _, _, nu = self._raw(theta_w)
        return student_log_density(x, self._factor(theta_w), nu)

    def log_likelihood_batch(self, xs, theta_w):
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        _, _, nu = self._raw(theta_w)
        factor = self._factor(theta_w)
        s = factor.dim
        alpha = spd_solve(factor, xs.T)
        quads = np.einsum("is,si->i", xs, alpha)
        const = (
            math.lgamma((nu + s) / 2.0)
            - math.lgamma(nu / 2.0)
            - 0.5 * s * math.log(math.pi * (nu - 2.0))
            - 0.5 * log_det(factor)
        )
        return const - 0.5 * (nu + s) * np.log1p(quads / (nu - 2.0))

    def score(self, x, theta_w):
        """Analytic gradient of the STP log density in working coordinates.

        Length scales follow the GP pattern with the quadratic term damped by
        (nu - 2 + q); the nu coordinate collects digamma terms plus the chain
        rule factor d nu / d log(nu - 2) = nu - 2.
        """
        lx, ly, nu = self._raw(theta_w)
        factor = self._factor(theta_w)
        x = np.asarray(x, dtype=np.float64)
        s = factor.dim
        alpha = spd_solve(factor, x)
        quad = float(x @ alpha)
        parts = covariance_partials(self.grid, lx, ly, 0.0, include_eps=False)
        out = np.empty(3)
        damp = (nu + s) / (2.0 * (nu - 2.0 + quad))
        for k, dcov in enumerate(parts):
            dq = float(alpha @ dcov @ alpha)
            out[k] = damp * dq - 0.5 * _trace_solve(factor, dcov)
        dlog_dnu = (
            0.5 * digamma((nu + s) / 2.0)
            - 0.5 * digamma(nu / 2.0)
            - 0.5 * s / (nu - 2.0)
            - 0.5 * math.log1p(quad / (nu - 2.0))
            + 0.5 * (nu + s) * quad / ((nu - 2.0) * (nu - 2.0 + quad))
        )
        out[2] = dlog_dnu * (nu - 2.0)
        return out

    def encode(self, xs):
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        return xs.reshape(xs.shape[0], 1, self.grid.side, self.grid.side)
