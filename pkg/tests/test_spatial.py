"""Spatial processes: covariance, partials, simulation, likelihood, score."""

import math

import numpy as np
import pytest

from nlerkit.numerics import DomainError, cholesky
from nlerkit.spatial import (
    GpModel,
    GridSpec,
    StpModel,
    build_covariance,
    covariance_partials,
    gaussian_log_density,
    simulate_gp,
    simulate_stp,
    student_log_density,
)


def fd_score(model, x, theta, h=1e-6):
    d = len(theta)
    out = np.zeros(d)
    for k in range(d):
        tp, tm = theta.copy(), theta.copy()
        tp[k] += h
        tm[k] -= h
        out[k] = (model.log_likelihood(x, tp) - model.log_likelihood(x, tm)) / (2 * h)
    return out


def random_theta(space, rng):
    box = space.train_box()
    return box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random(space.dim)


# ---------------------------------------------------------------------------
# covariance and partials
# ---------------------------------------------------------------------------


def test_covariance_diagonal_is_variance_plus_nugget():
    grid = GridSpec(side=3)
    cov = build_covariance(grid, 1.0, 1.0, 0.5)
    np.testing.assert_allclose(np.diag(cov), 1.25, atol=0)


def test_covariance_isotropy_swap_symmetry():
    grid = GridSpec(side=4)
    cov = build_covariance(grid, 0.8, 0.8, 0.1)
    # swapping x/y coordinates of all points permutes indices by transposing
    # the row-major grid; an isotropic kernel is invariant under it
    idx = np.arange(16).reshape(4, 4).T.ravel()
    np.testing.assert_allclose(cov, cov[np.ix_(idx, idx)], atol=1e-15)


def test_covariance_unit_distance_entry():
    grid = GridSpec(side=2, extent=(0.0, 1.0))
    cov = build_covariance(grid, 1.0, 1.0, 0.0)
    # points 0 and 1 sit at (0,0) and (1,0): dx=1, dy=0
    assert abs(cov[0, 1] - math.exp(-1.0)) < 1e-15


def test_partials_diagonal_zero_for_length_scales():
    grid = GridSpec(side=3)
    d_lx, d_ly, _ = covariance_partials(grid, 0.9, 1.2, 0.2, include_eps=True)
    np.testing.assert_array_equal(np.diag(d_lx), 0.0)
    np.testing.assert_array_equal(np.diag(d_ly), 0.0)


def test_partials_nugget_worked_value():
    grid = GridSpec(side=3)
    _, _, d_eps = covariance_partials(grid, 1.0, 1.0, 0.1, include_eps=True)
    np.testing.assert_allclose(d_eps, 0.02 * np.eye(9), atol=1e-17)


def test_partials_match_finite_differences():
    grid = GridSpec(side=4)
    lx, ly, eps = 0.7, 1.3, 0.15
    h = 1e-6
    parts = covariance_partials(grid, lx, ly, eps, include_eps=True)
    raw = [lx, ly, eps]
    for k in range(3):
        args_p, args_m = raw.copy(), raw.copy()
        args_p[k] = math.exp(math.log(raw[k]) + h)
        args_m[k] = math.exp(math.log(raw[k]) - h)
        fd = (build_covariance(grid, *args_p) - build_covariance(grid, *args_m)) / (2 * h)
        assert np.max(np.abs(parts[k] - fd)) < 1e-6


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def test_simulate_gp_deterministic():
    grid = GridSpec(side=5)
    a = simulate_gp(grid, 1.0, 1.0, 0.1, np.random.default_rng(8))
    b = simulate_gp(grid, 1.0, 1.0, 0.1, np.random.default_rng(8))
    np.testing.assert_array_equal(a, b)
    assert a.shape == (25,)


def test_simulate_stp_deterministic_and_guarded():
    grid = GridSpec(side=4)
    a = simulate_stp(grid, 1.0, 1.0, 5.0, np.random.default_rng(9))
    b = simulate_stp(grid, 1.0, 1.0, 5.0, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(DomainError):
        simulate_stp(grid, 1.0, 1.0, 2.0, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# likelihoods
# ---------------------------------------------------------------------------


def test_gp_log_likelihood_zero_field():
    model = GpModel(GridSpec(side=4))
    theta = np.array([0.2, -0.1, -2.0])
    factor = model._factor(theta)
    from nlerkit.numerics import log_det

    expected = -0.5 * 16 * math.log(2 * math.pi) - 0.5 * log_det(factor)
    assert abs(model.log_likelihood(np.zeros(16), theta) - expected) < 1e-12


def test_gaussian_log_density_univariate():
    var = 1.0 + 0.3**2
    factor = cholesky(np.array([[var]]))
    expected = -0.5 * math.log(2 * math.pi * var) - 0.5 / var
    assert abs(gaussian_log_density(np.array([1.0]), factor) - expected) < 1e-14


def test_gp_log_likelihood_matches_explicit_inverse():
    model = GpModel(GridSpec(side=4))
    rng = np.random.default_rng(10)
    theta = random_theta(model.space, rng)
    x = rng.standard_normal(16)
    lx, ly, eps = np.exp(theta)
    cov = build_covariance(model.grid, lx, ly, eps)
    direct = (
        -0.5 * 16 * math.log(2 * math.pi)
        - 0.5 * math.log(np.linalg.det(cov))
        - 0.5 * x @ np.linalg.inv(cov) @ x
    )
    assert abs(model.log_likelihood(x, theta) - direct) < 1e-9


def test_student_log_density_univariate():
    nu = 6.0
    factor = cholesky(np.array([[1.0]]))
    x = 0.8
    expected = (
        math.lgamma((nu + 1) / 2)
        - math.lgamma(nu / 2)
        - 0.5 * math.log(math.pi * (nu - 2))
        - 0.5 * (nu + 1) * math.log1p(x * x / (nu - 2))
    )
    assert abs(student_log_density(np.array([x]), factor, nu) - expected) < 1e-14


def test_stp_approaches_gp_for_large_nu():
    grid = GridSpec(side=5)
    gp = GpModel(grid)
    stp = StpModel(grid)
    rng = np.random.default_rng(11)
    x = simulate_gp(grid, 1.0, 1.0, 0.0, rng)
    lx = ly = 0.0
    gp_val = gaussian_log_density(x, cholesky(build_covariance(grid, 1.0, 1.0, 0.0)))
    gaps = []
    for log_nu in (0.0, 1.5, 3.0):
        stp_val = stp.log_likelihood(x, np.array([lx, ly, log_nu]))
        gaps.append(abs(stp_val - gp_val))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.5
    _ = gp


def test_stp_log_likelihood_finite_and_guarded():
    model = StpModel(GridSpec(side=4))
    rng = np.random.default_rng(12)
    theta = random_theta(model.space, rng)
    x = model.simulate(theta, rng)
    assert math.isfinite(model.log_likelihood(x, theta))
    with pytest.raises(DomainError):
        student_log_density(x[:1], cholesky(np.eye(1)), 1.5)


def test_batch_log_likelihood_matches_scalar():
    for model in (GpModel(GridSpec(side=4)), StpModel(GridSpec(side=4))):
        rng = np.random.default_rng(13)
        theta = random_theta(model.space, rng)
        xs = np.array([model.simulate(theta, rng) for _ in range(5)])
        batch = model.log_likelihood_batch(xs, theta)
        singles = [model.log_likelihood(x, theta) for x in xs]
        np.testing.assert_allclose(batch, singles, rtol=1e-12)


def test_gp_density_integrates_to_one_small_grid():
    # importance check on S = 4: E_q[p/q] with q = N(0, c I)
    model = GpModel(GridSpec(side=2))
    theta = np.array([0.0, 0.0, -1.5])
    rng = np.random.default_rng(14)
    c = 2.0
    n = 200_000
    xs = rng.standard_normal((n, 4)) * math.sqrt(c)
    log_q = -0.5 * 4 * math.log(2 * math.pi * c) - 0.5 * (xs**2).sum(axis=1) / c
    log_p = model.log_likelihood_batch(xs, theta)
    est = np.exp(log_p - log_q).mean()
    assert abs(est - 1.0) < 0.05


# ---------------------------------------------------------------------------
# scores
# ---------------------------------------------------------------------------


def test_scores_match_finite_differences():
    rng = np.random.default_rng(15)
    for model in (GpModel(GridSpec(side=5)), StpModel(GridSpec(side=5))):
        for _ in range(8):
            theta = random_theta(model.space, rng)
            x = model.simulate(theta, rng)
            analytic = model.score(x, theta)
            fd = fd_score(model, x, theta)
            rel = np.max(np.abs(analytic - fd)) / max(np.max(np.abs(fd)), 1e-12)
            assert rel < 1e-5


def test_gp_score_zero_field_is_trace_term():
    model = GpModel(GridSpec(side=4))
    theta = np.array([0.1, -0.2, -2.0])
    lx, ly, eps = np.exp(theta)
    factor = model._factor(theta)
    from nlerkit.numerics import spd_solve

    parts = covariance_partials(model.grid, lx, ly, eps, include_eps=True)
    expected = [-0.5 * np.trace(spd_solve(factor, p)) for p in parts]
    np.testing.assert_allclose(model.score(np.zeros(16), theta), expected, atol=1e-12)


def test_gp_score_transpose_swaps_length_scales():
    side = 4
    model = GpModel(GridSpec(side=side))
    rng = np.random.default_rng(16)
    theta = np.array([0.3, 0.3, -1.8])  # isotropic
    x = model.simulate(theta, rng)
    xt = x.reshape(side, side).T.ravel()
    s = model.score(x, theta)
    st = model.score(xt, theta)
    assert abs(s[0] - st[1]) < 1e-9
    assert abs(s[1] - st[0]) < 1e-9
    assert abs(s[2] - st[2]) < 1e-9


def test_covariance_spd_across_training_box_on_25x25():
    model = GpModel(GridSpec(side=25))
    box = model.space.train_box()
    for corner in ([0, 0, 0], [1, 1, 1], [0, 1, 0], [1, 0, 1]):
        theta = box[np.arange(3), corner]
        cholesky(build_covariance(model.grid, *np.exp(theta)))  # must not raise
