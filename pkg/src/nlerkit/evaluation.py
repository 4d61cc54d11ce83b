"""Two-stage evaluation: loss metrics and downstream likelihood-based inference.

The L-test set holds (x, theta) pairs with theta uniform over the base
parameter box; it yields classifier BCE (with a fixed, seeded permutation
for the Y=0 class) and per-coordinate score MSE. The E-test set holds a
~100-point theta grid inside the margin-shrunk box with 30 groups of 10 iid
observations each; it feeds maximum likelihood estimation, likelihood-ratio
test statistics, and Wilks confidence sets.

Both a trained ratio network and the exact likelihood run through the same
code path: an evaluator only has to provide per-observation log scores
(logits or exact log densities) and score estimates. Log scores entering
these routines matter only up to a shared additive constant, so ratio
logits are valid likelihood surrogates throughout.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .numerics import chi2_quantile
from .training import FdConfig, bce_loss, calibrate_epsilon, fd_score_estimate

MLE_GRID_POINTS = {1: 200, 2: 50, 3: 20}
WILKS_GRID_POINTS = {1: 200, 2: 40, 3: 20}
NM_MAX_ITER = 200
NM_SIMPLEX_SCALE = 0.02


# ---------------------------------------------------------------------------
# evaluators
# ---------------------------------------------------------------------------


class GroundTruthEvaluator:
    """Exact log-likelihood and exact score from the simulator model."""

    name = "gt"

    def __init__(self, spm):
        self.spm = spm

    def log_scores(self, xs, theta):
        return np.asarray(self.spm.log_likelihood_batch(xs, theta), dtype=np.float64)

    def group_log_score(self, group_xs, theta):
        return float(self.log_scores(group_xs, theta).sum())

    def score_estimates(self, xs, thetas):
        return np.array([self.spm.score(x, t) for x, t in zip(xs, thetas)])


class NlerEvaluator:
    """Trained ratio network; logits serve as log scores, FD as score estimates."""

    name = "nler"

    def __init__(self, model, spm, fd=None, chunk=8192):
        self.model = model
        self.spm = spm
        self.fd = fd
        self.chunk = chunk

    def log_scores(self, xs, theta):
        x_enc = self.spm.encode(np.asarray(xs))
        n = x_enc.shape[0]
        theta_rep = np.broadcast_to(np.asarray(theta, dtype=np.float64), (n, len(theta)))
        out = np.empty(n)
        for lo in range(0, n, self.chunk):
            hi = min(lo + self.chunk, n)
            out[lo:hi] = self.model.forward(x_enc[lo:hi], theta_rep[lo:hi])
        return out

    def group_log_score(self, group_xs, theta):
        return float(self.log_scores(group_xs, theta).sum())

    def calibrate(self, xs, thetas, batch=64):
        """Fix FD perturbations against exact input gradients on this data."""
        x_enc = self.spm.encode(np.asarray(xs))

        def batches():
            for lo in range(0, x_enc.shape[0], batch):
                hi = min(lo + batch, x_enc.shape[0])
                yield x_enc[lo:hi], thetas[lo:hi]

        self.fd = calibrate_epsilon(self.model, batches(), dim=thetas.shape[1])
        return self.fd

    def score_estimates(self, xs, thetas):
        if self.fd is None:
            raise ValueError("calibrate() must run before score estimates")
        x_enc = self.spm.encode(np.asarray(xs))
        n = x_enc.shape[0]
        out = np.empty((n, thetas.shape[1]))
        for lo in range(0, n, self.chunk):
            hi = min(lo + self.chunk, n)
            out[lo:hi] = fd_score_estimate(self.model, x_enc[lo:hi], thetas[lo:hi], self.fd)
        return out


# ---------------------------------------------------------------------------
# L-test
# ---------------------------------------------------------------------------


@dataclass
class LTestSet:
    xs: np.ndarray
    thetas: np.ndarray
    scores: np.ndarray
    seed: int


def build_ltest(model, m, seed):
    """theta uniform over the base box (no margins), one simulation per theta."""
    box = model.space.base_box()
    ss = np.random.SeedSequence(seed)
    ss_theta, ss_sim = ss.spawn(2)
    rng = np.random.default_rng(ss_theta)
    thetas = box[:, 0] + rng.random((m, model.theta_dim)) * (box[:, 1] - box[:, 0])
    sim_children = ss_sim.spawn(m)
    xs = []
    scores = np.zeros((m, model.theta_dim))
    for i in range(m):
        x = model.simulate(thetas[i], np.random.default_rng(sim_children[i]))
        xs.append(x)
        scores[i] = model.score(x, thetas[i])
    return LTestSet(xs=np.asarray(xs), thetas=thetas, scores=scores, seed=seed)


def ltest_metrics(evaluator, ltest):
    """(BCE, per-coordinate score MSE) on the L-test set.

    BCE reuses the training construction with one fixed permutation derived
    from the set seed; score MSE is unweighted so runs are comparable.
    """
    n = ltest.thetas.shape[0]
    perm = np.random.default_rng(np.random.SeedSequence([ltest.seed, 1])).integers(0, n, size=n)
    logits1 = np.empty(n)
    logits0 = np.empty(n)
    for lo in range(0, n, 8192):
        hi = min(lo + 8192, n)
        idx = np.arange(lo, hi)
        xs = ltest.xs[idx]
        logits1[lo:hi] = _per_obs_scores(evaluator, xs, ltest.thetas[idx])
        logits0[lo:hi] = _per_obs_scores(evaluator, xs, ltest.thetas[perm[idx]])
    bce = (
        bce_loss(logits1, np.ones(n), "sum") + bce_loss(logits0, np.zeros(n), "sum")
    ) / (2.0 * n)
    estimates = evaluator.score_estimates(ltest.xs, ltest.thetas)
    score_mse = ((estimates - ltest.scores) ** 2).mean(axis=0)
    return bce, score_mse


def _per_obs_scores(evaluator, xs, thetas):
    """Log score of each (x_i, theta_i) pair, thetas varying per row."""
    if isinstance(evaluator, NlerEvaluator):
        x_enc = evaluator.spm.encode(np.asarray(xs))
        return evaluator.model.forward(x_enc, thetas)
    return np.array([evaluator.log_scores(x[None], t)[0] for x, t in zip(xs, thetas)])


# ---------------------------------------------------------------------------
# E-test
# ---------------------------------------------------------------------------


@dataclass
class ETestSet:
    grid_thetas: np.ndarray  # [G, d]
    xs: np.ndarray  # [G, n_groups, group_size, ...obs dims]
    seed: int

    @property
    def n_groups(self):
        return self.xs.shape[1]

    @property
    def group_size(self):
        return self.xs.shape[2]


def etest_theta_grid(space, target=100):
    """ceil(target^(1/d)) evenly spaced values per dimension over the shrunk box."""
    box = space.etest_box()
    d = space.dim
    per_dim = math.ceil(target ** (1.0 / d) - 1e-9)
    axes = [np.linspace(box[k, 0], box[k, 1], per_dim) for k in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def build_etest(model, seed, n_groups=30, group_size=10, target_grid=100):
    grid = etest_theta_grid(model.space, target_grid)
    ss_children = np.random.SeedSequence(seed).spawn(grid.shape[0] * n_groups * group_size)
    xs = []
    c = 0
    for theta in grid:
        groups = []
        for _ in range(n_groups):
            group = []
            for _ in range(group_size):
                group.append(model.simulate(theta, np.random.default_rng(ss_children[c])))
                c += 1
            groups.append(group)
        xs.append(groups)
    return ETestSet(grid_thetas=grid, xs=np.asarray(xs), seed=seed)


def centered_grid(box, points_per_dim):
    """Cell-center grid: points [P, d] ordered nearest-to-center first, cell sizes [d]."""
    d = box.shape[0]
    widths = box[:, 1] - box[:, 0]
    spacing = widths / points_per_dim
    axes = [box[k, 0] + (np.arange(points_per_dim) + 0.5) * spacing[k] for k in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.column_stack([m.ravel() for m in mesh])
    center = box.mean(axis=1)
    dist = ((points - center) ** 2).sum(axis=1)
    order = np.lexsort((np.arange(points.shape[0]), dist))
    return points[order], spacing


def _argmax_first(values):
    """Index of the max; exact ties resolve to the lowest index."""
    return int(np.argmax(values))


def _nm_refine(evaluator, group, box, x0, maxiter=NM_MAX_ITER):
    widths = box[:, 1] - box[:, 0]
    d = box.shape[0]
    simplex = np.tile(x0, (d + 1, 1))
    for k in range(d):
        step = NM_SIMPLEX_SCALE * widths[k]
        if x0[k] + step > box[k, 1]:
            step = -step
        simplex[k + 1, k] += step

    def neg(theta):
        theta = np.clip(theta, box[:, 0], box[:, 1])
        return -evaluator.group_log_score(group, theta)

    res = minimize(
        neg,
        x0,
        method="Nelder-Mead",
        options={"maxiter": maxiter, "initial_simplex": simplex, "xatol": 1e-8, "fatol": 1e-10},
    )
    theta = np.clip(res.x, box[:, 0], box[:, 1])
    return theta, -neg(theta)


def mle(evaluator, group, space, coarse=None, extra_starts=(), maxiter=NM_MAX_ITER):
    """Grid search over the E-test box plus Nelder-Mead refinement.

    Refinement is clamped to the base parameter box: E-test grid points sit
    up against the shrunk box's edge, and restricting the argmax to that
    shrunk box truncates null LRTS values at edge thetas (the boundary
    effect the margins exist to avoid). coarse may carry precomputed
    (points, group log scores) so shared grids are evaluated once. The
    returned value never falls below the best grid point; tie-breaks pick
    the grid point nearest the box center (grid points are ordered
    center-out, ties resolve to the lowest index).
    """
    if coarse is None:
        points, _ = centered_grid(space.etest_box(), MLE_GRID_POINTS.get(space.dim, 20))
        values = np.array([evaluator.group_log_score(group, p) for p in points])
    else:
        points, values = coarse
    clamp_box = space.base_box()
    best_idx = _argmax_first(values)
    best_theta, best_val = points[best_idx], float(values[best_idx])
    candidates = [(best_theta, best_val)]
    starts = [best_theta] + [np.asarray(s, dtype=np.float64) for s in extra_starts]
    for x0 in starts:
        theta, val = _nm_refine(evaluator, group, clamp_box, x0, maxiter)
        candidates.append((theta, val))
    theta_hat, gls_hat = max(candidates, key=lambda c: c[1])
    return theta_hat, gls_hat


def lrts(evaluator, group, theta0, space, coarse=None, theta_hat=None, gls_hat=None):
    """Null likelihood-ratio test statistic 2[gls(theta_hat) - gls(theta0)].

    theta0 joins the refinement starts, so the statistic is nonnegative up
    to optimizer tolerance.
    """
    if theta_hat is None:
        theta_hat, gls_hat = mle(evaluator, group, space, coarse=coarse, extra_starts=(theta0,))
    return 2.0 * (gls_hat - evaluator.group_log_score(group, theta0))


def wilks_set(evaluator, group, space, level=0.95, eval_grid=None, gls_hat=None, grid_gls=None):
    """Confidence set {theta : 2[gls(theta_hat) - gls(theta)] <= chi2_d quantile}.

    Returns (membership mask over the grid, area in working units). The
    quantile comes from internal incomplete-gamma inversion.
    """
    d = space.dim
    if eval_grid is None:
        eval_grid = centered_grid(space.etest_box(), WILKS_GRID_POINTS.get(d, 20))
    points, spacing = eval_grid
    if gls_hat is None:
        _, gls_hat = mle(evaluator, group, space, coarse=(points, grid_gls) if grid_gls is not None else None)
    if grid_gls is None:
        grid_gls = np.array([evaluator.group_log_score(group, p) for p in points])
    q = chi2_quantile(level, d)
    mask = 2.0 * (gls_hat - grid_gls) <= q
    area = float(mask.sum() * np.prod(spacing))
    return mask, area


# ---------------------------------------------------------------------------
# E-test driver
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    """Flat metric values plus the sampled arrays behind the CDF/surface plots."""

    identity: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)

    def rows(self):
        ident = self.identity
        out = []
        for name in sorted(self.metrics):
            out.append({
                "metric": name,
                "case": ident.get("case", ""),
                "size_label": ident.get("size_label", ""),
                "N": ident.get("N", 0),
                "loss_mode": ident.get("loss_mode", ""),
                "seed": ident.get("seed", 0),
                "value": self.metrics[name],
            })
        return out


def _grid_group_scores(evaluator, points, flat_obs, group_size):
    """Group log scores for every (grid point, group): [P, n_total_groups]."""
    n_total = flat_obs.shape[0] // group_size
    out = np.empty((points.shape[0], n_total))
    for i, theta in enumerate(points):
        per_obs = evaluator.log_scores(flat_obs, theta)
        out[i] = per_obs.reshape(n_total, group_size).sum(axis=1)
    return out


def etest_metrics(nler, gt, etest, space, level=0.95, surface_group=0):
    """Full downstream-inference comparison on a shared E-test set.

    For each evaluator: per-group MLE (shared coarse grid cache + NM with
    the true theta as an extra start), null LRTS, Wilks membership and area.
    With both evaluators present the report adds the LRTS MSE and the
    per-coordinate median (over grid thetas) of the mean squared MLE
    discrepancy.
    """
    d = space.dim
    grid_n, n_groups, group_size = etest.xs.shape[0], etest.n_groups, etest.group_size
    obs_shape = etest.xs.shape[3:]
    flat_obs = etest.xs.reshape(grid_n * n_groups * group_size, *obs_shape)
    n_total = grid_n * n_groups

    box = space.etest_box()
    wilks_grid = centered_grid(box, WILKS_GRID_POINTS.get(d, 20))
    mle_pts = MLE_GRID_POINTS.get(d, 20)
    share_grids = mle_pts == WILKS_GRID_POINTS.get(d, 20)
    mle_grid = wilks_grid if share_grids else centered_grid(box, mle_pts)

    q = chi2_quantile(level, d)
    evaluators = [ev for ev in (gt, nler) if ev is not None]
    per_ev = {}
    for ev in evaluators:
        wilks_vals = _grid_group_scores(ev, wilks_grid[0], flat_obs, group_size)
        mle_vals = wilks_vals if share_grids else _grid_group_scores(ev, mle_grid[0], flat_obs, group_size)
        theta_hats = np.empty((n_total, d))
        gls_hats = np.empty(n_total)
        lam = np.empty(n_total)
        areas = np.empty(n_total)
        covered = np.zeros(n_total, dtype=bool)
        gls_truth = np.empty(n_total)
        for gi in range(grid_n):
            theta0 = etest.grid_thetas[gi]
            for gr in range(n_groups):
                g = gi * n_groups + gr
                group = etest.xs[gi, gr]
                theta_hat, gls_hat = mle(
                    ev, group, space, coarse=(mle_grid[0], mle_vals[:, g]), extra_starts=(theta0,)
                )
                theta_hats[g] = theta_hat
                gls_hats[g] = gls_hat
                gls_truth[g] = ev.group_log_score(group, theta0)
                lam[g] = 2.0 * (gls_hat - gls_truth[g])
                covered[g] = lam[g] <= q
                mask = 2.0 * (gls_hat - wilks_vals[:, g]) <= q
                areas[g] = mask.sum() * np.prod(wilks_grid[1])
        per_ev[ev.name] = {
            "theta_hats": theta_hats,
            "lambda": lam,
            "areas": areas,
            "coverage": float(covered.mean()),
            "wilks_vals": wilks_vals,
            "gls_hats": gls_hats,
        }

    box_volume = float(np.prod(box[:, 1] - box[:, 0]))
    report = EvalReport()
    for name, res in per_ev.items():
        report.metrics[f"etest_coverage_{name}"] = res["coverage"]
        report.metrics[f"etest_area_{name}"] = float(res["areas"].mean())
        report.metrics[f"etest_area_frac_{name}"] = float(res["areas"].mean()) / box_volume
        report.arrays[f"lambda_{name}"] = np.sort(res["lambda"])

    if nler is not None and gt is not None:
        nres, gres = per_ev["nler"], per_ev["gt"]
        report.metrics["etest_lrts_mse"] = float(((nres["lambda"] - gres["lambda"]) ** 2).mean())
        sq = (nres["theta_hats"] - gres["theta_hats"]) ** 2
        per_theta = sq.reshape(grid_n, n_groups, d).mean(axis=1)
        for k, coord in enumerate(space.names):
            report.metrics[f"etest_mle_medse_{coord}"] = float(np.median(per_theta[:, k]))

    # surface slice for the contour plot: center grid theta, one group
    gi = grid_n // 2
    g = gi * n_groups + surface_group
    theta0 = etest.grid_thetas[gi]
    surf_points, surf_vals, fixed = _surface_slice(wilks_grid[0], {
        name: res["wilks_vals"][:, g] for name, res in per_ev.items()
    }, theta0, d)
    marker_slice = slice(1, None) if d == 3 else slice(None)
    report.arrays["surface_points"] = surf_points
    report.arrays["surface_truth"] = theta0[marker_slice]
    for name, vals in surf_vals.items():
        report.arrays[f"surface_gls_{name}"] = vals
        report.arrays[f"surface_mle_{name}"] = per_ev[name]["theta_hats"][g][marker_slice]
    report.identity["surface_fixed_coord"] = fixed
    return report


def _surface_slice(points, vals_by_ev, theta0, d):
    """2D slice of the grid log scores; for d=3 the first coordinate is pinned."""
    if d == 2:
        return points, vals_by_ev, ""
    axis_vals = np.unique(points[:, 0])
    pin = axis_vals[np.argmin(np.abs(axis_vals - theta0[0]))]
    keep = points[:, 0] == pin
    sliced = {name: v[keep] for name, v in vals_by_ev.items()}
    return points[keep][:, 1:], sliced, f"coord0={pin:.6g}"
