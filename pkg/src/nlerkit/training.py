"""Score-augmented classifier training for likelihood-ratio networks.

The training loss is binary cross-entropy over dependent (Y=1) versus
permutation-decoupled (Y=0) pairs, optionally augmented with a weighted
squared error between the network's finite-difference parameter gradient and
the simulator's exact score ("asa" mode). The score weight alpha starts at
zero and is refreshed every ``alpha_interval`` batches from the ratio of
BCE-to-score gradient norms, then smoothed with an exponential
recency-weighted average over the stored history.

Finite differencing replaces backpropagation through the parameter input:
one forward pass per parameter dimension, stacked into a single batch with
the classifier passes, so each update needs exactly one joint backward.
Perturbation sizes are calibrated once before training against exact input
gradients (max relative error at most ``fd_threshold`` on a minibatch,
shrinking by 10x down to ``fd_floor``, moving to the next minibatch if the
floor is reached).

RNG streams (epoch shuffling, Y=0 pairing, per-example simulation) are
separated so that "bce" and "asa" runs under one seed see identical batch
sequences.
"""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .nn import Adam, theta_input_gradient

logger = logging.getLogger(__name__)

# minimum training epochs by dataset size (paper-scale schedule)
MIN_EPOCHS_TABLE = ((1_000_000, 10), (300_000, 20), (100_000, 30), (0, 40))


def min_epochs_for(n):
    for threshold, epochs in MIN_EPOCHS_TABLE:
        if n >= threshold:
            return epochs
    return 40  # pragma: no cover


class CalibrationFailed(Exception):
    """No perturbation size met the relative-error threshold in a full epoch."""


@dataclass
class Dataset:
    """Y=1 simulation tuples; the Y=0 class is derived by permutation at batch time."""

    case: str
    xs: np.ndarray
    thetas: np.ndarray
    scores: np.ndarray
    seed: int

    def __len__(self):
        return self.thetas.shape[0]


def _cells_per_dim(n, d):
    c = max(1, int(round(n ** (1.0 / d))))
    while c**d < n:
        c += 1
    while c > 1 and (c - 1) ** d >= n:
        c -= 1
    return c


def generate_dataset(model, n, seed, with_scores=True):
    """Stratified dataset: one theta per cell of an equal grid over the train box.

    The box is split into ceil(N^(1/d)) cells per dimension, N cells are
    chosen without replacement, one theta is drawn uniformly inside each
    chosen cell, and one observation is simulated per theta. Score targets
    are evaluated once and stored.
    """
    d = model.theta_dim
    box = model.space.train_box()
    c = _cells_per_dim(n, d)
    ss = np.random.SeedSequence(seed)
    ss_theta, ss_sim = ss.spawn(2)
    rng = np.random.default_rng(ss_theta)

    chosen = rng.choice(c**d, size=n, replace=False)
    coords = np.empty((n, d), dtype=np.int64)
    rem = chosen.copy()
    for k in range(d - 1, -1, -1):
        coords[:, k] = rem % c
        rem //= c
    width = (box[:, 1] - box[:, 0]) / c
    thetas = box[:, 0] + (coords + rng.random((n, d))) * width

    sim_children = ss_sim.spawn(n)
    xs = []
    scores = np.zeros((n, d)) if with_scores else None
    for i in range(n):
        x = model.simulate(thetas[i], np.random.default_rng(sim_children[i]))
        xs.append(x)
        if with_scores:
            scores[i] = model.score(x, thetas[i])
    xs = np.asarray(xs)
    return Dataset(case=model.case, xs=xs, thetas=thetas, scores=scores, seed=seed)


@dataclass
class Batch:
    """Equal halves: (x_i, theta_i, 1) and (x_i, theta_pi(i), 0); score targets Y=1 only."""

    xs: np.ndarray
    theta1: np.ndarray
    theta0: np.ndarray
    score_targets: np.ndarray


def make_batch(dataset, indices, rng):
    pi = rng.integers(0, len(dataset), size=len(indices))
    return Batch(
        xs=dataset.xs[indices],
        theta1=dataset.thetas[indices],
        theta0=dataset.thetas[pi],
        score_targets=None if dataset.scores is None else dataset.scores[indices],
    )


def bce_loss(logits, labels, reduction="sum"):
    """Stable binary cross-entropy on unnormalized logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if logits.shape != labels.shape:
        raise ValueError("logits and labels must have equal length")
    per = np.maximum(logits, 0.0) - logits * labels + np.log1p(np.exp(-np.abs(logits)))
    if reduction == "sum":
        return float(per.sum())
    if reduction == "mean":
        return float(per.mean())
    raise ValueError(f"unknown reduction {reduction!r}")


@dataclass
class FdConfig:
    """Forward-difference perturbation sizes, one per working coordinate."""

    eps: np.ndarray
    rel_error_threshold: float = 0.01
    initial: float = 1e-5
    floor: float = 1e-8

    @classmethod
    def fresh(cls, dim, initial=1e-5, threshold=0.01, floor=1e-8):
        return cls(
            eps=np.full(dim, initial),
            rel_error_threshold=threshold,
            initial=initial,
            floor=floor,
        )


def _stacked_forward(model, x_enc, theta1, theta0, eps):
    """One forward over [Y=1 | Y=0 | d perturbed copies of Y=1].

    Returns logits split as (h1, h0, hp) with hp of shape [d, B]; the Y=1
    pass doubles as the finite-difference base. The observation batch is
    shared by every copy, so the feature trunk runs once (fan-out path).
    """
    b, d = theta1.shape
    blocks = [theta1, theta0]
    for k in range(d):
        pert = theta1.copy()
        pert[:, k] += eps[k]
        blocks.append(pert)
    theta_stack = np.concatenate(blocks, axis=0)
    h = model.forward_fanout(x_enc, theta_stack, d + 2)
    return h[:b], h[b : 2 * b], h[2 * b :].reshape(d, b)


def fd_score_estimate(model, x_enc, theta, fd):
    """Forward-difference estimate of the logit's theta-gradient, batched."""
    b, d = theta.shape
    blocks = [theta]
    for k in range(d):
        pert = theta.copy()
        pert[:, k] += fd.eps[k]
        blocks.append(pert)
    theta_stack = np.concatenate(blocks, axis=0)
    h = model.forward_fanout(x_enc, theta_stack, d + 1)
    base = h[:b]
    return np.stack([(h[(k + 1) * b : (k + 2) * b] - base) / fd.eps[k] for k in range(d)], axis=1)


def calibrate_epsilon(model, encoded_batches, fd=None, dim=None, **fd_kwargs):
    """Pick perturbation sizes by matching exact input gradients on a minibatch.

    encoded_batches yields (x_enc, theta) pairs; coordinates whose exact
    gradient is below 1e-12 are excluded from the max relative error.
    """
    for x_enc, theta in encoded_batches:
        cfg = fd if fd is not None else FdConfig.fresh(dim or theta.shape[1], **fd_kwargs)
        exact = theta_input_gradient(model, x_enc, theta)
        eps = np.full(theta.shape[1], cfg.initial)
        while True:
            trial = FdConfig(eps=eps, rel_error_threshold=cfg.rel_error_threshold,
                             initial=cfg.initial, floor=cfg.floor)
            approx = fd_score_estimate(model, x_enc, theta, trial)
            mask = np.abs(exact) >= 1e-12
            if not np.any(mask):
                return trial
            rel = np.max(np.abs((exact[mask] - approx[mask]) / exact[mask]))
            if rel <= cfg.rel_error_threshold:
                return trial
            if np.all(eps <= cfg.floor):
                break
            eps = np.maximum(eps / 10.0, cfg.floor)
    raise CalibrationFailed("no perturbation size satisfied the threshold over a full epoch")


def score_loss(fd_estimates, targets, alpha):
    """alpha * sum of squared score residuals over the Y=1 half."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    return alpha * float(((fd_estimates - targets) ** 2).sum())


@dataclass
class AlphaController:
    """Gradient-norm-matched score weight with recency-weighted history."""

    update_interval: int = 64
    window: int = 64
    history: list = field(default_factory=list)  # (alpha', cumulative batch index)
    alpha: float = 0.0

    def push(self, alpha_prime, t):
        self.history.append((float(alpha_prime), int(t)))
        if len(self.history) > self.window:
            del self.history[: -self.window]

    def refresh(self, t0):
        """alpha <- weighted average of stored values, weight exp(-(t0-ti)/window)."""
        if not self.history:
            self.alpha = 0.0
            return self.alpha
        vals = np.array([v for v, _ in self.history])
        ts = np.array([t for _, t in self.history], dtype=np.float64)
        weights = np.exp(-(t0 - ts) / self.window)
        self.alpha = float((vals * weights).sum() / weights.sum())
        return self.alpha


class ZeroScoreGradient(Exception):
    pass


def _bce_upstream(h1, h0, reduction):
    scale = 1.0 / (2.0 * len(h1)) if reduction == "mean" else 1.0
    g1 = (1.0 / (1.0 + np.exp(-h1)) - 1.0) * scale
    g0 = (1.0 / (1.0 + np.exp(-h0))) * scale
    return g1, g0


def _score_upstream(residuals, eps):
    """Upstream gradients of the unweighted score loss wrt (h1, hp)."""
    d = residuals.shape[1]
    g_base = np.zeros(residuals.shape[0])
    g_pert = np.empty((d, residuals.shape[0]))
    for k in range(d):
        g = 2.0 * residuals[:, k] / eps[k]
        g_pert[k] = g
        g_base -= g
    return g_base, g_pert


def grad_norms(model, x_enc, batch, fd, reduction="mean"):
    """Norms of the BCE gradient and the unweighted score-loss gradient.

    Two backward passes over one cached forward; used for the alpha' ratio.
    """
    b, d = batch.theta1.shape
    h1, h0, hp = _stacked_forward(model, x_enc, batch.theta1, batch.theta0, fd.eps)
    fd_est = (hp - h1[None, :]).T / fd.eps[None, :]
    residuals = fd_est - batch.score_targets
    g1, g0 = _bce_upstream(h1, h0, reduction)
    up_bce = np.concatenate([g1, g0, np.zeros(d * b)])
    model.backward_fanout(up_bce)
    norm_bce = float(np.linalg.norm(model.grad_vector()))
    gs_base, gs_pert = _score_upstream(residuals, fd.eps)
    up_score = np.concatenate([gs_base, np.zeros(b), gs_pert.ravel()])
    model.backward_fanout(up_score)
    norm_score = float(np.linalg.norm(model.grad_vector()))
    return norm_bce, norm_score


def update_alpha(ctrl, model, x_enc, batch, fd, t0, reduction="mean"):
    """Push alpha' = |g_BCE| / |g_Score| and refresh the moving average.

    A vanishing score gradient keeps the previous alpha and only logs a
    warning.
    """
    norm_bce, norm_score = grad_norms(model, x_enc, batch, fd, reduction)
    if norm_score == 0.0:
        logger.warning("score gradient norm is zero; keeping alpha = %g", ctrl.alpha)
    else:
        ctrl.push(norm_bce / norm_score, t0)
    ctrl.refresh(t0)
    return ctrl


@dataclass
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 1e-6
    min_epochs: int = None  # default: schedule by dataset size
    max_epochs: int = 500
    patience: int = 5
    loss_mode: str = "asa"  # "bce" or "asa"
    seed: int = 0
    bce_reduction: str = "mean"
    alpha_interval: int = 64
    alpha_window: int = 64
    fd_initial: float = 1e-5
    fd_threshold: float = 0.01
    fd_floor: float = 1e-8
    val_batch: int = 4096

    def __post_init__(self):
        if self.loss_mode not in ("bce", "asa"):
            raise ValueError(f"loss_mode must be 'bce' or 'asa', got {self.loss_mode!r}")
        if self.bce_reduction not in ("sum", "mean"):
            raise ValueError(f"bce_reduction must be 'sum' or 'mean', got {self.bce_reduction!r}")


@dataclass
class History:
    epochs: list = field(default_factory=list)  # per-epoch metric dicts
    alpha_trace: list = field(default_factory=list)  # (cumulative batch, alpha')
    best_epoch: int = -1
    total_time: float = 0.0
    time_to_best: float = 0.0
    batch_time_mean: float = 0.0
    fd_eps: np.ndarray = None
    meta: dict = field(default_factory=dict)


@dataclass
class TrainResult:
    model: object
    history: History


def _epoch_val_bce(model, x_enc, thetas, perm, chunk):
    n = thetas.shape[0]
    total = 0.0
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        h1 = model.forward(x_enc[lo:hi], thetas[lo:hi])
        h0 = model.forward(x_enc[lo:hi], thetas[perm[lo:hi]])
        total += bce_loss(h1, np.ones_like(h1), "sum") + bce_loss(h0, np.zeros_like(h0), "sum")
    return total / (2.0 * n)


def _epoch_val_score_mse(model, x_enc, thetas, targets, fd, chunk):
    n = thetas.shape[0]
    sq = 0.0
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        est = fd_score_estimate(model, x_enc[lo:hi], thetas[lo:hi], fd)
        sq += float(((est - targets[lo:hi]) ** 2).sum())
    return sq / (n * thetas.shape[1])


def train(spm, model, dataset, valset, cfg):
    """Run the full training loop and return the best-validation-epoch model.

    Sequence per batch: build the two classifier halves, one stacked forward
    (classifier passes plus finite-difference passes in "asa" mode), the
    joint backward, one Adam step. Every ``alpha_interval`` batches the BCE
    and score gradients are computed separately to refresh alpha'; the
    smoothed alpha is re-evaluated after every batch. Validation BCE decides
    early stopping (after ``min_epochs``, stop once it fails to improve for
    ``patience`` consecutive epochs) and which epoch's weights are returned.

    Timing covers the compute section only (no encoding, batch assembly, or
    validation), matching the reported per-batch and total figures.
    """
    n = len(dataset)
    d = model.theta_dim
    min_epochs = cfg.min_epochs if cfg.min_epochs is not None else min_epochs_for(n)
    asa = cfg.loss_mode == "asa"

    ss = np.random.SeedSequence(cfg.seed)
    ss_shuffle, ss_pair, ss_valperm = ss.spawn(3)
    shuffle_rng = np.random.default_rng(ss_shuffle)
    pair_rng = np.random.default_rng(ss_pair)
    val_perm = np.random.default_rng(ss_valperm).integers(0, len(valset), size=len(valset))

    x_enc_all = spm.encode(dataset.xs)
    x_enc_val = spm.encode(valset.xs)

    history = History(meta={
        "loss_mode": cfg.loss_mode,
        "bce_reduction": cfg.bce_reduction,
        "seed": cfg.seed,
        "n_train": n,
        "min_epochs": min_epochs,
    })

    fd = None
    if asa:
        def _cal_batches():
            for lo in range(0, n, cfg.batch_size):
                idx = np.arange(lo, min(lo + cfg.batch_size, n))
                yield x_enc_all[idx], dataset.thetas[idx]

        fd = calibrate_epsilon(
            model, _cal_batches(), dim=d,
            initial=cfg.fd_initial, threshold=cfg.fd_threshold, floor=cfg.fd_floor,
        )
        history.fd_eps = fd.eps.copy()

    ctrl = AlphaController(update_interval=cfg.alpha_interval, window=cfg.alpha_window)
    adam = Adam(model.params(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)

    best_val = np.inf
    best_weights = model.get_weights()
    epochs_since_best = 0
    t_batches = 0
    t_alpha = 0
    cum_time = 0.0
    n_batches_total = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        epoch_bce_sum = 0.0
        epoch_score_sum = 0.0
        epoch_examples = 0
        epoch_time = 0.0
        epoch_batches = 0

        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            batch = make_batch(dataset, idx, pair_rng)
            x_enc = x_enc_all[idx]
            b = len(idx)
            tic = time.perf_counter()

            if asa:
                h1, h0, hp = _stacked_forward(model, x_enc, batch.theta1, batch.theta0, fd.eps)
                fd_est = (hp - h1[None, :]).T / fd.eps[None, :]
                residuals = fd_est - batch.score_targets
                g1, g0 = _bce_upstream(h1, h0, cfg.bce_reduction)
                t_alpha += 1
                if t_alpha >= cfg.alpha_interval:
                    up_bce = np.concatenate([g1, g0, np.zeros(d * b)])
                    model.backward_fanout(up_bce)
                    g_bce = [g.copy() for g in model.grads()]
                    norm_bce = float(np.linalg.norm(model.grad_vector()))
                    gs_base, gs_pert = _score_upstream(residuals, fd.eps)
                    model.backward_fanout(np.concatenate([gs_base, np.zeros(b), gs_pert.ravel()]))
                    norm_score = float(np.linalg.norm(model.grad_vector()))
                    grads = [a + ctrl.alpha * s for a, s in zip(g_bce, model.grads())]
                    if norm_score == 0.0:
                        logger.warning("score gradient norm is zero; keeping alpha = %g", ctrl.alpha)
                    else:
                        ctrl.push(norm_bce / norm_score, t_batches + 1)
                        history.alpha_trace.append((t_batches + 1, norm_bce / norm_score))
                    t_alpha = 0
                else:
                    gs_base, gs_pert = _score_upstream(residuals, fd.eps)
                    up = np.concatenate(
                        [g1 + ctrl.alpha * gs_base, g0, ctrl.alpha * gs_pert.ravel()]
                    )
                    model.backward_fanout(up)
                    grads = model.grads()
                adam.step(model.params(), grads)
                t_batches += 1
                ctrl.refresh(t_batches)
                batch_score = float((residuals**2).sum())
            else:
                theta_stack = np.concatenate([batch.theta1, batch.theta0], axis=0)
                h = model.forward_fanout(x_enc, theta_stack, 2)
                h1, h0 = h[:b], h[b:]
                g1, g0 = _bce_upstream(h1, h0, cfg.bce_reduction)
                model.backward_fanout(np.concatenate([g1, g0]))
                adam.step(model.params(), model.grads())
                t_batches += 1
                batch_score = 0.0

            toc = time.perf_counter()
            epoch_time += toc - tic
            epoch_batches += 1
            labels = np.concatenate([np.ones(b), np.zeros(b)])
            epoch_bce_sum += bce_loss(np.concatenate([h1, h0]), labels, "sum")
            epoch_score_sum += batch_score
            epoch_examples += 2 * b

        cum_time += epoch_time
        n_batches_total += epoch_batches

        val_bce = _epoch_val_bce(model, x_enc_val, valset.thetas, val_perm, cfg.val_batch)
        val_score_mse = (
            _epoch_val_score_mse(model, x_enc_val, valset.thetas, valset.scores, fd, cfg.val_batch)
            if asa and valset.scores is not None
            else float("nan")
        )

        history.epochs.append({
            "epoch": epoch,
            "train_bce": epoch_bce_sum / epoch_examples,
            "train_score": epoch_score_sum / max(1, epoch_examples // 2),
            "val_bce": val_bce,
            "val_score_mse": val_score_mse,
            "alpha": ctrl.alpha,
            "batch_time_mean": epoch_time / epoch_batches,
            "epoch_time": epoch_time,
            "cum_time": cum_time,
        })

        if val_bce < best_val:
            best_val = val_bce
            best_weights = model.get_weights()
            history.best_epoch = epoch
            history.time_to_best = cum_time
            epochs_since_best = 0
        else:
            epochs_since_best += 1

        if epoch >= min_epochs and epochs_since_best >= cfg.patience:
            break

    model.set_weights(best_weights)
    history.total_time = cum_time
    history.batch_time_mean = cum_time / max(1, n_batches_total)
    return TrainResult(model=model, history=history)
