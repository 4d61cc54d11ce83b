"""SIS epidemics on a weighted graph as a continuous-time hidden Markov model.

Node states are packed bitwise into a single integer (bit k set = node k
infected), so a trajectory is a short int sequence, one entry per
observation time. The chain has three rates: a fixed self-infection rate
eta, an infection rate lambda scaled by the edge weights of currently
infected neighbours, and a recovery rate mu. Only single-node flips have
nonzero instantaneous rate.

The exact likelihood of an observed trajectory multiplies entries of
exp(Q * dt) across observation gaps; the score in working coordinates
(log lambda, log mu) comes from Frechet derivatives of those matrix
exponentials.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .numerics import matrix_exponential, matrix_exponential_frechet
from .params import sis_space

PROB_FLOOR = 1e-300


class ImpossibleTransition(Exception):
    """A transition probability was non-positive beyond rounding error."""


def unit_square_nodes(translate=None):
    pts = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
    if translate is not None:
        pts = [(x + translate[0], y + translate[1]) for x, y in pts]
    return pts


def default_node_positions(n_nodes=8):
    """Paper layout: one unit square, plus a copy translated +2 in x and y."""
    if n_nodes == 4:
        return np.array(unit_square_nodes())
    if n_nodes == 8:
        return np.array(unit_square_nodes() + unit_square_nodes((2.0, 2.0)))
    raise ValueError(f"no default layout for {n_nodes} nodes")


@dataclass(frozen=True)
class SisConfig:
    node_positions: np.ndarray
    eta: float = 0.135
    observation_times: np.ndarray = field(default_factory=lambda: np.arange(13.0))
    initial_infected: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "node_positions", np.asarray(self.node_positions, dtype=np.float64))
        object.__setattr__(
            self, "observation_times", np.asarray(self.observation_times, dtype=np.float64)
        )
        if np.any(np.diff(self.observation_times) <= 0):
            raise ValueError("observation times must be strictly increasing")

    @property
    def n_nodes(self):
        return self.node_positions.shape[0]

    @property
    def n_states(self):
        return 1 << self.n_nodes

    @property
    def initial_state(self):
        state = 0
        for k in self.initial_infected:
            state |= 1 << k
        return state

    def edge_weights(self):
        """w[i, j] = exp(-euclidean distance), zero diagonal."""
        diff = self.node_positions[:, None, :] - self.node_positions[None, :, :]
        w = np.exp(-np.sqrt((diff**2).sum(axis=2)))
        np.fill_diagonal(w, 0.0)
        return w


def _theta_raw(theta_w):
    lam = float(np.exp(theta_w[0]))
    mu = float(np.exp(theta_w[1]))
    return lam, mu


def build_generator(cfg, theta_w):
    """Generator matrix Q over all 2^K states for working theta = (log lambda, log mu)."""
    lam, mu = _theta_raw(theta_w)
    return _assemble_generator(cfg, lam, mu, cfg.eta)


def _assemble_generator(cfg, lam, mu, eta):
    k_nodes = cfg.n_nodes
    n = cfg.n_states
    w = cfg.edge_weights()
    q = np.zeros((n, n))
    for s in range(n):
        for k in range(k_nodes):
            if (s >> k) & 1:
                q[s, s ^ (1 << k)] = mu
            else:
                rate = eta
                for j in range(k_nodes):
                    if (s >> j) & 1:
                        rate += lam * w[k, j]
                q[s, s | (1 << k)] = rate
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return q


def generator_partials(cfg, theta_w):
    """dQ/d(log lambda) and dQ/d(log mu), rows summing to zero."""
    lam, mu = _theta_raw(theta_w)
    # dQ/dlam has the neighbour sums in the infection slots; chain rule scales by lam
    d_lam = _assemble_generator(cfg, 1.0, 0.0, 0.0) * lam
    d_mu = _assemble_generator(cfg, 0.0, 1.0, 0.0) * mu
    return d_lam, d_mu


def simulate(cfg, theta_w, seed):
    """Event-driven CTMC trajectory recorded at the observation times."""
    lam, mu = _theta_raw(theta_w)
    return kernels.sis_simulate(
        cfg.n_nodes,
        cfg.edge_weights(),
        cfg.eta,
        lam,
        mu,
        cfg.initial_state,
        cfg.observation_times,
        seed,
    )


def _interval_log_prob(prob):
    if not np.isfinite(prob) or prob <= -1e-9:
        raise ImpossibleTransition(f"transition probability {prob} is non-positive beyond rounding")
    return float(np.log(max(prob, PROB_FLOOR)))


def log_likelihood(cfg, theta_w, traj):
    """log of the exact trajectory probability under the CT-HMM."""
    traj = np.asarray(traj)
    if traj[0] != cfg.initial_state:
        return -np.inf
    total = 0.0
    times = cfg.observation_times
    q = build_generator(cfg, theta_w)
    trans_cache = {}
    for i in range(1, len(traj)):
        dt = float(times[i] - times[i - 1])
        if dt not in trans_cache:
            trans_cache[dt] = matrix_exponential(q * dt)
        total += _interval_log_prob(trans_cache[dt][traj[i - 1], traj[i]])
    return total


def score(cfg, theta_w, traj):
    """Gradient of log_likelihood wrt (log lambda, log mu).

    Each observation gap contributes L(Q dt, dQ_k dt)[s, s'] / exp(Q dt)[s, s']
    per coordinate, with L the Frechet derivative of the matrix exponential.
    """
    traj = np.asarray(traj)
    q = build_generator(cfg, theta_w)
    d_lam, d_mu = generator_partials(cfg, theta_w)
    times = cfg.observation_times
    cache = {}
    out = np.zeros(2)
    for i in range(1, len(traj)):
        dt = float(times[i] - times[i - 1])
        if dt not in cache:
            p, l_lam = matrix_exponential_frechet(q * dt, d_lam * dt)
            _, l_mu = matrix_exponential_frechet(q * dt, d_mu * dt)
            cache[dt] = (p, l_lam, l_mu)
        p, l_lam, l_mu = cache[dt]
        prob = p[traj[i - 1], traj[i]]
        _interval_log_prob(prob)
        prob = max(prob, PROB_FLOOR)
        out[0] += l_lam[traj[i - 1], traj[i]] / prob
        out[1] += l_mu[traj[i - 1], traj[i]] / prob
    return out


class SisModel:
    """Trajectory simulator, exact likelihood and score for the SIS CT-HMM."""

    case = "sis"

    def __init__(self, cfg=None):
        self.cfg = cfg if cfg is not None else SisConfig(default_node_positions(8))
        self.space = sis_space()
        self.theta_dim = 2

    @property
    def input_shape(self):
        return (len(self.cfg.observation_times), self.cfg.n_nodes)

    def simulate(self, theta_w, rng):
        seed = int(rng.integers(0, 2**32))
        return simulate(self.cfg, theta_w, seed)

    def log_likelihood(self, x, theta_w):
        return log_likelihood(self.cfg, theta_w, x)

    def log_likelihood_batch(self, xs, theta_w):
        """Shared expm across trajectories: one transition matrix per unique gap."""
        xs = np.asarray(xs)
        times = self.cfg.observation_times
        q = build_generator(self.cfg, theta_w)
        dts = np.diff(times)
        cache = {float(dt): matrix_exponential(q * float(dt)) for dt in np.unique(dts)}
        out = np.zeros(xs.shape[0])
        init_bad = xs[:, 0] != self.cfg.initial_state
        for i in range(1, xs.shape[1]):
            p = cache[float(dts[i - 1])]
            probs = p[xs[:, i - 1], xs[:, i]]
            bad = probs <= -1e-9
            if np.any(bad):
                raise ImpossibleTransition("batch transition probability non-positive beyond rounding")
            out += np.log(np.maximum(probs, PROB_FLOOR))
        out[init_bad] = -np.inf
        return out

    def score(self, x, theta_w):
        return score(self.cfg, theta_w, x)

    def encode(self, xs):
        """Trajectories to [B, T, K] 0/1 node-state arrays."""
        xs = np.asarray(xs)
        if xs.ndim == 1:
            xs = xs[None, :]
        k = self.cfg.n_nodes
        bits = (xs[:, :, None] >> np.arange(k)[None, None, :]) & 1
        return bits.astype(np.float64)
