"""Dense linear-algebra and special-function kernels shared by all models.

Everything runs in 64-bit floats. Matrices are plain C-contiguous numpy
arrays; the only wrapper type is :class:`CholeskyFactor`, which carries the
lower-triangular factor together with its dimension so downstream solves can
validate shapes cheaply.

Factorizations and triangular solves delegate to LAPACK (numpy/scipy); the
matrix exponential, its Frechet derivative, digamma and the chi-square
quantile are implemented here because their error behaviour is contract
relevant.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular


class NotPositiveDefinite(Exception):
    """Cholesky pivot failure: the matrix is numerically not SPD."""


class DimensionMismatch(Exception):
    pass


class NonSquare(Exception):
    pass


class DomainError(Exception):
    pass


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor L with L @ L.T = M, strictly positive diagonal."""

    lower: np.ndarray
    dim: int


def cholesky(mat, sym_tol=1e-10):
    """Factor a symmetric positive-definite matrix.

    Raises
    ------
    NotPositiveDefinite
        If the matrix is asymmetric beyond ``sym_tol`` (relative to its
        largest entry) or a pivot is non-positive. Signals a degenerate
        covariance.
    """
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise NonSquare(f"expected square matrix, got shape {mat.shape}")
    scale = max(1.0, float(np.max(np.abs(mat))))
    if np.max(np.abs(mat - mat.T)) > sym_tol * scale:
        raise NotPositiveDefinite("matrix is not symmetric within tolerance")
    try:
        lower = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    return CholeskyFactor(lower=lower, dim=mat.shape[0])


def spd_solve(factor, b):
    """Solve M x = b given the Cholesky factor of M. b may be a vector or matrix."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != factor.dim:
        raise DimensionMismatch(f"rhs has leading dim {b.shape[0]}, factor dim {factor.dim}")
    y = solve_triangular(factor.lower, b, lower=True)
    return solve_triangular(factor.lower, y, lower=True, trans="T")


def log_det(factor):
    """log |M| from the factor diagonal: 2 * sum(log diag(L))."""
    return 2.0 * float(np.sum(np.log(np.diag(factor.lower))))


# ---------------------------------------------------------------------------
# matrix exponential: scaling and squaring with the order-13 Pade approximant
# ---------------------------------------------------------------------------

_PADE13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)


def _expm_pade13(a):
    n = a.shape[0]
    ident = np.eye(n)
    b = _PADE13
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a2 @ a4
    u = a @ (
        a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
        + b[7] * a6
        + b[5] * a4
        + b[3] * a2
        + b[1] * ident
    )
    v = (
        a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
        + b[6] * a6
        + b[4] * a4
        + b[2] * a2
        + b[0] * ident
    )
    return np.linalg.solve(v - u, v + u)


def matrix_exponential(a):
    """exp(A) for a square real matrix.

    Scales so that the 1-norm of A / 2**s is at most 0.5, applies the
    order-13 Pade approximant, then squares s times. For generator matrices
    the result is stochastic to ~1e-14 row-sum error.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NonSquare(f"expected square matrix, got shape {a.shape}")
    norm = float(np.max(np.sum(np.abs(a), axis=0))) if a.size else 0.0
    if norm == 0.0:
        return np.eye(a.shape[0])
    s = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    result = _expm_pade13(a / (2.0**s))
    for _ in range(s):
        result = result @ result
    return result


def matrix_exponential_frechet(a, e):
    """exp(A) and its Frechet derivative L(A, E) in direction E.

    Both come from one exponential of the block matrix [[A, E], [0, A]]:
    the top-left block is exp(A), the top-right block is L(A, E).
    """
    a = np.asarray(a, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if a.shape != e.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"A and E must be square with equal shape, got {a.shape} / {e.shape}")
    n = a.shape[0]
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = a
    block[:n, n:] = e
    block[n:, n:] = a
    big = matrix_exponential(block)
    return big[:n, :n], big[:n, n:]


# ---------------------------------------------------------------------------
# digamma: recurrence up to z >= 6, then the asymptotic series
# ---------------------------------------------------------------------------

_DIGAMMA_ASYMPTOTIC = (
    -1.0 / 12.0,
    1.0 / 120.0,
    -1.0 / 252.0,
    1.0 / 240.0,
    -1.0 / 132.0,
    691.0 / 32760.0,
    -1.0 / 12.0,
)


def digamma(z):
    """psi(z) for z > 0, accurate to ~1e-12."""
    if not z > 0.0:
        raise DomainError(f"digamma requires z > 0, got {z}")
    z = float(z)
    acc = 0.0
    while z < 6.0:
        acc -= 1.0 / z
        z += 1.0
    inv2 = 1.0 / (z * z)
    series = 0.0
    power = inv2
    for coeff in _DIGAMMA_ASYMPTOTIC:
        series += coeff * power
        power *= inv2
    return acc + math.log(z) - 0.5 / z + series


# ---------------------------------------------------------------------------
# regularized lower incomplete gamma and the chi-square quantile
# ---------------------------------------------------------------------------


def reg_lower_gamma(a, x, tol=1e-14, max_iter=500):
    """P(a, x), the regularized lower incomplete gamma function.

    Power series for x < a + 1, Lentz continued fraction for the upper tail
    otherwise.
    """
    if a <= 0.0:
        raise DomainError("shape parameter must be positive")
    if x < 0.0:
        raise DomainError("x must be nonnegative")
    if x == 0.0:
        return 0.0
    log_front = a * math.log(x) - x - math.lgamma(a)
    if x < a + 1.0:
        term = 1.0 / a
        total = term
        denom = a
        for _ in range(max_iter):
            denom += 1.0
            term *= x / denom
            total += term
            if abs(term) < abs(total) * tol:
                break
        return math.exp(log_front) * total
    # continued fraction for Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, max_iter):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            break
    q = math.exp(log_front) * h
    return 1.0 - q


def chi2_quantile(level, dof):
    """Quantile of the chi-square distribution by bisection on P(dof/2, q/2)."""
    if not 0.0 < level < 1.0:
        raise DomainError("level must be in (0, 1)")
    lo, hi = 0.0, 1.0
    while reg_lower_gamma(dof / 2.0, hi / 2.0) < level:
        hi *= 2.0
        if hi > 1e8:  # pragma: no cover
            raise DomainError("quantile bracket failed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if reg_lower_gamma(dof / 2.0, mid / 2.0) < level:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)
