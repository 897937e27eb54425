"""Seeded samplers for the distribution families used by the Gibbs sweeps.

Every sampler takes an explicit :class:`numpy.random.Generator`. Matrices
are symmetrized before factorization and a single jittered retry is made
when a Cholesky factorization fails.
"""
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular

JITTER = 1e-8
SYM_RTOL = 1e-10


class IndefiniteMatrixError(np.linalg.LinAlgError):
    """Cholesky factorization failed even after the jittered retry."""

    def __init__(self, pivot, message=None):
        self.pivot = pivot
        super().__init__(message or f"matrix is not positive definite (pivot {pivot})")


def make_rng(seed=None):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn(rng, n):
    """Independent child generators, reproducible from the parent state."""
    return rng.spawn(n)


def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def _failing_pivot(a):
    # plain column Cholesky; only run on the error path
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0.0:
            return j
        L[j, j] = np.sqrt(d)
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return n - 1


def cholesky(a):
    """Lower Cholesky factor with one jittered retry.

    Raises :class:`IndefiniteMatrixError` carrying the first failing pivot.
    """
    a = symmetrize(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise IndefiniteMatrixError(0, "matrix has non-finite entries")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    bump = JITTER * np.mean(np.diag(a))
    if bump > 0:
        try:
            return np.linalg.cholesky(a + bump * np.eye(a.shape[0]))
        except np.linalg.LinAlgError:
            pass
    raise IndefiniteMatrixError(_failing_pivot(a))


def is_spd(a, rtol=SYM_RTOL):
    """The invariant every PD-returning sampler must satisfy."""
    a = np.asarray(a, dtype=float)
    scale = max(np.max(np.abs(a)), np.finfo(float).tiny)
    if np.max(np.abs(a - a.T)) > rtol * scale:
        return False
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return False
    return True


class SpdMatrix:
    """A symmetric positive-definite matrix with a cached Cholesky factor."""

    def __init__(self, entries):
        entries = symmetrize(entries)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {entries.shape}")
        self.entries = entries

    @property
    def dim(self):
        return self.entries.shape[0]

    @cached_property
    def cholesky_factor(self):
        return cholesky(self.entries)

    def inverse(self):
        return chol_inverse(self.cholesky_factor)

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


def _chol_of(m):
    if isinstance(m, SpdMatrix):
        return m.cholesky_factor
    return cholesky(np.atleast_2d(np.asarray(m, dtype=float)))


def chol_inverse(L):
    Linv = solve_triangular(L, np.eye(L.shape[0]), lower=True)
    return Linv.T @ Linv


def spd_inverse(a):
    return chol_inverse(_chol_of(a))


def sample_mvn(mean, matrix, rng, precision=False):
    """One draw from N(mean, cov) or, with ``precision=True``, N(mean, prec^-1).

    The precision form solves a triangular system with the factor of the
    precision instead of inverting it.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    L = _chol_of(matrix)
    if L.shape[0] != mean.shape[0]:
        raise ValueError(f"mean has length {mean.shape[0]} but matrix is {L.shape[0]}x{L.shape[0]}")
    z = rng.standard_normal(mean.shape[0])
    if precision:
        return mean + solve_triangular(L.T, z, lower=False)
    return mean + L @ z


def sample_canonical(precision, linear, rng):
    """Draw from N(P^-1 b, P^-1) given precision P and linear term b."""
    L = _chol_of(precision)
    z = rng.standard_normal(L.shape[0])
    y = solve_triangular(L, np.asarray(linear, dtype=float), lower=True)
    return solve_triangular(L.T, y + z, lower=False)


def _bartlett(L, dof, rng):
    # returns L @ B with B the Bartlett lower factor, so W = (L B)(L B)^T
    p = L.shape[0]
    B = np.zeros((p, p))
    B[np.diag_indices(p)] = np.sqrt(rng.chisquare(dof - np.arange(p)))
    rows, cols = np.tril_indices(p, -1)
    B[rows, cols] = rng.standard_normal(rows.size)
    return L @ B


def _check_dof(dof, p):
    if not dof >= p or not np.isfinite(dof):
        raise ValueError(f"degrees of freedom {dof} must be >= dimension {p}")


def sample_wishart(scale, dof, rng):
    """Wishart(scale, dof) via the Bartlett decomposition; mean is dof * scale."""
    L = _chol_of(scale)
    _check_dof(dof, L.shape[0])
    C = _bartlett(L, dof, rng)
    return symmetrize(C @ C.T)


def sample_inv_wishart(scale, dof, rng):
    """Draw X with X^-1 ~ Wishart(scale^-1, dof); mean is scale / (dof - p - 1)."""
    S = _chol_of(scale)
    p = S.shape[0]
    _check_dof(dof, p)
    Sinv_chol = cholesky(chol_inverse(S))
    C = _bartlett(Sinv_chol, dof, rng)
    Cinv = solve_triangular(C, np.eye(p), lower=True)
    return symmetrize(Cinv.T @ Cinv)


def sample_matrix_normal(mean, row_cov, col_cov, rng):
    """Draw A with vec(A) ~ N(vec(mean), col_cov kron row_cov)."""
    mean = np.atleast_2d(np.asarray(mean, dtype=float))
    Lr = _chol_of(row_cov)
    Lc = _chol_of(col_cov)
    if mean.shape != (Lr.shape[0], Lc.shape[0]):
        raise ValueError(
            f"mean shape {mean.shape} does not match covariances "
            f"({Lr.shape[0]}, {Lc.shape[0]})"
        )
    Z = rng.standard_normal(mean.shape)
    return mean + Lr @ Z @ Lc.T


_TINY = np.finfo(float).tiny


def sample_gamma(shape, rate, rng):
    """Gamma draw with density proportional to x^(shape-1) exp(-rate x).

    Shapes below one go through log space (G(a) = G(a+1) U^(1/a)) and are
    clamped to the smallest normal float, so vague priors never yield 0.
    """
    if not (shape > 0 and rate > 0) or not (np.isfinite(shape) and np.isfinite(rate)):
        raise ValueError(f"gamma parameters must be positive and finite, got shape={shape}, rate={rate}")
    if shape >= 1.0:
        return max(float(rng.gamma(shape, 1.0 / rate)), _TINY)
    g = rng.gamma(shape + 1.0, 1.0)
    u = rng.random()
    logx = np.log(g) + np.log1p(-u) / shape - np.log(rate)
    return float(np.clip(np.exp(logx), _TINY, np.finfo(float).max))
