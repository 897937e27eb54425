"""Synthetic data drawn from the factor/VAR generative model, with ground truth."""
from dataclasses import dataclass

import numpy as np

from . import _dynamics
from .data import SeriesMatrix, SeriesTensor


@dataclass
class Synthetic:
    data: object
    truth: np.ndarray
    X: np.ndarray
    A: np.ndarray
    Sigma: np.ndarray
    loadings: tuple


def _ar2(rho, period):
    return 2 * rho * np.cos(2 * np.pi / period), -rho ** 2


def default_var(rank, lags=(1, 2), coupling=0.05):
    """A stable VAR on ``rank`` factors: one slowly varying level factor plus
    damped oscillators at lags 1 and 2, weakly coupled."""
    lags = _dynamics.check_lags(lags)
    if lags[:2] != (1, 2):
        raise ValueError("default_var needs lags starting with (1, 2)")
    d = len(lags)
    blocks = np.zeros((d, rank, rank))
    blocks[0, 0, 0] = 1.0
    periods = np.linspace(24, 8, max(rank - 1, 1))
    for r in range(1, rank):
        a1, a2 = _ar2(0.95, periods[r - 1])
        blocks[0, r, r] = a1
        blocks[1, r, r] = a2
        if r + 1 < rank:
            blocks[0, r, r + 1] = coupling
            blocks[0, r + 1, r] = -coupling
    sigma = np.full(rank, 0.3)
    sigma[0] = 0.01
    return _dynamics.stacked_from_blocks(blocks), np.diag(sigma ** 2)


def simulate_factors(T, A, Sigma, lags, rng, start=None):
    R = Sigma.shape[0]
    hd = lags[-1]
    X = np.zeros((T, R))
    X[:hd] = rng.standard_normal((hd, R)) if start is None else start
    L = np.linalg.cholesky(Sigma)
    for t in range(hd, T):
        X[t] = _dynamics.var_mean(X, A, lags, t) + L @ rng.standard_normal(R)
    return X


def _factors(T, rank, lags, rng, level):
    A, Sigma = default_var(rank, lags)
    start = rng.standard_normal((lags[-1], rank))
    start[:, 0] = level
    return simulate_factors(T, A, Sigma, lags, rng, start), A, Sigma


def btmf_matrix(n_series=30, n_steps=300, rank=3, lags=(1, 2), noise_std=0.1, level=20.0, period=None, seed=0):
    """Matrix series y_it = w_i^T x_t + noise with positive level (MAPE-safe)."""
    rng = np.random.default_rng(seed)
    lags = _dynamics.check_lags(lags)
    X, A, Sigma = _factors(n_steps, rank, lags, rng, level)
    W = rng.standard_normal((rank, n_series))
    W[0] = rng.uniform(0.5, 1.5, n_series)
    truth = W.T @ X.T
    Y = truth + noise_std * rng.standard_normal(truth.shape)
    return Synthetic(SeriesMatrix(Y, period=period), truth, X.T, A, Sigma, (W,))


def cp_tensor(dims=(10, 10, 200), rank=3, lags=(1, 2), noise_std=0.1, level=3.0, period=None, seed=0):
    """Tensor series y_ijt = sum_r u_ir v_jr x_tr + noise, X from the same VAR."""
    rng = np.random.default_rng(seed)
    lags = _dynamics.check_lags(lags)
    M, N, T = dims
    X, A, Sigma = _factors(T, rank, lags, rng, level)
    U = rng.standard_normal((M, rank))
    V = rng.standard_normal((N, rank))
    U[:, 0] = rng.uniform(0.5, 1.5, M)
    V[:, 0] = rng.uniform(0.5, 1.5, N)
    truth = np.einsum("ir,jr,tr->ijt", U, V, X)
    Y = truth + noise_std * rng.standard_normal(truth.shape)
    return Synthetic(SeriesTensor(Y, period=period), truth, X, A, Sigma, (U, V))
