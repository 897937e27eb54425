"""Bayesian temporal tensor factorization (CP model with VAR temporal factors).

Factor matrices are stored by rows: ``U`` (M, R), ``V`` (N, R) and
``X`` (T, R). The dynamics and the temporal single-site sweep are shared
with :mod:`btf.btmf`.
"""
from dataclasses import dataclass, replace

import numpy as np

from . import _dynamics, dist, kernels
from .btmf import (
    HyperPriors,
    SamplerError,
    run_chain,
    sample_factor_hyper,
)
from .data import SeriesTensor

TENSOR_NOISE_MODES = ("isotropic", "per-pair")
MIN_FIBER_OBS = 3


@dataclass
class CpFactors:
    U: np.ndarray
    V: np.ndarray
    X: np.ndarray

    def reconstruct(self):
        return np.einsum("ir,jr,tr->ijt", self.U, self.V, self.X)


@dataclass
class BttfState:
    U: np.ndarray
    V: np.ndarray
    X: np.ndarray
    A: np.ndarray
    Sigma: np.ndarray
    tau: np.ndarray
    mu_u: np.ndarray
    Lambda_u: np.ndarray
    mu_v: np.ndarray
    Lambda_v: np.ndarray

    def copy(self):
        return BttfState(*(np.array(getattr(self, f)) for f in self.__dataclass_fields__))

    @property
    def factors(self):
        return CpFactors(self.U, self.V, self.X)

    def reconstruct(self):
        return self.factors.reconstruct()


@dataclass
class TensorChainSample:
    U: np.ndarray
    V: np.ndarray
    X: np.ndarray
    A: np.ndarray
    Sigma: np.ndarray
    tau: np.ndarray

    @property
    def X_rows(self):
        return np.ascontiguousarray(self.X)

    def loadings(self):
        return khatri_rao(self.U, self.V)

    def noise_precision(self):
        return self.tau.ravel()


def khatri_rao(P, Q):
    """Rows p_i * q_j (elementwise) for every (i, j), i-major: shape (I*J, R)."""
    return (P[:, None, :] * Q[None, :, :]).reshape(-1, P.shape[1])


def _tau_matrix(tau, shape):
    tau = np.asarray(tau, dtype=float)
    return np.broadcast_to(tau, shape) if tau.ndim == 0 else tau


def posterior_mode_factor(mode, index, data, U, V, X, tau, mu, Lambda):
    """Mean and precision of row ``index`` of U (``mode='U'``) or V (``mode='V'``)."""
    M, N, T = data.shape
    tau = _tau_matrix(tau, (M, N))
    if mode == "U":
        vals, mask, other, taus = data.values[index], data.mask[index], V, tau[index]
    elif mode == "V":
        vals, mask, other, taus = data.values[:, index], data.mask[:, index], U, tau[:, index]
    else:
        raise ValueError(f"mode must be 'U' or 'V', got {mode!r}")
    feats = khatri_rao(other, X)
    m = mask.ravel()
    w = np.repeat(taus, T)[m]
    F = feats[m]
    y = vals.ravel()[m]
    prec = dist.symmetrize((F * w[:, None]).T @ F + Lambda)
    mean = dist.spd_inverse(prec) @ ((F * w[:, None]).T @ y + Lambda @ mu)
    return mean, prec


def posterior_temporal_factor_cp(t, data, U, V, X, tau, A, Sigma, lags):
    """Mean and covariance of x_t (0-based) given the spatial factors and the other x_s."""
    lags = _dynamics.check_lags(lags)
    M, N, T = data.shape
    tau = _tau_matrix(tau, (M, N))
    m = data.mask[:, :, t].ravel()
    F = khatri_rao(U, V)[m]
    w = tau.ravel()[m]
    G = (F * w[:, None]).T @ F
    b = (F * w[:, None]).T @ data.values[:, :, t].ravel()[m]
    P, q = _dynamics.temporal_conditional(t, G, b, np.asarray(X, dtype=float), A, Sigma, lags)
    cov = dist.spd_inverse(P)
    return cov @ q, cov


def posterior_precision_cp(data, U, V, X, priors, noise_mode="isotropic"):
    """Gamma (shape, rate) of the pooled tau, or (M, N) arrays for per-pair tau_ij."""
    resid = np.where(data.mask, data.filled() - np.einsum("ir,jr,tr->ijt", U, V, X), 0.0)
    rss = np.sum(resid ** 2, axis=2)
    counts = data.mask.sum(axis=2)
    if noise_mode == "isotropic":
        return priors.alpha + 0.5 * counts.sum(), priors.beta + 0.5 * rss.sum()
    if noise_mode == "per-pair":
        return priors.alpha + 0.5 * counts, priors.beta + 0.5 * rss
    raise ValueError(f"unknown tensor noise mode {noise_mode!r}")


def _sample_tau(rss, counts, priors, noise_mode, rng):
    pooled = dist.sample_gamma(priors.alpha + 0.5 * counts.sum(), priors.beta + 0.5 * rss.sum(), rng)
    if noise_mode == "isotropic":
        return np.full(counts.shape, pooled)
    tau = np.empty(counts.shape)
    for idx in np.ndindex(counts.shape):
        draw = dist.sample_gamma(priors.alpha + 0.5 * counts[idx], priors.beta + 0.5 * rss[idx], rng)
        tau[idx] = draw if counts[idx] >= MIN_FIBER_OBS else pooled
    return tau


def init_state(data, config, rng, freeze_v=False):
    R, d = config.rank, config.n_lags
    M, N, T = data.shape
    A = np.eye(R) if config.dynamics_mode == "identity" else np.zeros((R * d, R))
    V = np.ones((N, R)) if freeze_v else rng.standard_normal((N, R))
    return BttfState(
        U=rng.standard_normal((M, R)),
        V=V,
        X=rng.standard_normal((T, R)),
        A=A,
        Sigma=np.eye(R),
        tau=np.ones((M, N)),
        mu_u=np.zeros(R),
        Lambda_u=np.eye(R),
        mu_v=np.zeros(R),
        Lambda_v=np.eye(R),
    )


class _PreparedTensor:
    def __init__(self, data):
        M, N, T = data.shape
        self.shape = data.shape
        self.Y = np.ascontiguousarray(data.filled(0.0))
        self.M = data.mask.astype(float)
        self.counts = data.mask.sum(axis=2)
        self.n_obs = int(self.counts.sum())
        # slices for the V update: (N, M*T)
        self.Y_v = np.ascontiguousarray(self.Y.transpose(1, 0, 2).reshape(N, M * T))
        self.M_v = np.ascontiguousarray(self.M.transpose(1, 0, 2).reshape(N, M * T))
        self.Y_u = self.Y.reshape(M, N * T)
        self.M_u = self.M.reshape(M, N * T)
        self.Y_t = np.ascontiguousarray(self.Y.reshape(M * N, T).T)
        self.M_t = np.ascontiguousarray(self.M.reshape(M * N, T).T)


def _draw_rows(weights, feats, values, mu, Lam, rng):
    G, b = kernels.masked_gram(weights, feats, values)
    z = rng.standard_normal(b.shape)
    return kernels.sample_canonical_batch(G + Lam, b + Lam @ mu, z)


def _sweep_tensor(state, prep, config, priors, rng, sweep_no=0, freeze_v=False):
    s = state.copy()
    M, N, T = prep.shape
    phase = "factor hyperparameters"
    try:
        s.mu_u, s.Lambda_u = sample_factor_hyper(s.U.T, priors, rng)
        if not freeze_v:
            s.mu_v, s.Lambda_v = sample_factor_hyper(s.V.T, priors, rng)

        phase = "mode-1 factors"
        w_u = prep.M_u * np.repeat(s.tau, T, axis=1)
        s.U = _draw_rows(w_u, khatri_rao(s.V, s.X), prep.Y_u, s.mu_u, s.Lambda_u, rng)

        if not freeze_v:
            phase = "mode-2 factors"
            w_v = prep.M_v * np.repeat(s.tau.T, T, axis=1)
            s.V = _draw_rows(w_v, khatri_rao(s.U, s.X), prep.Y_v, s.mu_v, s.Lambda_v, rng)

        phase = "dynamics"
        X = np.ascontiguousarray(s.X)
        s.A, s.Sigma = _dynamics.sample_dynamics(X, config.lags, priors, config.dynamics_mode, rng)

        phase = "temporal factors"
        w_t = prep.M_t * s.tau.ravel()[None, :]
        Gt, bt = kernels.masked_gram(w_t, khatri_rao(s.U, s.V), prep.Y_t)
        _dynamics.sweep(Gt, bt, X, s.A, s.Sigma, config.lags, rng)
        s.X = X

        phase = "precision"
        resid = (prep.Y - np.einsum("ir,jr,tr->ijt", s.U, s.V, s.X)) * prep.M
        rss = np.sum(resid ** 2, axis=2)
        s.tau = _sample_tau(rss, prep.counts, priors, config.noise_mode, rng)
    except dist.IndefiniteMatrixError as err:
        raise SamplerError(sweep_no, phase, err) from err
    return s, rss


def _tensor_config(config):
    # a tensor's series are its (i, j) fibers, so per-series means per-pair
    config = config.with_noise_default("isotropic")
    if config.noise_mode == "per-series":
        config = replace(config, noise_mode="per-pair")
    return config


def gibbs_step_tensor(state, data, config, rng, priors=None, sweep_no=0, freeze_v=False):
    """One sweep: (mu_u, Lambda_u, mu_v, Lambda_v), U, V, (Sigma, A), x_1..x_T, tau."""
    priors = (priors or HyperPriors()).resolve(config.rank, config.n_lags)
    config = _tensor_config(config)
    new, _ = _sweep_tensor(state, _PreparedTensor(data), config, priors, rng, sweep_no, freeze_v)
    return new


def impute_tensor(data, config, priors=None, rng=None, init=None, keep_chain=False, keep_samples=False,
                  freeze_v=False, callback=None):
    """Gibbs imputation for a tensor series; returns a tensor-shaped summary.

    ``freeze_v`` keeps V at all ones and skips its updates; it exists for
    reduction checks against the matrix sampler.
    """
    if not isinstance(data, SeriesTensor):
        raise TypeError("impute_tensor expects a SeriesTensor")
    config = _tensor_config(config)
    if config.noise_mode not in TENSOR_NOISE_MODES:
        raise ValueError(f"tensor noise mode must be one of {TENSOR_NOISE_MODES}")
    config.check_length(data.n_steps)
    rng = dist.make_rng(rng)
    priors = (priors or HyperPriors()).resolve(config.rank, config.n_lags)
    state = init.copy() if init is not None else init_state(data, config, rng, freeze_v)

    def sweep_fn(st, prep, cfg, pri, r, it):
        return _sweep_tensor(st, prep, cfg, pri, r, it, freeze_v)

    def snap(st):
        return TensorChainSample(st.U.copy(), st.V.copy(), st.X.copy(), st.A.copy(), st.Sigma.copy(), st.tau.copy())

    _, summary = run_chain(
        data, config, priors, rng, state, _PreparedTensor(data), keep_chain, keep_samples, snap, sweep_fn, callback
    )
    summary.empty_series = np.argwhere(~data.mask.any(axis=2))
    return summary
