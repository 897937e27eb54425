"""Bayesian temporal matrix factorization: conditionals, Gibbs sweep, imputation.

Shapes follow the model: ``W`` is (R, N) with column ``w_i`` per series,
``X`` is (R, T) with column ``x_t`` per step. Time indices are 0-based, so
the first ``h_d`` steps (``t < h_d``) carry the N(0, I) initial prior.
"""
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _dynamics, dist, kernels
from .data import SeriesMatrix

logger = logging.getLogger(__name__)

NOISE_MODES = ("per-series", "isotropic")
DYNAMICS_MODES = ("full", "diagonal", "identity")


class SamplerError(RuntimeError):
    """Numerical failure inside a Gibbs sweep."""

    def __init__(self, sweep, phase, cause):
        self.sweep = sweep
        self.phase = phase
        super().__init__(f"sweep {sweep}, phase {phase}: {cause}")


@dataclass
class HyperPriors:
    """Fixed prior constants. ``None`` fields take the non-informative defaults.

    ``nu0`` is the Wishart dof of the factor hyperprior and ``nu0_iw`` the
    inverse-Wishart dof of the innovation covariance; both default to R.
    """

    beta0: float = 1.0
    nu0: float = None
    mu0: np.ndarray = None
    W0: np.ndarray = None
    S0: np.ndarray = None
    Psi0: np.ndarray = None
    M0: np.ndarray = None
    alpha: float = 1e-6
    beta: float = 1e-6
    nu0_iw: float = None

    def resolve(self, rank, n_lags):
        R, d = rank, n_lags
        p = replace(
            self,
            nu0=float(R if self.nu0 is None else self.nu0),
            nu0_iw=float(R if self.nu0_iw is None else self.nu0_iw),
            mu0=np.zeros(R) if self.mu0 is None else np.asarray(self.mu0, dtype=float),
            W0=np.eye(R) if self.W0 is None else np.asarray(self.W0, dtype=float),
            S0=np.eye(R) if self.S0 is None else np.asarray(self.S0, dtype=float),
            Psi0=np.eye(R * d) if self.Psi0 is None else np.asarray(self.Psi0, dtype=float),
            M0=np.zeros((R * d, R)) if self.M0 is None else np.asarray(self.M0, dtype=float),
        )
        if p.nu0 < R or p.nu0_iw < R:
            raise ValueError(f"prior degrees of freedom must be >= R = {R}")
        if not (p.alpha > 0 and p.beta > 0 and p.beta0 > 0):
            raise ValueError("alpha, beta and beta0 must be positive")
        for name, mat, n in (("W0", p.W0, R), ("S0", p.S0, R), ("Psi0", p.Psi0, R * d)):
            if mat.shape != (n, n) or not dist.is_spd(mat):
                raise ValueError(f"{name} must be a positive-definite {n}x{n} matrix")
        if p.M0.shape != (R * d, R) or p.mu0.shape != (R,):
            raise ValueError("M0 / mu0 have the wrong shape")
        return p


@dataclass(frozen=True)
class ModelConfig:
    rank: int
    lags: tuple = (1,)
    noise_mode: str = None
    dynamics_mode: str = "full"
    burn_in: int = 1000
    samples: int = 200

    def __post_init__(self):
        object.__setattr__(self, "lags", _dynamics.check_lags(self.lags))
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.samples < 1 or self.burn_in < 0:
            raise ValueError("need samples >= 1 and burn_in >= 0")
        if self.noise_mode is not None and self.noise_mode not in NOISE_MODES + ("per-pair",):
            raise ValueError(f"unknown noise mode {self.noise_mode!r}")
        if self.dynamics_mode not in DYNAMICS_MODES:
            raise ValueError(f"unknown dynamics mode {self.dynamics_mode!r}")
        if self.dynamics_mode == "identity" and self.lags != (1,):
            raise ValueError("identity dynamics requires lags == (1,)")

    def with_noise_default(self, default):
        """Copy with ``noise_mode`` filled in when unset."""
        if self.noise_mode is not None:
            return self
        return replace(self, noise_mode=default)

    @property
    def n_lags(self):
        return len(self.lags)

    def check_length(self, T):
        if self.lags[-1] >= T:
            raise ValueError(f"largest lag {self.lags[-1]} must be < T = {T}")


@dataclass
class BtmfState:
    W: np.ndarray
    X: np.ndarray
    A: np.ndarray
    Sigma: np.ndarray
    tau: np.ndarray
    mu_w: np.ndarray
    Lambda_w: np.ndarray

    def copy(self):
        return BtmfState(*(np.array(getattr(self, f)) for f in self.__dataclass_fields__))

    def reconstruct(self):
        return self.W.T @ self.X


@dataclass
class ChainSample:
    """One retained Gibbs draw, in the generic form used for forecasting."""

    W: np.ndarray
    X: np.ndarray
    A: np.ndarray
    Sigma: np.ndarray
    tau: np.ndarray

    @property
    def X_rows(self):
        return np.ascontiguousarray(self.X.T)

    def loadings(self):
        return self.W.T

    def noise_precision(self):
        return self.tau


@dataclass
class PosteriorSummary:
    mean: np.ndarray
    std: np.ndarray
    q05: np.ndarray
    q95: np.ndarray
    n_samples: int
    empty_series: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    trace: dict = field(default_factory=dict)
    chain: list = None
    samples: np.ndarray = None
    state: object = None


# --------------------------------------------------------------------------
# conditional posteriors


def posterior_factor_hyper(W, priors):
    """Gaussian-Wishart posterior (mu*, beta*, W*, nu*) of the factor mean and precision.

    ``W`` holds one factor per column.
    """
    W = np.asarray(W, dtype=float)
    R, N = W.shape
    if N == 0:
        return np.array(priors.mu0, dtype=float), float(priors.beta0), np.array(priors.W0, dtype=float), float(priors.nu0)
    wbar = W.mean(axis=1)
    dev = W - wbar[:, None]
    S = dev @ dev.T / N
    beta0 = priors.beta0
    mu_star = (beta0 * priors.mu0 + N * wbar) / (beta0 + N)
    diff = wbar - priors.mu0
    W_star_inv = dist.spd_inverse(priors.W0) + N * S + (beta0 * N / (beta0 + N)) * np.outer(diff, diff)
    W_star = dist.spd_inverse(dist.symmetrize(W_star_inv))
    return mu_star, float(beta0 + N), W_star, float(priors.nu0 + N)


def sample_factor_hyper(W, priors, rng):
    mu_star, beta_star, W_star, nu_star = posterior_factor_hyper(W, priors)
    Lam = dist.sample_wishart(W_star, nu_star, rng)
    mu = dist.sample_mvn(mu_star, beta_star * Lam, rng, precision=True)
    return mu, Lam


def posterior_dynamics(X, lags, priors):
    """MNIW posterior (M*, Psi*, S*, nu*) of the VAR on the columns of ``X``."""
    X = np.asarray(X, dtype=float)
    return _dynamics.posterior_dynamics(X.T, lags, priors.M0, priors.Psi0, priors.S0, priors.nu0_iw)


def posterior_spatial_factor(i, data, X, tau_i, mu_w, Lambda_w):
    """Mean and precision of w_i given the temporal factors."""
    obs = data.mask[i]
    Xo = np.asarray(X, dtype=float)[:, obs]
    y = data.values[i, obs]
    prec = dist.symmetrize(tau_i * Xo @ Xo.T + Lambda_w)
    mean = dist.spd_inverse(prec) @ (tau_i * Xo @ y + Lambda_w @ mu_w)
    return mean, prec


def posterior_temporal_factor(t, data, W, X, tau, A, Sigma, lags):
    """Mean and covariance of x_t (0-based) given W, the other x_s, A, Sigma and tau.

    Only the columns of ``X`` other than ``t`` are read; the horizon of the
    future VAR terms is ``X.shape[1]``.
    """
    lags = _dynamics.check_lags(lags)
    W = np.asarray(W, dtype=float)
    obs = data.mask[:, t]
    Wo = W[:, obs]
    wt = np.asarray(tau, dtype=float)[obs]
    G = (Wo * wt) @ Wo.T
    b = (Wo * wt) @ data.values[obs, t]
    P, q = _dynamics.temporal_conditional(t, G, b, np.asarray(X, dtype=float).T, A, Sigma, lags)
    cov = dist.spd_inverse(P)
    return cov @ q, cov


def posterior_precision(i, data, W, X, priors, noise_mode="per-series"):
    """Gamma (shape, rate) posterior of tau_i, or of the pooled tau when isotropic."""
    W = np.asarray(W, dtype=float)
    X = np.asarray(X, dtype=float)
    if noise_mode == "isotropic":
        resid = np.where(data.mask, data.filled() - W.T @ X, 0.0)
        n = int(data.mask.sum())
    else:
        obs = data.mask[i]
        resid = data.values[i, obs] - W[:, i] @ X[:, obs]
        n = int(obs.sum())
    return priors.alpha + 0.5 * n, priors.beta + 0.5 * float(np.sum(resid ** 2))


# --------------------------------------------------------------------------
# sweep


def init_state(data, config, rng):
    """W, X iid N(0, 1); A = 0; Sigma = I; tau = 1."""
    R, d = config.rank, config.n_lags
    N, T = data.shape
    A = np.zeros((R * d, R))
    if config.dynamics_mode == "identity":
        A = np.eye(R)
    return BtmfState(
        W=rng.standard_normal((R, N)),
        X=rng.standard_normal((R, T)),
        A=A,
        Sigma=np.eye(R),
        tau=np.ones(N),
        mu_w=np.zeros(R),
        Lambda_w=np.eye(R),
    )


class _Prepared:
    # per-chain constants: zero-filled values and mask in both orientations
    def __init__(self, data):
        self.Y = np.ascontiguousarray(data.filled(0.0))
        self.M = np.ascontiguousarray(data.mask.astype(float))
        self.Yt = np.ascontiguousarray(self.Y.T)
        self.Mt = np.ascontiguousarray(self.M.T)
        self.counts = data.mask.sum(axis=1)
        self.n_obs = int(self.counts.sum())


def sample_precision(resid_sq_by_series, counts, priors, noise_mode, rng):
    if noise_mode == "isotropic":
        tau = dist.sample_gamma(priors.alpha + 0.5 * counts.sum(), priors.beta + 0.5 * resid_sq_by_series.sum(), rng)
        return np.full(counts.shape, tau)
    return np.array(
        [
            dist.sample_gamma(priors.alpha + 0.5 * c, priors.beta + 0.5 * s, rng)
            for c, s in zip(counts, resid_sq_by_series)
        ]
    )


def _sweep(state, prep, config, priors, rng, sweep_no=0):
    s = state.copy()
    lags = config.lags
    phase = "factor hyperparameters"
    try:
        s.mu_w, s.Lambda_w = sample_factor_hyper(s.W, priors, rng)

        phase = "spatial factors"
        weights = prep.M * s.tau[:, None]
        G, b = kernels.masked_gram(weights, s.X.T, prep.Y)
        prec = G + s.Lambda_w
        lin = b + s.Lambda_w @ s.mu_w
        z = rng.standard_normal(lin.shape)
        s.W = kernels.sample_canonical_batch(prec, lin, z).T.copy()

        phase = "dynamics"
        Xr = np.ascontiguousarray(s.X.T)
        s.A, s.Sigma = _dynamics.sample_dynamics(Xr, lags, priors, config.dynamics_mode, rng)

        phase = "temporal factors"
        Gt, bt = kernels.masked_gram(np.ascontiguousarray(weights.T), s.W.T, prep.Yt)
        _dynamics.sweep(Gt, bt, Xr, s.A, s.Sigma, lags, rng)
        s.X = np.ascontiguousarray(Xr.T)

        phase = "precision"
        resid = (prep.Y - s.W.T @ s.X) * prep.M
        rss = np.sum(resid ** 2, axis=1)
        s.tau = sample_precision(rss, prep.counts, priors, config.noise_mode, rng)
    except dist.IndefiniteMatrixError as err:
        raise SamplerError(sweep_no, phase, err) from err
    return s, rss


def gibbs_step(state, data, config, rng, priors=None, sweep_no=0):
    """One full sweep: hyperparameters, W, (Sigma, A), x_1..x_T ascending, tau."""
    priors = (priors or HyperPriors()).resolve(config.rank, config.n_lags)
    config = config.with_noise_default("per-series")
    new, _ = _sweep(state, _Prepared(data), config, priors, rng, sweep_no)
    return new


def _summarize(samples):
    q05, q95 = np.quantile(samples, [0.05, 0.95], axis=0)
    return samples.mean(axis=0), samples.std(axis=0), q05, q95


def run_chain(data, config, priors, rng, init, prep, keep_chain, keep_samples, sample_fn, sweep_fn, callback=None):
    # generic burn-in / retain loop shared with the tensor sampler
    state = init
    total = config.burn_in + config.samples
    retained = np.empty((config.samples,) + data.shape)
    chain = [] if keep_chain else None
    train_rmse = np.empty(total)
    t0 = time.perf_counter()
    for it in range(total):
        state, rss = sweep_fn(state, prep, config, priors, rng, it)
        train_rmse[it] = np.sqrt(rss.sum() / max(prep.n_obs, 1))
        if it >= config.burn_in:
            k = it - config.burn_in
            retained[k] = state.reconstruct()
            if keep_chain:
                chain.append(sample_fn(state))
        if callback is not None:
            callback(it, state)
        if (it + 1) % 100 == 0:
            logger.debug("sweep %d/%d train rmse %.5g", it + 1, total, train_rmse[it])
    elapsed = time.perf_counter() - t0
    mean, std, q05, q95 = _summarize(retained)
    trace = {"train_rmse": train_rmse, "seconds": elapsed}
    return state, PosteriorSummary(
        mean=mean,
        std=std,
        q05=q05,
        q95=q95,
        n_samples=config.samples,
        trace=trace,
        chain=chain,
        samples=retained if keep_samples else None,
        state=state,
    )


def impute(data, config, priors=None, rng=None, init=None, keep_chain=False, keep_samples=False, callback=None):
    """Burn in ``config.burn_in`` sweeps, then average ``config.samples`` draws of W^T X.

    Returns a :class:`PosteriorSummary` with cellwise mean, std and 5%/95%
    quantiles over the retained draws. Series without any observation are
    listed in ``empty_series`` and imputed from their prior-predictive.
    """
    if not isinstance(data, SeriesMatrix):
        raise TypeError("impute expects a SeriesMatrix; use btf.bttf.impute_tensor for tensors")
    config = config.with_noise_default("per-series")
    if config.noise_mode == "per-pair":
        raise ValueError("per-pair noise applies to tensors only")
    config.check_length(data.n_steps)
    rng = dist.make_rng(rng)
    priors = (priors or HyperPriors()).resolve(config.rank, config.n_lags)
    state = init.copy() if init is not None else init_state(data, config, rng)
    empty = np.flatnonzero(~data.mask.any(axis=1))
    if empty.size:
        logger.warning("%d series have no observations; imputed from the prior", empty.size)

    def snap(s):
        return ChainSample(s.W.copy(), s.X.copy(), s.A.copy(), s.Sigma.copy(), s.tau.copy())

    _, summary = run_chain(
        data, config, priors, rng, state, _Prepared(data), keep_chain, keep_samples, snap, _sweep, callback
    )
    summary.empty_series = empty
    return summary
