"""Multi-step rolling prediction on top of retained Gibbs draws.

Each retained draw (W or U/V, X, A, Sigma, tau) is rolled forward on its
own: future temporal factors are drawn from the VAR, and once a window's
data is revealed the last ``gamma * delta`` temporal factors are re-drawn
against the fixed loadings. Loadings are never re-sampled.
"""
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _dynamics, dist, kernels
from .data import UndefinedMetricError, mape

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RollingConfig:
    horizon: int
    windows: int
    gamma: int = 10
    samples: int = None
    passes: int = 1
    retrain_threshold: float = None

    def __post_init__(self):
        if self.horizon < 1 or self.windows < 1 or self.gamma < 1 or self.passes < 1:
            raise ValueError("horizon, windows, gamma and passes must all be >= 1")
        if self.samples is not None and self.samples < 1:
            raise ValueError("samples must be >= 1")


@dataclass
class ForecastWindow:
    index: int
    start: int
    mean: np.ndarray
    std: np.ndarray
    q05: np.ndarray
    q95: np.ndarray
    samples: np.ndarray = None
    factors: np.ndarray = None

    @property
    def stop(self):
        return self.start + self.mean.shape[-1]


@dataclass
class ForecastResult:
    windows: list
    train_steps: int
    metadata: dict = field(default_factory=dict)

    @property
    def mean(self):
        return np.concatenate([w.mean for w in self.windows], axis=-1)

    @property
    def std(self):
        return np.concatenate([w.std for w in self.windows], axis=-1)

    @property
    def times(self):
        return np.arange(self.windows[0].start, self.windows[-1].stop)


def _noise_factor(Sigma):
    Sigma = np.asarray(Sigma, dtype=float)
    if not np.any(Sigma):
        return np.zeros_like(Sigma)
    return dist.cholesky(Sigma)


def _extend(X, A, Sigma, lags, horizon, rng):
    T, R = X.shape
    out = np.empty((T + horizon, R))
    out[:T] = X
    L = _noise_factor(Sigma)
    z = rng.standard_normal((horizon, R))
    for k in range(horizon):
        t = T + k
        out[t] = _dynamics.var_mean(out, A, lags, t) + L @ z[k]
    return out


def draw_future_factors(sample, lags, horizon, rng):
    """Draw x_{T+1..T+horizon} sequentially from the sample's VAR; returns (R, horizon)."""
    lags = _dynamics.check_lags(lags)
    X = sample.X_rows
    if X.shape[0] < lags[-1]:
        raise ValueError("history shorter than the largest lag")
    return _extend(X, sample.A, sample.Sigma, lags, horizon, rng)[X.shape[0]:].T


def _flatten(history):
    # (Q, T) values/mask with the leading dims collapsed, Q ordered like loadings()
    T = history.n_steps
    return history.filled(0.0).reshape(-1, T), history.mask.reshape(-1, T)


def update_window_factors(sample, history, lags, gamma, delta, rng, passes=1):
    """Re-draw the last ``gamma * delta`` temporal factors given the revealed data.

    ``sample.X_rows`` must cover exactly the steps of ``history``. Returns
    the updated (T, R) factor rows; the input sample is not modified.
    """
    lags = _dynamics.check_lags(lags)
    X = np.array(sample.X_rows, dtype=float)
    T, R = X.shape
    if history.n_steps != T:
        raise ValueError(f"history has {history.n_steps} steps but the sample has {T} factors")
    width = gamma * delta
    start = T - width
    if start < 0:
        warnings.warn(f"update window of {width} steps exceeds the {T}-step history; clipped", stacklevel=2)
        start = 0
    lo = max(0, start - lags[-1])
    Y, Mk = _flatten(history)
    F = np.asarray(sample.loadings(), dtype=float)
    tau = np.asarray(sample.noise_precision(), dtype=float)
    w = (Mk[:, lo:] * tau[:, None]).T
    G, b = kernels.masked_gram(np.ascontiguousarray(w), F, np.ascontiguousarray(Y[:, lo:].T))
    sub = X[lo:]
    for _ in range(passes):
        _dynamics.sweep(G, b, sub, sample.A, sample.Sigma, lags, rng, start - lo, T - lo)
    return X


class _Rolled:
    # one retained draw with its extended temporal factors
    def __init__(self, sample, X):
        self.sample = sample
        self.X_rows = X
        self.A = sample.A
        self.Sigma = sample.Sigma

    def loadings(self):
        return self.sample.loadings()

    def noise_precision(self):
        return self.sample.noise_precision()


def _summ(preds, factors, lead_shape, index, start, keep):
    preds = preds.reshape((preds.shape[0],) + tuple(lead_shape) + (factors.shape[1],))
    q05, q95 = np.quantile(preds, [0.05, 0.95], axis=0)
    return ForecastWindow(
        index, start, preds.mean(axis=0), preds.std(axis=0), q05, q95,
        preds if keep else None, factors if keep else None,
    )


def rolling_forecast(data, chain, train_steps, config, lags, rng=None, retrain=None, keep_samples=False):
    """Predict ``config.windows`` blocks of ``config.horizon`` steps after ``train_steps``.

    ``chain`` is the list of retained draws from training on the first
    ``train_steps`` steps of ``data``. Window ``s`` (0-based) only reads data
    before ``train_steps + s * horizon``. When ``config.retrain_threshold`` is
    set and ``retrain`` is given, a window whose MAPE on the revealed data
    exceeds the threshold triggers ``retrain(history) -> chain``.
    """
    lags = _dynamics.check_lags(lags)
    rng = dist.make_rng(rng)
    delta, S = config.horizon, config.windows
    T = int(train_steps)
    if T + delta * S > data.n_steps:
        raise ValueError(
            f"{S} windows of {delta} steps after step {T} need {T + delta * S} steps; data has {data.n_steps}"
        )
    if not chain:
        raise ValueError("empty chain")
    if config.samples is not None:
        if config.samples > len(chain):
            raise ValueError(f"{config.samples} samples requested but the chain holds {len(chain)}")
        chain = chain[-config.samples:]
    lead = data.shape[:-1]
    rolled = [_Rolled(c, np.array(c.X_rows, dtype=float)) for c in chain]
    if any(r.X_rows.shape[0] != T for r in rolled):
        raise ValueError("chain temporal factors must cover exactly the training steps")
    rngs = rng.spawn(len(rolled))
    windows, retrains = [], []
    for s in range(S):
        t_cur = T + delta * s
        if s > 0:
            history = data.slice_time(0, t_cur)
            prev = windows[-1]
            if retrain is not None and config.retrain_threshold is not None:
                seen = history.mask[..., prev.start:t_cur]
                try:
                    err = mape(history.values[..., prev.start:t_cur][seen], prev.mean[seen])
                except UndefinedMetricError:
                    err = 0.0
                if err > config.retrain_threshold:
                    logger.info("window %d MAPE %.3g above threshold; retraining", s - 1, err)
                    chain = retrain(history)
                    rolled = [_Rolled(c, np.array(c.X_rows, dtype=float)) for c in chain]
                    rngs = rng.spawn(len(rolled))
                    retrains.append(s)
            for r, g in zip(rolled, rngs):
                if r.X_rows.shape[0] == t_cur and s not in retrains:
                    r.X_rows = update_window_factors(r, history, lags, config.gamma, delta, g, config.passes)
        preds, futs = [], []
        for r, g in zip(rolled, rngs):
            ext = _extend(r.X_rows, r.A, r.Sigma, lags, delta, g)
            futs.append(ext[t_cur:])
            preds.append(np.asarray(r.loadings()) @ futs[-1].T)
            r.X_rows = ext
        windows.append(_summ(np.stack(preds), np.stack(futs), lead, s, t_cur, keep_samples))
    meta = {"ingestion": "masked stream", "retrained_at": retrains, "samples": len(rolled)}
    return ForecastResult(windows, T, meta)


def persistence_forecast(data, train_steps, horizon, windows):
    """Naive baseline: repeat the last value seen before each window.

    The last observed value of each series is carried forward across gaps.
    """
    T = int(train_steps)
    vals = data.values.reshape(-1, data.n_steps)
    out = np.full((vals.shape[0], horizon * windows), np.nan)
    for s in range(windows):
        t_cur = T + horizon * s
        last = np.full(vals.shape[0], np.nan)
        for q in range(vals.shape[0]):
            seen = np.flatnonzero(np.isfinite(vals[q, :t_cur]))
            if seen.size:
                last[q] = vals[q, seen[-1]]
        out[:, s * horizon:(s + 1) * horizon] = last[:, None]
    return out.reshape(data.shape[:-1] + (horizon * windows,))
