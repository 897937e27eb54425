"""Reference computations that do not share code with the package.

Each conditional posterior in the package is checked against one of:

* a brute-force log joint density, differentiated numerically (Gaussian
  conditionals: the log joint is quadratic in the block, so central
  differences recover the exact precision and mean);
* grid quadrature of the unnormalized conditional (scalar instances, see
  ``posterior_checks``);
* log-density ratios against ``scipy.stats`` densities, which must be
  constant when the posterior parameters are right.
"""
import numpy as np
from scipy import stats


# --------------------------------------------------------------------------
# brute-force log joint densities


def var_blocks(A, R):
    """Split the stacked (R*d, R) coefficient matrix into [A_1, ..., A_d]; row block k is A_k^T."""
    return [A[k * R:(k + 1) * R].T for k in range(A.shape[0] // R)]


def var_logpdf_terms(X_rows, A_blocks, Sigma, lags):
    """sum_t log N(x_t | sum_k A_k x_{t-h_k}, Sigma) for t >= h_d, plus N(0, I) for t < h_d."""
    T, R = X_rows.shape
    hd = max(lags)
    total = 0.0
    for t in range(T):
        if t < hd:
            total += stats.multivariate_normal(np.zeros(R), np.eye(R)).logpdf(X_rows[t])
        else:
            mean = np.zeros(R)
            for k, h in enumerate(lags):
                mean = mean + A_blocks[k] @ X_rows[t - h]
            total += stats.multivariate_normal(mean, Sigma).logpdf(X_rows[t])
    return total


def log_joint_matrix(Y, mask, W, X_rows, tau, A_blocks, Sigma, lags):
    """log p(Y_obs | W, X, tau) + log p(X | A, Sigma) with W (R, N), X_rows (T, R)."""
    N, T = Y.shape
    total = 0.0
    for i in range(N):
        for t in range(T):
            if mask[i, t]:
                total += stats.norm(W[:, i] @ X_rows[t], 1.0 / np.sqrt(tau[i])).logpdf(Y[i, t])
    return total + var_logpdf_terms(X_rows, A_blocks, Sigma, lags)


def log_joint_tensor(Y, mask, U, V, X_rows, tau, A_blocks, Sigma, lags):
    M, N, T = Y.shape
    total = 0.0
    for i in range(M):
        for j in range(N):
            for t in range(T):
                if mask[i, j, t]:
                    mu = np.sum(U[i] * V[j] * X_rows[t])
                    total += stats.norm(mu, 1.0 / np.sqrt(tau[i, j])).logpdf(Y[i, j, t])
    return total + var_logpdf_terms(X_rows, A_blocks, Sigma, lags)


def gaussian_from_logdensity(f, x0, step=0.5):
    """(mean, precision) of a Gaussian from its log density via central differences.

    Exact up to rounding when ``f`` is quadratic, which holds for every
    Gaussian conditional here.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    grad = np.empty(n)
    hess = np.empty((n, n))
    e = np.eye(n) * step
    f0 = f(x0)
    for a in range(n):
        grad[a] = (f(x0 + e[a]) - f(x0 - e[a])) / (2 * step)
        hess[a, a] = (f(x0 + e[a]) - 2 * f0 + f(x0 - e[a])) / step ** 2
        for b in range(a):
            hess[a, b] = hess[b, a] = (
                f(x0 + e[a] + e[b]) - f(x0 + e[a] - e[b]) - f(x0 - e[a] + e[b]) + f(x0 - e[a] - e[b])
            ) / (4 * step ** 2)
    prec = -hess
    return x0 + np.linalg.solve(prec, grad), prec


# --------------------------------------------------------------------------
# log-ratio checks against scipy densities


def gaussian_wishart_logpdf(mu, Lam, mu0, beta0, W0, nu0):
    return stats.wishart(df=nu0, scale=W0).logpdf(Lam) + stats.multivariate_normal(
        mu0, np.linalg.inv(beta0 * Lam)
    ).logpdf(mu)


def factor_hyper_unnormalized(mu, Lam, W, mu0, beta0, W0, nu0):
    """log prior + sum_i log N(w_i | mu, Lam^-1), W one factor per column."""
    cov = np.linalg.inv(Lam)
    lik = sum(stats.multivariate_normal(mu, cov).logpdf(W[:, i]) for i in range(W.shape[1]))
    return gaussian_wishart_logpdf(mu, Lam, mu0, beta0, W0, nu0) + lik


def mniw_logpdf(A, Sigma, M, Psi, S, nu):
    """log MN(A | M, Psi, Sigma) + log IW(Sigma | S, nu)."""
    return stats.matrix_normal(mean=M, rowcov=Psi, colcov=Sigma).logpdf(A) + stats.invwishart(
        df=nu, scale=S
    ).logpdf(Sigma)


def dynamics_unnormalized(A, Sigma, X_rows, lags, M0, Psi0, S0, nu0):
    """log MNIW prior + sum_{t >= h_d} log N(x_t | A^T v_t, Sigma), A stacked (R*d, R)."""
    T, R = X_rows.shape
    hd = max(lags)
    total = mniw_logpdf(A, Sigma, M0, Psi0, S0, nu0)
    for t in range(hd, T):
        v = np.concatenate([X_rows[t - h] for h in lags])
        total += stats.multivariate_normal(A.T @ v, Sigma).logpdf(X_rows[t])
    return total


def random_spd(rng, n, scale=1.0):
    G = rng.standard_normal((n, n))
    return scale * (G @ G.T / n + np.eye(n))


def ratio_spread(values):
    """Max absolute deviation of a list of log-ratios from their mean."""
    v = np.asarray(values)
    return float(np.max(np.abs(v - v.mean())))


# --------------------------------------------------------------------------
# persistence baseline


def persistence_one_step(values, start, stop):
    """y_hat_t = y_{t-1} for t in [start, stop), computed row by row."""
    out = np.empty((values.shape[0], stop - start))
    for i in range(values.shape[0]):
        for k, t in enumerate(range(start, stop)):
            out[i, k] = values[i, t - 1]
    return out
