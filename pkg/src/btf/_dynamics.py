"""VAR machinery shared by the matrix and tensor samplers.

Temporal factors are handled here as rows: ``X`` has shape (T, R) and
``X[t]`` is the factor at (0-based) time ``t``. The stacked coefficient
matrix ``A`` has shape (R*d, R) with block ``k`` equal to ``A_k^T``, so
that ``x_t = A^T v_t`` with ``v_t`` stacking ``x_{t-h_1}, ..., x_{t-h_d}``.
"""
import numpy as np

from . import dist, kernels


def check_lags(lags):
    lags = tuple(int(h) for h in lags)
    if not lags:
        raise ValueError("lag set must not be empty")
    if lags[0] < 1 or any(b <= a for a, b in zip(lags, lags[1:])):
        raise ValueError(f"lags must be strictly increasing positive integers, got {lags}")
    return lags


def blocks_from_stacked(A, rank, n_lags):
    """(R*d, R) stacked matrix -> (d, R, R) array of A_k."""
    return np.ascontiguousarray(np.asarray(A).reshape(n_lags, rank, rank).transpose(0, 2, 1))


def stacked_from_blocks(blocks):
    d, R, _ = blocks.shape
    return np.ascontiguousarray(blocks.transpose(0, 2, 1).reshape(d * R, R))


def lag_design(X, lags):
    """Response rows Z = x_{h_d..T-1} and regressor rows Q = v_{h_d..T-1}."""
    T, R = X.shape
    hd = lags[-1]
    Z = X[hd:]
    Q = np.concatenate([X[hd - h:T - h] for h in lags], axis=1) if T > hd else np.zeros((0, R * len(lags)))
    return Z, Q


def posterior_dynamics(X, lags, M0, Psi0, S0, nu0):
    """Matrix-normal inverse-Wishart posterior parameters (M*, Psi*, S*, nu*).

    With no regression rows (T == h_d) the prior is returned unchanged.
    """
    lags = check_lags(lags)
    X = np.asarray(X, dtype=float)
    Z, Q = lag_design(X, lags)
    if Z.shape[0] == 0:
        return np.array(M0, dtype=float), np.array(Psi0, dtype=float), np.array(S0, dtype=float), float(nu0)
    Psi0_inv = dist.spd_inverse(Psi0)
    post_prec = dist.symmetrize(Psi0_inv + Q.T @ Q)
    Psi_star = dist.spd_inverse(post_prec)
    M_star = Psi_star @ (Psi0_inv @ M0 + Q.T @ Z)
    # algebraically S0 + Z'Z + M0'Psi0^-1 M0 - M*'Psi*^-1 M*, but PD by construction
    E = Z - Q @ M_star
    D = M_star - M0
    S_star = dist.symmetrize(S0 + E.T @ E + D.T @ Psi0_inv @ D)
    return M_star, Psi_star, S_star, float(nu0 + Z.shape[0])


def sample_dynamics(X, lags, priors, mode, rng):
    """Draw (A, Sigma) given temporal factor rows ``X``.

    ``mode`` is ``full`` (MNIW conditional), ``diagonal`` (each A_k diagonal,
    per-factor AR conditionals) or ``identity`` (A_1 = I held fixed).
    """
    T, R = X.shape
    d = len(lags)
    if mode == "identity":
        Z, Q = lag_design(X, lags)
        E = Z - Q
        Sigma = dist.sample_inv_wishart(dist.symmetrize(priors.S0 + E.T @ E), priors.nu0_iw + Z.shape[0], rng)
        return np.eye(R), Sigma

    M_star, Psi_star, S_star, nu_star = posterior_dynamics(X, lags, priors.M0, priors.Psi0, priors.S0, priors.nu0_iw)
    Sigma = dist.sample_inv_wishart(S_star, nu_star, rng)
    if mode == "full":
        A = dist.sample_matrix_normal(M_star, Psi_star, Sigma, rng)
        return A, Sigma
    if mode != "diagonal":
        raise ValueError(f"unknown dynamics mode {mode!r}")

    Sigma = np.diag(np.diag(Sigma))
    Z, Q = lag_design(X, lags)
    Psi0 = np.asarray(priors.Psi0, dtype=float)
    M0 = np.asarray(priors.M0, dtype=float)
    blocks = np.zeros((d, R, R))
    for r in range(R):
        idx = np.arange(d) * R + r
        P0_inv = dist.spd_inverse(Psi0[np.ix_(idx, idx)])
        m0 = M0[idx, r]
        Qr = Q[:, idx]
        prec = dist.symmetrize(P0_inv + Qr.T @ Qr)
        lin = P0_inv @ m0 + Qr.T @ Z[:, r]
        theta = dist.sample_canonical(prec / Sigma[r, r], lin / Sigma[r, r], rng)
        blocks[:, r, r] = theta
    return stacked_from_blocks(blocks), Sigma


def temporal_conditional(t, G_t, b_t, X, A, Sigma, lags):
    """Precision and linear term of x_t given everything else.

    Reference (non-kernel) evaluation used by the single-index posterior
    functions; the sweep itself goes through :func:`btf.kernels.temporal_sweep`.
    """
    T, R = X.shape
    d = len(lags)
    hd = lags[-1]
    blocks = blocks_from_stacked(A, R, d)
    Sinv = dist.spd_inverse(Sigma)
    P = np.array(G_t, dtype=float)
    q = np.array(b_t, dtype=float)
    if t >= hd:
        P += Sinv
        q += Sinv @ sum(blocks[l] @ X[t - lags[l]] for l in range(d))
    else:
        P += np.eye(R)
    for k in range(d):
        s = t + lags[k]
        if hd <= s < T:
            psi = X[s] - sum((blocks[l] @ X[s - lags[l]] for l in range(d) if l != k), np.zeros(R))
            P += blocks[k].T @ Sinv @ blocks[k]
            q += blocks[k].T @ Sinv @ psi
    return dist.symmetrize(P), q


def sweep(G, b, X, A, Sigma, lags, rng, start=0, stop=None):
    """Draw x_t for t in [start, stop) in ascending order, in place on ``X``."""
    T, R = X.shape
    stop = T if stop is None else stop
    z = np.zeros((T, R))
    z[start:stop] = rng.standard_normal((stop - start, R))
    blocks = blocks_from_stacked(A, R, len(lags))
    Sinv = dist.spd_inverse(Sigma)
    kernels.temporal_sweep(G, b, X, blocks, Sinv, np.asarray(lags), z, start, stop)


def var_mean(X, A, lags, t):
    """Conditional VAR mean sum_k A_k x_{t-h_k}."""
    R = X.shape[1]
    blocks = blocks_from_stacked(A, R, len(lags))
    return sum(blocks[k] @ X[t - h] for k, h in enumerate(lags))
