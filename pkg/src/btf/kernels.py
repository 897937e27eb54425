"""Hot loops of the samplers, in a numba and a pure-numpy flavour.

Both flavours consume the same pre-drawn standard normals, so a chain run
under either backend follows the same random path and differs only by
floating-point rounding. The active flavour comes from
:func:`btf._backend.get_backend`.
"""
import numpy as np
from scipy.linalg import solve_triangular

from . import dist
from ._backend import HAVE_NUMBA, get_backend

if HAVE_NUMBA:
    from numba import njit
else:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


# --------------------------------------------------------------------------
# numpy flavour


def _masked_gram_np(weights, feats, values):
    P = weights.shape[0]
    Q, R = feats.shape
    outer = (feats[:, :, None] * feats[:, None, :]).reshape(Q, R * R)
    G = (weights @ outer).reshape(P, R, R)
    b = (weights * values) @ feats
    return G, b


def _draw_one_np(prec, lin, z):
    L = dist.cholesky(prec)
    y = solve_triangular(L, lin, lower=True)
    return solve_triangular(L.T, y + z, lower=False)


def _sample_canonical_batch_np(prec, lin, z):
    try:
        L = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        out = np.empty_like(lin)
        for p in range(prec.shape[0]):
            try:
                out[p] = _draw_one_np(prec[p], lin[p], z[p])
            except dist.IndefiniteMatrixError as err:
                raise dist.IndefiniteMatrixError(
                    err.pivot, f"precision of row {p} is not positive definite (pivot {err.pivot})"
                ) from None
        return out
    y = np.linalg.solve(L, (lin)[:, :, None])[:, :, 0]
    Lt = np.swapaxes(L, 1, 2)
    return np.linalg.solve(Lt, (y + z)[:, :, None])[:, :, 0]


def _temporal_sweep_np(G, b, X, Ablocks, Sinv, lags, z, start, stop):
    T, R = X.shape
    d = lags.shape[0]
    hd = lags[-1]
    AtSA = np.einsum("kji,jl,klm->kim", Ablocks, Sinv, Ablocks)
    AtS = np.einsum("kji,jl->kil", Ablocks, Sinv)
    eye = np.eye(R)
    for t in range(start, stop):
        P = G[t].copy()
        q = b[t].copy()
        if t >= hd:
            prior_mean = np.zeros(R)
            for l in range(d):
                prior_mean += Ablocks[l] @ X[t - lags[l]]
            P += Sinv
            q += Sinv @ prior_mean
        else:
            P += eye
        for k in range(d):
            s = t + lags[k]
            if hd <= s < T:
                psi = X[s].copy()
                for l in range(d):
                    if l != k:
                        psi -= Ablocks[l] @ X[s - lags[l]]
                P += AtSA[k]
                q += AtS[k] @ psi
        try:
            X[t] = _draw_one_np(P, q, z[t])
        except dist.IndefiniteMatrixError:
            return t
    return -1


# --------------------------------------------------------------------------
# numba flavour


@njit(cache=True)
def _chol_inplace(a, L):
    # returns -1 on success, else the failing pivot index
    n = a.shape[0]
    for j in range(n):
        s = a[j, j]
        for m in range(j):
            s -= L[j, m] * L[j, m]
        if not s > 0.0:
            return j
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            s2 = a[i, j]
            for m in range(j):
                s2 -= L[i, m] * L[j, m]
            L[i, j] = s2 / L[j, j]
        for i in range(j):
            L[i, j] = 0.0
    return -1


@njit(cache=True)
def _chol_jitter(a, L, jitter):
    n = a.shape[0]
    for i in range(n):
        for j in range(i):
            v = 0.5 * (a[i, j] + a[j, i])
            a[i, j] = v
            a[j, i] = v
    piv = _chol_inplace(a, L)
    if piv < 0:
        return -1
    mean_diag = 0.0
    for i in range(n):
        mean_diag += a[i, i]
    bump = jitter * mean_diag / n
    if not bump > 0.0:
        return piv
    for i in range(n):
        a[i, i] += bump
    piv2 = _chol_inplace(a, L)
    for i in range(n):
        a[i, i] -= bump
    if piv2 < 0:
        return -1
    return piv


@njit(cache=True)
def _canonical_solve(L, lin, z, out):
    # out = L^-T (L^-1 lin + z)
    n = L.shape[0]
    y = np.empty(n)
    for i in range(n):
        s = lin[i]
        for m in range(i):
            s -= L[i, m] * y[m]
        y[i] = s / L[i, i]
    for i in range(n):
        y[i] += z[i]
    for i in range(n - 1, -1, -1):
        s = y[i]
        for m in range(i + 1, n):
            s -= L[m, i] * out[m]
        out[i] = s / L[i, i]


@njit(cache=True)
def _sample_canonical_batch_nb(prec, lin, z, out, jitter):
    P, R = lin.shape
    L = np.zeros((R, R))
    a = np.empty((R, R))
    for p in range(P):
        a[:, :] = prec[p]
        piv = _chol_jitter(a, L, jitter)
        if piv >= 0:
            return p, piv
        _canonical_solve(L, lin[p], z[p], out[p])
    return -1, -1


@njit(cache=True)
def _temporal_sweep_nb(G, b, X, Ablocks, Sinv, lags, z, start, stop, jitter):
    T, R = X.shape
    d = lags.shape[0]
    hd = lags[-1]
    AtS = np.zeros((d, R, R))
    AtSA = np.zeros((d, R, R))
    for k in range(d):
        AtS[k] = Ablocks[k].T @ Sinv
        AtSA[k] = AtS[k] @ Ablocks[k]
    P = np.empty((R, R))
    L = np.zeros((R, R))
    q = np.empty(R)
    tmp = np.empty(R)
    psi = np.empty(R)
    for t in range(start, stop):
        P[:, :] = G[t]
        q[:] = b[t]
        if t >= hd:
            tmp[:] = 0.0
            for l in range(d):
                xl = X[t - lags[l]]
                for i in range(R):
                    acc = 0.0
                    for j in range(R):
                        acc += Ablocks[l, i, j] * xl[j]
                    tmp[i] += acc
            for i in range(R):
                acc = 0.0
                for j in range(R):
                    P[i, j] += Sinv[i, j]
                    acc += Sinv[i, j] * tmp[j]
                q[i] += acc
        else:
            for i in range(R):
                P[i, i] += 1.0
        for k in range(d):
            s = t + lags[k]
            if s >= hd and s < T:
                psi[:] = X[s]
                for l in range(d):
                    if l != k:
                        xl = X[s - lags[l]]
                        for i in range(R):
                            acc = 0.0
                            for j in range(R):
                                acc += Ablocks[l, i, j] * xl[j]
                            psi[i] -= acc
                for i in range(R):
                    acc = 0.0
                    for j in range(R):
                        P[i, j] += AtSA[k, i, j]
                        acc += AtS[k, i, j] * psi[j]
                    q[i] += acc
        piv = _chol_jitter(P, L, jitter)
        if piv >= 0:
            return t
        _canonical_solve(L, q, z[t], X[t])
    return -1


# --------------------------------------------------------------------------
# dispatch


def masked_gram(weights, feats, values):
    """Per-row weighted Gram matrices and cross terms.

    ``G[p] = sum_q weights[p, q] f_q f_q^T`` and
    ``b[p] = sum_q weights[p, q] values[p, q] f_q``. Zero weights mark
    unobserved cells; ``values`` must be finite everywhere.

    This is a single GEMM, so both backends use the BLAS form; a compiled
    loop measured 3x slower.
    """
    weights = np.ascontiguousarray(weights, dtype=float)
    feats = np.ascontiguousarray(feats, dtype=float)
    values = np.ascontiguousarray(values, dtype=float)
    return _masked_gram_np(weights, feats, values)


def sample_canonical_batch(prec, lin, z):
    """Row-wise draws from N(P_p^-1 b_p, P_p^-1) using standard normals ``z``."""
    prec = np.ascontiguousarray(prec, dtype=float)
    lin = np.ascontiguousarray(lin, dtype=float)
    z = np.ascontiguousarray(z, dtype=float)
    if get_backend() == "numba":
        out = np.empty_like(lin)
        p, piv = _sample_canonical_batch_nb(prec, lin, z, out, dist.JITTER)
        if p >= 0:
            raise dist.IndefiniteMatrixError(
                piv, f"precision of row {p} is not positive definite (pivot {piv})"
            )
        return out
    return _sample_canonical_batch_np(prec, lin, z)


def temporal_sweep(G, b, X, Ablocks, Sinv, lags, z, start=0, stop=None):
    """Single-site ascending updates of temporal factor rows ``X[start:stop]``.

    ``X`` is (T, R) and updated in place; ``Ablocks[k]`` is the R x R
    coefficient matrix applied at lag ``lags[k]``; the horizon for future
    terms is ``X.shape[0]``.
    """
    T = X.shape[0]
    stop = T if stop is None else stop
    lags = np.ascontiguousarray(lags, dtype=np.int64)
    args = (
        np.ascontiguousarray(G, dtype=float),
        np.ascontiguousarray(b, dtype=float),
        X,
        np.ascontiguousarray(Ablocks, dtype=float),
        np.ascontiguousarray(Sinv, dtype=float),
        lags,
        np.ascontiguousarray(z, dtype=float),
        int(start),
        int(stop),
    )
    if not X.flags.c_contiguous or X.dtype != np.float64:
        raise ValueError("X must be a C-contiguous float64 array")
    if get_backend() == "numba":
        bad = _temporal_sweep_nb(*args, dist.JITTER)
    else:
        bad = _temporal_sweep_np(*args)
    if bad >= 0:
        raise dist.IndefiniteMatrixError(0, f"temporal factor precision at t={bad} is not positive definite")
