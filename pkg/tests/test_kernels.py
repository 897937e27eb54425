import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from btf import _backend, btmf, dist, kernels, set_backend, synthetic
from btf._dynamics import blocks_from_stacked, temporal_conditional
from btf.btmf import ModelConfig

pytestmark = pytest.mark.skipif(not _backend.HAVE_NUMBA, reason="numba not installed")


def _both(fn, *args):
    out = {}
    for name in ("numba", "numpy"):
        prev = set_backend(name)
        try:
            out[name] = fn(*args)
        finally:
            set_backend(prev)
    return out["numba"], out["numpy"]


@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 6), st.integers(1, 8))
def test_masked_gram_matches_einsum(seed, R, P, Q):
    rng = np.random.default_rng(seed)
    w = rng.random((P, Q)) * (rng.random((P, Q)) > 0.3)
    f = rng.standard_normal((Q, R))
    v = rng.standard_normal((P, Q))
    (G1, b1), (G2, b2) = _both(kernels.masked_gram, w, f, v)
    np.testing.assert_array_equal(G1, G2)
    np.testing.assert_allclose(G1, np.einsum("pq,qr,qs->prs", w, f, f), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(b1, np.einsum("pq,pq,qr->pr", w, v, f), rtol=1e-12, atol=1e-12)


def test_masked_gram_ignores_zero_weight_values():
    rng = np.random.default_rng(0)
    w = np.array([[1.0, 0.0, 2.0]])
    f = rng.standard_normal((3, 2))
    for backend in ("numba", "numpy"):
        prev = set_backend(backend)
        a = kernels.masked_gram(w, f, np.array([[1.0, 0.0, 3.0]]))
        b = kernels.masked_gram(w, f, np.array([[1.0, 1e300, 3.0]]))
        set_backend(prev)
        np.testing.assert_array_equal(a[1], b[1])


@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 6))
def test_canonical_batch_backends_agree(seed, R, P):
    rng = np.random.default_rng(seed)
    prec = np.array([dist.symmetrize(g @ g.T + np.eye(R)) for g in rng.standard_normal((P, R, R))])
    lin = rng.standard_normal((P, R))
    z = rng.standard_normal((P, R))
    x1, x2 = _both(kernels.sample_canonical_batch, prec, lin, z)
    np.testing.assert_allclose(x1, x2, rtol=1e-10, atol=1e-10)
    # z = 0 gives the conditional mean
    m1, _ = _both(kernels.sample_canonical_batch, prec, lin, np.zeros_like(z))
    np.testing.assert_allclose(m1, np.linalg.solve(prec, lin[:, :, None])[:, :, 0], rtol=1e-9, atol=1e-10)


def test_canonical_batch_reports_row():
    prec = np.stack([np.eye(2), np.array([[1.0, 0.0], [0.0, -1.0]])])
    for backend in ("numba", "numpy"):
        prev = set_backend(backend)
        try:
            with pytest.raises(dist.IndefiniteMatrixError, match="row 1") as info:
                kernels.sample_canonical_batch(prec, np.zeros((2, 2)), np.zeros((2, 2)))
            assert info.value.pivot == 1
        finally:
            set_backend(prev)


@given(st.integers(0, 10_000), st.integers(1, 3), st.sampled_from([(1,), (1, 2), (1, 3)]))
def test_temporal_sweep_backends_agree(seed, R, lags):
    rng = np.random.default_rng(seed)
    T = 8
    d = len(lags)
    X0 = rng.standard_normal((T, R))
    G = np.array([g @ g.T for g in rng.standard_normal((T, R, R))])
    b = rng.standard_normal((T, R))
    blocks = 0.3 * rng.standard_normal((d, R, R))
    Sinv = np.eye(R) * 2.0
    z = rng.standard_normal((T, R))

    def run():
        X = X0.copy()
        kernels.temporal_sweep(G, b, X, blocks, Sinv, np.array(lags), z)
        return X

    x1, x2 = _both(run)
    np.testing.assert_allclose(x1, x2, rtol=1e-10, atol=1e-10)


def test_temporal_sweep_matches_reference_conditional():
    # with z = 0 and a single step, the sweep lands on the conditional mean
    rng = np.random.default_rng(3)
    T, R, lags = 7, 2, (1, 2)
    X = rng.standard_normal((T, R))
    A = 0.3 * rng.standard_normal((R * 2, R))
    Sigma = np.array([[1.0, 0.3], [0.3, 0.7]])
    G = np.array([g @ g.T for g in rng.standard_normal((T, R, R))])
    b = rng.standard_normal((T, R))
    for t in range(T):
        P, q = temporal_conditional(t, G[t], b[t], X, A, Sigma, lags)
        for backend in ("numba", "numpy"):
            prev = set_backend(backend)
            Xk = X.copy()
            kernels.temporal_sweep(G, b, Xk, blocks_from_stacked(A, R, 2), np.linalg.inv(Sigma), np.array(lags),
                                   np.zeros((T, R)), t, t + 1)
            set_backend(prev)
            np.testing.assert_allclose(Xk[t], np.linalg.solve(P, q), rtol=1e-10, atol=1e-12)


def test_chain_backends_follow_same_path():
    syn = synthetic.btmf_matrix(n_series=6, n_steps=40, seed=0)
    cfg = ModelConfig(rank=2, lags=(1, 2), burn_in=30, samples=10)
    a, b = _both(lambda: btmf.impute(syn.data, cfg, rng=3).mean)
    np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-8)


def test_env_flag_selects_backend():
    code = "from btf import get_backend; print(get_backend())"
    for name in ("numpy", "numba"):
        env = dict(os.environ, BTF_BACKEND=name)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        assert out.stdout.strip() == name
    env = dict(os.environ, BTF_BACKEND="fortran")
    bad = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert bad.returncode != 0


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        set_backend("cuda")
