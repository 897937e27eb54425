import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import posterior_checks as pc
from btf import btmf, bttf, synthetic
from btf.btmf import HyperPriors, ModelConfig
from btf.data import MaskSpec, SeriesMatrix, SeriesTensor, apply_mask, rmse


@pytest.mark.parametrize("check", [pc.check_mode_factor, pc.check_temporal_factor_cp, pc.check_precision_cp])
def test_conditional_matches_oracle(check):
    assert pc.max_rel_error(check()) < 1e-8


def test_khatri_rao_rows():
    P = np.arange(6.0).reshape(3, 2)
    Q = np.arange(4.0).reshape(2, 2) + 1
    K = bttf.khatri_rao(P, Q)
    assert K.shape == (6, 2)
    np.testing.assert_array_equal(K[1 * 2 + 1], P[1] * Q[1])


def test_mode_factor_scalar_example():
    vals = np.full((1, 1, 1), 6.0)
    data = SeriesTensor(vals)
    mean, prec = bttf.posterior_mode_factor("U", 0, data, np.ones((1, 1)), np.full((1, 1), 2.0), np.ones((1, 1)),
                                            1.0, np.zeros(1), np.eye(1))
    assert prec[0, 0] == pytest.approx(5) and mean[0] == pytest.approx(12 / 5)


def test_mode_factor_empty_slab_is_prior():
    vals = np.full((2, 2, 3), np.nan)
    vals[1] = 1.0
    data = SeriesTensor(vals)
    rng = np.random.default_rng(0)
    mu, Lam = np.array([0.3, -0.2]), np.array([[1.0, 0.2], [0.2, 2.0]])
    mean, prec = bttf.posterior_mode_factor("U", 0, data, *(rng.standard_normal((n, 2)) for n in (2, 2, 3)),
                                            1.0, mu, Lam)
    np.testing.assert_allclose(mean, mu)
    np.testing.assert_array_equal(prec, Lam)


def test_mode_factor_bad_mode():
    data = SeriesTensor(np.ones((1, 1, 2)))
    with pytest.raises(ValueError):
        bttf.posterior_mode_factor("X", 0, data, np.ones((1, 1)), np.ones((1, 1)), np.ones((2, 1)), 1.0,
                                   np.zeros(1), np.eye(1))


def test_temporal_cp_scalar_mirrors_matrix_example():
    # u * v = 1 reproduces the matrix case w = 1, y = 3 at the last step
    vals = np.array([[[np.nan, 3.0]]])
    data = SeriesTensor(vals)
    mean, cov = bttf.posterior_temporal_factor_cp(1, data, np.full((1, 1), 2.0), np.full((1, 1), 0.5),
                                                  np.array([[2.0], [0.0]]), 1.0, np.array([[0.5]]), np.eye(1), (1,))
    assert cov[0, 0] == pytest.approx(0.5) and mean[0] == pytest.approx(2.0)


def test_temporal_cp_prior_at_empty_early_slice():
    data = SeriesTensor(np.full((1, 1, 3), np.nan))
    mean, cov = bttf.posterior_temporal_factor_cp(0, data, np.ones((1, 2)), np.ones((1, 2)), np.zeros((3, 2)), 1.0,
                                                  np.zeros((4, 2)), np.eye(2), (1, 2))
    np.testing.assert_allclose(mean, 0)
    np.testing.assert_allclose(cov, np.eye(2))


def test_precision_cp_examples():
    pri = HyperPriors().resolve(1, 1)
    empty = SeriesTensor(np.full((1, 1, 2), np.nan))
    a, b = bttf.posterior_precision_cp(empty, np.ones((1, 1)), np.ones((1, 1)), np.ones((2, 1)), pri)
    assert (a, b) == (pri.alpha, pri.beta)
    one = SeriesTensor(np.array([[[3.0, np.nan]]]))
    a, b = bttf.posterior_precision_cp(one, np.ones((1, 1)), np.ones((1, 1)), np.ones((2, 1)), pri)
    assert a == pytest.approx(pri.alpha + 0.5) and b == pytest.approx(pri.beta + 2)
    ap, bp = bttf.posterior_precision_cp(one, np.ones((1, 1)), np.ones((1, 1)), np.ones((2, 1)), pri, "per-pair")
    assert (ap[0, 0], bp[0, 0]) == (a, b)


# --------------------------------------------------------------------------
# reductions to the matrix model


def _shared(seed=0, N=4, T=6, R=2, lags=(1, 2)):
    rng = np.random.default_rng(seed)
    mask = rng.random((N, T)) > 0.25
    Y = np.where(mask, rng.standard_normal((N, T)), np.nan)
    W = rng.standard_normal((R, N))
    X = rng.standard_normal((R, T))
    tau = rng.uniform(0.5, 2, N)
    A = 0.3 * rng.standard_normal((R * len(lags), R))
    Sigma = np.array([[1.0, 0.2], [0.2, 0.5]])
    return SeriesMatrix(Y, mask), SeriesTensor(Y[:, None, :], mask[:, None, :]), W, X, tau, A, Sigma


def test_reduction_posteriors_match_matrix():
    mat, ten, W, X, tau, A, Sigma = _shared()
    R, N = W.shape
    ones = np.ones((1, R))
    mu, Lam = np.array([0.1, 0.2]), np.array([[1.3, 0.1], [0.1, 0.9]])
    for i in range(N):
        m1, p1 = btmf.posterior_spatial_factor(i, mat, X, tau[i], mu, Lam)
        m2, p2 = bttf.posterior_mode_factor("U", i, ten, W.T, ones, X.T, tau[:, None], mu, Lam)
        np.testing.assert_allclose(m1, m2, rtol=0, atol=1e-10)
        np.testing.assert_allclose(p1, p2, rtol=0, atol=1e-10)
    for t in range(mat.n_steps):
        m1, c1 = btmf.posterior_temporal_factor(t, mat, W, X, tau, A, Sigma, (1, 2))
        m2, c2 = bttf.posterior_temporal_factor_cp(t, ten, W.T, ones, X.T, tau[:, None], A, Sigma, (1, 2))
        np.testing.assert_allclose(m1, m2, rtol=0, atol=1e-10)
        np.testing.assert_allclose(c1, c2, rtol=0, atol=1e-10)
    pri = HyperPriors().resolve(R, 2)
    a2, b2 = bttf.posterior_precision_cp(ten, W.T, ones, X.T, pri, "per-pair")
    for i in range(N):
        a1, b1 = btmf.posterior_precision(i, mat, W, X, pri, "per-series")
        assert abs(a1 - a2[i, 0]) <= 1e-10 and abs(b1 - b2[i, 0]) <= 1e-10


def test_reduction_whole_chain_matches_matrix():
    mat, ten, *_ = _shared(1, N=6, T=20)
    cfg = ModelConfig(rank=2, lags=(1, 2), noise_mode="isotropic", burn_in=5, samples=5)
    s0 = btmf.init_state(mat, cfg, np.random.default_rng(0))
    t0 = bttf.BttfState(U=s0.W.T.copy(), V=np.ones((1, 2)), X=s0.X.T.copy(), A=s0.A, Sigma=s0.Sigma,
                        tau=np.ones((6, 1)), mu_u=s0.mu_w, Lambda_u=s0.Lambda_w, mu_v=np.zeros(2),
                        Lambda_v=np.eye(2))
    sm = btmf.impute(mat, cfg, rng=9, init=s0)
    st_ = bttf.impute_tensor(ten, cfg, rng=9, init=t0, freeze_v=True)
    np.testing.assert_allclose(sm.mean, st_.mean[:, 0, :], rtol=0, atol=1e-10)


def test_mode_symmetry():
    data, U, V, X, tau = pc._micro_tensor(3)
    swapped = SeriesTensor(data.values.transpose(1, 0, 2), data.mask.transpose(1, 0, 2))
    mu, Lam = np.zeros(2), np.eye(2)
    for i in range(U.shape[0]):
        a = bttf.posterior_mode_factor("U", i, data, U, V, X, tau, mu, Lam)
        b = bttf.posterior_mode_factor("V", i, swapped, V, U, X, tau.T, mu, Lam)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, atol=1e-12)


@given(st.integers(0, 500))
def test_single_fiber_pooled_equals_per_pair(seed):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal((1, 1, 5))
    data = SeriesTensor(vals, rng.random((1, 1, 5)) > 0.3)
    pri = HyperPriors().resolve(2, 1)
    args = (data, rng.standard_normal((1, 2)), rng.standard_normal((1, 2)), rng.standard_normal((5, 2)), pri)
    a, b = bttf.posterior_precision_cp(*args, "isotropic")
    ap, bp = bttf.posterior_precision_cp(*args, "per-pair")
    assert a == pytest.approx(ap[0, 0]) and b == pytest.approx(bp[0, 0])


# --------------------------------------------------------------------------
# sampler


def test_sparse_fibers_use_pooled_tau():
    rng = np.random.default_rng(0)
    counts = np.array([[10, 2], [0, 7]])
    rss = np.array([[5.0, 1.0], [0.0, 3.0]])
    pri = HyperPriors().resolve(1, 1)
    tau = bttf._sample_tau(rss, counts, pri, "per-pair", rng)
    assert tau[0, 1] == tau[1, 0]
    assert tau[0, 0] != tau[0, 1]


def test_diagonal_and_identity_modes_tensor():
    syn = synthetic.cp_tensor(dims=(4, 4, 40), seed=2)
    seen = []
    cfg = ModelConfig(rank=2, lags=(1, 2), dynamics_mode="diagonal", burn_in=10, samples=5)
    bttf.impute_tensor(syn.data, cfg, rng=0, callback=lambda it, s: seen.append(s.A.copy()))
    for A in seen:
        for k in range(2):
            blk = A[2 * k:2 * (k + 1)]
            assert blk[0, 1] == 0 and blk[1, 0] == 0
    seen.clear()
    cfg = ModelConfig(rank=2, lags=(1,), dynamics_mode="identity", burn_in=10, samples=5)
    bttf.impute_tensor(syn.data, cfg, rng=0, callback=lambda it, s: seen.append(s.A.copy()))
    assert all(np.array_equal(A, np.eye(2)) for A in seen)


def test_tensor_impute_small():
    syn = synthetic.cp_tensor(dims=(5, 5, 60), seed=3)
    masked, held = apply_mask(syn.data, MaskSpec("RM", 0.3, 3))
    s = bttf.impute_tensor(masked, ModelConfig(rank=3, lags=(1, 2), burn_in=150, samples=50), rng=3)
    assert s.mean.shape == syn.data.shape
    assert rmse(syn.data.values[held], s.mean[held]) < 0.3
    assert np.all(s.q05 <= s.q95)


@pytest.mark.parametrize("dims", [(1, 4, 30), (4, 1, 30)])
def test_degenerate_tensor_accepted(dims):
    syn = synthetic.cp_tensor(dims=dims, seed=1)
    s = bttf.impute_tensor(syn.data, ModelConfig(rank=2, lags=(1,), burn_in=20, samples=10), rng=0)
    assert s.mean.shape == dims and np.all(np.isfinite(s.mean))


def test_tensor_noise_mode_mapping():
    syn = synthetic.cp_tensor(dims=(2, 2, 20), seed=1)
    cfg = ModelConfig(rank=2, lags=(1,), noise_mode="per-series", burn_in=3, samples=2)
    state = bttf.init_state(syn.data, cfg, np.random.default_rng(0))
    new = bttf.gibbs_step_tensor(state, syn.data, cfg, np.random.default_rng(0))
    assert new.tau.shape == (2, 2)
    with pytest.raises(TypeError):
        bttf.impute_tensor(SeriesMatrix(np.ones((2, 3))), cfg)
