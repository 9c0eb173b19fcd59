from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from factorsvar.dgp import DgpConfig, simulate_system
from factorsvar.errors import DegeneratePosterior, ValidationError
from factorsvar.model import (
    ChainConfig,
    Dataset,
    HorseshoeState,
    ModelDims,
    ParameterDraw,
    PriorConfig,
    RestrictionSet,
    expand_signs,
    shock_signs,
)
from factorsvar.sampler import (
    HS_CAP,
    Design,
    StreamBank,
    Streams,
    beta_posterior,
    coefficient_prior_variance,
    factor_posterior,
    loading_posterior,
    noise_posterior,
    run_gibbs,
    sample_factors,
    sample_horseshoe,
    sample_loadings,
    sample_noise_vars,
    sample_var_coeffs,
)

REPS = 4000


def _within_3se(draws: np.ndarray, mean: np.ndarray, sd: np.ndarray):
    se = sd / np.sqrt(draws.shape[0])
    z = np.abs(draws.mean(axis=0) - mean) / se
    assert np.all(z < 3.0), f"max |z| = {z.max():.2f}"


# ---------------------------------------------------------------------------
# random streams


def test_stream_bank_matches_fresh_streams():
    bank = StreamBank(42, 2)
    a = bank.point(0, 7, 3, 5).standard_normal(6)
    b = Streams(42, 7, 3).get(5).standard_normal(6)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, Streams(42, 7, 3).get(6).standard_normal(6))


def test_streams_reject_negative_seed():
    with pytest.raises(ValidationError):
        Streams(-1, 0, 0)


# ---------------------------------------------------------------------------
# conjugacy oracles on the n=2, r=1, T=50 fixture (no restrictions)


def test_factor_conditional_mean(small_fixture, rng):
    dims, data, state = small_fixture
    design = Design.from_values(data.values, dims.p)
    M, K = factor_posterior(state, design)
    draws = np.stack([sample_factors(state, design, dims, RestrictionSet(), rng) for _ in range(REPS)])
    sd = np.sqrt(np.diag(np.linalg.inv(K)))
    _within_3se(draws.reshape(REPS, -1), M.ravel(), np.tile(sd, M.shape[0]))


def test_loading_conditional_mean(small_fixture, rng):
    dims, data, state = small_fixture
    design = Design.from_values(data.values, dims.p)
    prior = PriorConfig()
    draws = np.stack([sample_loadings(state, design, dims, RestrictionSet(), prior, rng) for _ in range(REPS)])
    for i in range(dims.n):
        mean, K = loading_posterior(i, state, design, prior)
        _within_3se(draws[:, i], mean, np.sqrt(np.diag(np.linalg.inv(K))))


def test_coefficient_conditional_mean(small_fixture, rng):
    dims, data, state = small_fixture
    design = Design.from_values(data.values, dims.p)
    prior = PriorConfig()
    V = coefficient_prior_variance(state.hs, prior.intercept_var)
    draws = np.stack([sample_var_coeffs(state, design, dims, prior, state.hs, rng) for _ in range(REPS)])
    for i in range(dims.n):
        mean, K = beta_posterior(i, state, design, V[i])
        _within_3se(draws[:, i], mean, np.sqrt(np.diag(np.linalg.inv(K))))


def test_noise_conditional_mean(small_fixture, rng):
    dims, data, state = small_fixture
    design = Design.from_values(data.values, dims.p)
    prior = PriorConfig()
    shape, rate = noise_posterior(state, design, prior)
    draws = np.stack([sample_noise_vars(state, design, dims, prior, rng) for _ in range(REPS)])
    mean = rate / (shape - 1)
    sd = rate / ((shape - 1) * np.sqrt(shape - 2))
    _within_3se(draws, mean, sd)


def test_horseshoe_conditionals(rng):
    n, k = 20_000, 5
    beta = np.zeros((n, k))
    hs = sample_horseshoe(beta, HorseshoeState.ones(n, k), rng)
    assert stats.kstest(hs.lam, stats.invgamma(2.5, scale=1.0).cdf).statistic < 0.015
    assert stats.kstest(hs.psi[:, 0], stats.invgamma(1.0, scale=1.0).cdf).statistic < 0.015


def test_horseshoe_prior_is_invariant(rng):
    # redrawing beta from N(0, lam * psi) and then updating the scales keeps
    # sqrt(lam) and sqrt(psi) half-Cauchy
    n, k = 1000, 101
    z_lam = stats.invgamma(0.5, scale=1.0).rvs(n, random_state=rng)
    z_psi = stats.invgamma(0.5, scale=1.0).rvs((n, k - 1), random_state=rng)
    lam = stats.invgamma(0.5, scale=1.0 / z_lam).rvs(random_state=rng)
    psi = stats.invgamma(0.5, scale=1.0 / z_psi).rvs(random_state=rng)
    hs = HorseshoeState(lam, psi, z_lam, z_psi)
    for _ in range(5):
        beta = np.zeros((n, k))
        beta[:, 1:] = np.sqrt(hs.lam[:, None] * hs.psi) * rng.standard_normal((n, k - 1))
        hs = sample_horseshoe(beta, hs, rng)
    ref = stats.halfcauchy.rvs(size=100_000, random_state=rng)
    assert stats.ks_2samp(np.sqrt(hs.psi.ravel()), ref).statistic < 0.03
    assert stats.kstest(np.sqrt(hs.lam), stats.halfcauchy.cdf).statistic < 0.06


# ---------------------------------------------------------------------------
# worked examples of the single updates


def _zero_state(n, r, T_eff, k, sigma2=1.0):
    return ParameterDraw(np.zeros((n, k)), np.zeros((n, r)), np.full(n, sigma2), np.zeros((T_eff, r)), HorseshoeState.ones(n, k))


def test_factors_with_zero_loadings_follow_prior(rng):
    dims = ModelDims(3, 1, 2, 2001)
    data = rng.standard_normal((2001, 3))
    state = _zero_state(3, 2, 2000, dims.k)
    F = sample_factors(state, data, dims, RestrictionSet(), rng)
    assert_allclose(np.cov(F.T), np.eye(2), atol=0.08)


def test_factors_sign_restriction_half_normal(rng):
    T_eff = 500
    dims = ModelDims(2, 1, 2, T_eff + 1)
    data = rng.standard_normal((T_eff + 1, 2))
    restr = shock_signs([(t, 0, 1) for t in range(T_eff)], 2)
    state = _zero_state(2, 2, T_eff, dims.k)
    state.F[:, 0] = 1.0
    out = []
    for _ in range(40):
        state.F = sample_factors(state, data, dims, restr, rng)
        out.append(state.F[:, 0].copy())
    out = np.concatenate(out)
    assert np.all(out > 0)
    assert abs(out.mean() - np.sqrt(2 / np.pi)) < 0.02


def test_factors_small_noise_limit(rng):
    T = 30
    dims = ModelDims(2, 1, 2, T + 1)
    y = rng.standard_normal((T + 1, 2))
    state = ParameterDraw(np.zeros((2, dims.k)), np.eye(2), np.full(2, 1e-6), np.zeros((T, 2)), HorseshoeState.ones(2, dims.k))
    F = sample_factors(state, y, dims, RestrictionSet(), rng)
    assert_allclose(F, y[1:], atol=1e-2)


def test_loadings_zero_factors_follow_truncated_prior(rng):
    n, T_eff = 200, 10
    dims = ModelDims(n, 1, 2, T_eff + 1)
    data = rng.standard_normal((T_eff + 1, n))
    restr = expand_signs(np.tile([1, 0], (n, 1)))
    prior = PriorConfig(loading_cov=1.0)
    state = _zero_state(n, 2, T_eff, dims.k)
    state.L[:, 0] = 1.0
    out = []
    for _ in range(50):
        state.L = sample_loadings(state, data, dims, restr, prior, rng)
        out.append(state.L[:, 0].copy())
    out = np.concatenate(out)
    assert np.all(out > 0)
    assert abs(out.mean() - np.sqrt(2 / np.pi)) < 0.02


def test_loadings_recover_truth_large_sample(rng):
    n, r, T_eff = 3, 2, 3000
    dims = ModelDims(n, 1, r, T_eff + 1)
    L_true = np.array([[1.0, 0.2], [-0.5, 0.8], [0.3, -0.7]])
    F = rng.standard_normal((T_eff, r))
    y = np.vstack([np.zeros(n), F @ L_true.T + 0.5 * rng.standard_normal((T_eff, n))])
    state = ParameterDraw(np.zeros((n, dims.k)), np.zeros((n, r)), np.full(n, 0.25), F, HorseshoeState.ones(n, dims.k))
    design = Design.from_values(y, 1)
    for i in range(n):
        mean, K = loading_posterior(i, state, design, PriorConfig())
        sd = np.sqrt(np.diag(np.linalg.inv(K)))
        assert np.all(np.abs(mean - L_true[i]) < 3 * sd)
    L = sample_loadings(state, design, dims, RestrictionSet(), PriorConfig(), rng)
    assert np.all(np.abs(L - L_true) < 0.1)


def test_loadings_respect_impact_constraint(rng, small_fixture):
    dims, data, state = small_fixture
    restr = expand_signs(np.array([[1], [-1]]))
    s = state.copy()
    for _ in range(200):
        s.L = sample_loadings(s, data, dims, restr, PriorConfig(), rng)
        assert s.L[0, 0] > 0 and s.L[1, 0] < 0


def test_coefficients_without_regressors_follow_prior(rng):
    T_eff = 40
    dims = ModelDims(1, 1, 1, T_eff + 1)
    X = np.column_stack([np.ones(T_eff), np.zeros(T_eff)])
    design = Design(rng.standard_normal((T_eff, 1)), X, X.T @ X)
    hs = HorseshoeState(np.full(1, HS_CAP), np.full((1, 1), HS_CAP), np.ones(1), np.ones((1, 1)))
    state = _zero_state(1, 1, T_eff, dims.k)
    mean, K = beta_posterior(0, state, design, coefficient_prior_variance(hs, 10.0)[0])
    assert mean[1] == 0.0
    draws = np.array([sample_var_coeffs(state, design, dims, PriorConfig(), hs, rng)[0, 1] for _ in range(2000)])
    assert abs(draws.mean()) < 3 * np.sqrt(HS_CAP / 2000)
    assert abs(draws.std() / np.sqrt(HS_CAP) - 1) < 0.1


def test_coefficients_zero_target_gives_zero_mean(small_fixture):
    dims, data, state = small_fixture
    design = Design.from_values(data.values, dims.p)
    s = state.copy()
    s.F = np.zeros_like(s.F)
    s.L = np.zeros_like(s.L)
    zero = Design(np.zeros_like(design.Y), design.X, design.XtX)
    mean, _ = beta_posterior(0, s, zero, coefficient_prior_variance(s.hs, 10.0)[0])
    assert_allclose(mean, 0.0, atol=1e-14)


def test_coefficients_recover_known_slope(rng):
    T = 201
    x = np.zeros(T)
    for t in range(1, T):
        x[t] = 0.6 * x[t - 1] + rng.standard_normal()
    dims = ModelDims(1, 1, 1, T)
    design = Design.from_values(x[:, None], 1)
    state = _zero_state(1, 1, T - 1, dims.k)
    mean, K = beta_posterior(0, state, design, coefficient_prior_variance(state.hs, 10.0)[0])
    sd = np.sqrt(np.diag(np.linalg.inv(K)))
    assert abs(mean[1] - 0.6) < 3 * sd[1]


def test_noise_inverse_gamma_two_two(rng):
    dims = ModelDims(1, 1, 1, 5)
    y = np.array([[0.0], [1.0], [1.0], [1.0], [1.0]])
    state = _zero_state(1, 1, 4, dims.k)
    design = Design.from_values(y, 1)
    shape, rate = noise_posterior(state, design, PriorConfig())
    assert shape == 2.0 and rate[0] == 2.0
    draws = np.array([sample_noise_vars(state, design, dims, PriorConfig(), rng)[0] for _ in range(20_000)])
    assert stats.kstest(draws, stats.invgamma(2.0, scale=2.0).cdf).statistic < 0.015


def test_noise_zero_residuals_raise(rng):
    dims = ModelDims(1, 1, 1, 5)
    with pytest.raises(DegeneratePosterior):
        sample_noise_vars(_zero_state(1, 1, 4, dims.k), np.zeros((5, 1)), dims, PriorConfig(), rng)


def test_noise_posterior_mean_near_truth(rng):
    T = 149
    dims = ModelDims(1, 1, 1, T)
    y = np.vstack([[0.0], 2.0 * rng.standard_normal((T - 1, 1))])
    state = _zero_state(1, 1, T - 1, dims.k)
    draws = np.array([sample_noise_vars(state, y, dims, PriorConfig(), rng)[0] for _ in range(1000)])
    assert abs(draws.mean() / 4.0 - 1.0) < 0.15


# ---------------------------------------------------------------------------
# full chains


@pytest.fixture(scope="module")
def toy():
    cfg = DgpConfig(n=2, m=1, T=51, p=1, shock_var=1.0)
    s = simulate_system(cfg, 2, 0, np.random.default_rng(3))
    return s, ModelDims(2, 1, 1, 51)


def test_chain_length_and_restrictions(toy):
    s, dims = toy
    ch = run_gibbs(ChainConfig(700, 100, 3, seed=1), dims, s.data, s.restrictions, allow_underidentified=True)
    assert len(ch) == (700 - 100) // 3
    assert all(s.restrictions.satisfied_by(d.L, d.F) for d in ch.draws)
    assert ch.uniqueness_flags.shape == (len(ch),)
    assert set(ch.timing) >= {"init", "sweeps", "checks"}


def test_chain_deterministic(toy):
    s, dims = toy
    a = run_gibbs(ChainConfig(300, 100, 2, seed=9), dims, s.data, s.restrictions, allow_underidentified=True)
    b = run_gibbs(ChainConfig(300, 100, 2, seed=9), dims, s.data, s.restrictions, allow_underidentified=True)
    for x, y in zip(a.draws, b.draws):
        for name in ("beta", "L", "sigma2", "F"):
            assert np.array_equal(getattr(x, name), getattr(y, name))


def test_threads_do_not_change_chain(benchmark_system):
    s = benchmark_system
    dims = ModelDims(10, 4, 5, 148)
    cfg = ChainConfig(60, 20, 2, seed=4)
    a = run_gibbs(cfg, dims, s.data, s.restrictions, allow_underidentified=True)
    b = run_gibbs(cfg, dims, s.data, s.restrictions, allow_underidentified=True, threads=4)
    assert all(np.array_equal(x.L, y.L) and np.array_equal(x.beta, y.beta) for x, y in zip(a.draws, b.draws))


def test_exchangeability_across_equations(benchmark_system):
    s = benchmark_system
    dims = ModelDims(10, 4, 5, 148)
    cfg = ChainConfig(40, 10, 2, seed=2)
    perm = np.random.default_rng(0).permutation(10)
    base = run_gibbs(cfg, dims, s.data, s.restrictions, allow_underidentified=True)
    data_p = Dataset(s.data.values[:, perm], tuple(np.array(s.data.names)[perm]))
    restr_p = s.restrictions.permuted(perm)
    other = run_gibbs(cfg, dims, data_p, restr_p, allow_underidentified=True, equation_keys=perm)
    for x, y in zip(base.draws, other.draws):
        assert np.array_equal(x.L[perm], y.L)
        assert np.array_equal(x.sigma2[perm], y.sigma2)
        assert np.array_equal(x.F, y.F)


def test_benchmark_configuration_completes(benchmark_system):
    s = benchmark_system
    dims = ModelDims(10, 4, 5, 148)
    ch = run_gibbs(ChainConfig(2000, 1000, 10, seed=0), dims, s.data, s.restrictions, allow_underidentified=True)
    assert len(ch) == 100
    assert all(s.restrictions.satisfied_by(d.L, d.F) for d in ch.draws)


def test_underidentified_requires_waiver(benchmark_system):
    with pytest.raises(ValidationError):
        run_gibbs(ChainConfig(10, 0, 1), ModelDims(10, 4, 5, 148), benchmark_system.data, benchmark_system.restrictions)


def _batch_se(x: np.ndarray, batches: int = 20) -> np.ndarray:
    b = x[: len(x) // batches * batches].reshape(batches, -1, *x.shape[1:]).mean(axis=1)
    return b.std(axis=0, ddof=1) / np.sqrt(batches)


@pytest.mark.slow
def test_self_consistency_against_long_reference(toy):
    s, dims = toy
    short = run_gibbs(ChainConfig(21_000, 1000, 5, seed=1), dims, s.data, s.restrictions, allow_underidentified=True).error_covariances()
    ref = run_gibbs(ChainConfig(81_000, 1000, 5, seed=2), dims, s.data, s.restrictions, allow_underidentified=True).error_covariances()
    se = np.sqrt(_batch_se(short) ** 2 + _batch_se(ref) ** 2)
    assert np.all(np.abs(short.mean(axis=0) - ref.mean(axis=0)) < 3 * se)


def _loglik(beta, L, sigma2, design):
    U = design.Y - design.X @ beta.T
    S = L @ L.T + np.diag(sigma2)
    return float(stats.multivariate_normal(np.zeros(S.shape[0]), S).logpdf(U).sum())


def test_stationarity_from_truth(rng):
    cfg = DgpConfig(n=4, m=1, T=200, p=1, shock_var=1.0)
    s = simulate_system(cfg, 2, 0, np.random.default_rng(8))
    dims = ModelDims(4, 1, 1, 200)
    design = Design.from_values(s.data.values, 1)
    beta = s.coeffs.beta.copy()
    beta[:, 0] += cfg.obs_mu
    state = ParameterDraw(beta, s.L.copy(), np.full(4, cfg.obs_sigma**2), s.F_estimation.copy(), HorseshoeState.ones(4, dims.k))
    prior, restr = PriorConfig(), s.restrictions
    start = _loglik(state.beta, state.L, state.sigma2, design)
    trace = []
    for _ in range(500):
        state.F = sample_factors(state, design, dims, restr, rng)
        state.L = sample_loadings(state, design, dims, restr, prior, rng)
        state.beta = sample_var_coeffs(state, design, dims, prior, state.hs, rng)
        state.sigma2 = sample_noise_vars(state, design, dims, prior, rng)
        state.hs = sample_horseshoe(state.beta, state.hs, rng)
        trace.append(_loglik(state.beta, state.L, state.sigma2, design))
    trace = np.array(trace[100:])
    assert abs(trace.mean() - start) < 5 * trace.std()
