from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from factorsvar.dgp import (
    Coefficients,
    DgpConfig,
    generate_coefficients,
    generate_loadings,
    generate_restrictions,
    simulate,
    simulate_system,
    spectral_radius,
)
from factorsvar.errors import PatternSearchExhausted, StabilityNotFound, ValidationError


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_coefficients_stable_and_bounded(seed):
    c = generate_coefficients(DgpConfig(), np.random.default_rng(seed))
    assert spectral_radius(c.lags) < 0.95
    assert np.all((-1 < c.b0) & (c.b0 < 1))
    d = np.diagonal(c.lags[0])
    assert np.all((0 <= d) & (d < 0.3))
    off = c.lags[0][~np.eye(10, dtype=bool)]
    assert np.all(np.abs(off) < 0.1)
    assert c.beta.shape == (10, 41)


def test_coefficients_deterministic():
    a = generate_coefficients(DgpConfig(), np.random.default_rng(1))
    b = generate_coefficients(DgpConfig(), np.random.default_rng(1))
    assert np.array_equal(a.lags, b.lags) and np.array_equal(a.b0, b.b0)


def test_coefficients_budget_exhausted():
    with pytest.raises(StabilityNotFound):
        generate_coefficients(DgpConfig(stability_bound=0.0, max_attempts=5), np.random.default_rng(0))


def test_config_validation():
    with pytest.raises(ValidationError):
        DgpConfig(stability_bound=1.0)
    with pytest.raises(ValidationError):
        DgpConfig(T=0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_loadings_unit_rows(seed):
    L = generate_loadings(DgpConfig(), np.random.default_rng(seed))
    assert L.shape == (10, 5)
    assert np.max(np.abs(np.linalg.norm(L, axis=1) - 1.0)) < 1e-12


def test_simulate_shape_and_zero_system():
    cfg = DgpConfig(obs_mu=0.0, obs_sigma=0.0)
    n, p = cfg.n, cfg.p
    coeffs = Coefficients(np.zeros(n), np.zeros((p, n, n)))
    data, F = simulate(cfg, coeffs, np.zeros((n, cfg.m)), np.random.default_rng(0))
    assert data.shape == (148, 10)
    assert F.shape == (148, 5)
    assert np.all(data.values == 0)


def test_simulated_shock_variance():
    cfg = DgpConfig(T=248, burn_in=0)
    g = np.random.default_rng(2)
    s = simulate_system(cfg, 15, 0, g)
    assert_allclose(s.F.var(axis=0), 0.02, rtol=0.2)


def test_restrictions_counts_and_structure():
    s = simulate_system(DgpConfig(), 15, 6, np.random.default_rng(4))
    counts = s.restrictions.counts()
    assert counts == {"impact": 15, "shock": 6, "product": 0}
    table = s.restrictions.impact_sign_table(10, 5)
    assert np.all((table != 0).sum(axis=0) >= 2)
    for a in range(5):
        for b in range(a + 1, 5):
            assert not np.array_equal(table[:, a], table[:, b])
            assert not np.array_equal(table[:, a], -table[:, b])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), n_impact=st.integers(10, 30), n_shock=st.integers(0, 20))
def test_truth_satisfies_generated_restrictions(seed, n_impact, n_shock):
    s = simulate_system(DgpConfig(), n_impact, n_shock, np.random.default_rng(seed))
    assert s.restrictions.satisfied_by(s.L, s.F_estimation)
    assert s.restrictions.satisfied_by(s.L_model, s.F_model)


def test_restrictions_argument_checks():
    g = np.random.default_rng(0)
    L = generate_loadings(DgpConfig(), g)
    F = g.standard_normal((144, 5))
    with pytest.raises(ValidationError):
        generate_restrictions(L, F, 9, 0, g)
    with pytest.raises(ValidationError):
        generate_restrictions(L, F, 51, 0, g)


def test_restrictions_pattern_search_exhausted():
    # two variables cannot give three columns distinct patterns up to sign
    g = np.random.default_rng(0)
    L = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]])
    with pytest.raises(PatternSearchExhausted):
        generate_restrictions(L, np.ones((5, 3)), 6, 0, g, max_attempts=50)


def test_model_scale_covariance():
    s = simulate_system(DgpConfig(), 15, 6, np.random.default_rng(0))
    S = s.error_covariance()
    assert_allclose(np.diag(S), 0.02 + 0.25)


def test_save_bundle(tmp_path):
    s = simulate_system(DgpConfig(), 15, 6, np.random.default_rng(0))
    paths = s.save(tmp_path)
    truth = json.loads(paths["truth"].read_text())
    assert_allclose(np.array(truth["L"]), s.L, rtol=0, atol=0)
    assert len(paths["data"].read_text().splitlines()) == 149
