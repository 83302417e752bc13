import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrmspec.field_sim import (
    CirculantEmbedding,
    Grid,
    field_covariance,
    ln_plus_kernel,
    rho_eps,
    sample_field,
    sample_field_ensemble,
)


def test_grid_spacing():
    g = Grid(8)
    assert g.spacing * g.n_points == 1.0
    assert np.allclose(g.centers, (np.arange(8) + 0.5) / 8)
    with pytest.raises(ValueError):
        Grid(1)


@pytest.mark.parametrize(
    "lag, gamma2, tau, expected",
    [
        (0.5, 0.25, 0.25, 1.0),
        (0.123, 0.0, 0.25, 1.0),
        (1 / math.e, 1.0, 1.0, math.e),
    ],
)
def test_ln_plus_kernel_values(lag, gamma2, tau, expected):
    assert ln_plus_kernel(lag, gamma2, tau) == pytest.approx(expected, rel=1e-12)


def test_ln_plus_kernel_truncation():
    # Below the truncation the value at |lag| = eta is returned.
    assert ln_plus_kernel(0.0, 0.5, 1.0, eta=0.01) == pytest.approx(ln_plus_kernel(0.01, 0.5, 1.0))
    assert ln_plus_kernel(-0.3, 0.5, 1.0) == ln_plus_kernel(0.3, 0.5, 1.0)


def test_rho_eps_values():
    assert rho_eps(0.0, 1 / math.e, 1.0) == pytest.approx(2.0)
    assert rho_eps(0.5, 0.01, 1.0) == pytest.approx(math.log(2))
    assert rho_eps(2.0, 0.3, 1.0) == 0.0
    with pytest.raises(ValueError):
        rho_eps(0.1, 2.0, 1.0)


def test_rho_eps_continuous_at_eps():
    eps, tau = 0.01, 1.0
    assert rho_eps(eps * (1 - 1e-12), eps, tau) == pytest.approx(rho_eps(eps * (1 + 1e-12), eps, tau))


@settings(max_examples=50, deadline=None)
@given(tau=st.floats(0.1, 3.0), log_eps=st.floats(-8, -1))
def test_rho_eps_monotone_in_lag(tau, log_eps):
    eps = min(math.exp(log_eps), tau)
    lags = np.linspace(0, 2 * tau, 400)
    vals = rho_eps(lags, eps, tau)
    assert np.all(np.diff(vals) <= 1e-12)


def test_rho_eps_increases_to_log_kernel():
    tau = 1.0
    lags = np.linspace(0.001, 1.5, 200)
    target = np.maximum(np.log(tau / lags), 0.0)
    prev = None
    for eps in [0.5, 0.1, 0.01, 0.001, 1e-4]:
        cur = rho_eps(lags, eps, tau)
        assert np.all(cur <= target + 1e-12)
        if prev is not None:
            assert np.all(cur >= prev - 1e-12)
        prev = cur
    assert np.allclose(prev, target)


def test_zero_intermittency_field_is_zero():
    f = sample_field(Grid(64), 0.0, 0.25, seed=3)
    assert np.all(f.values == 0)


def test_field_deterministic_and_seed_dependent():
    g = Grid(128)
    a = sample_field(g, 1.0, 0.25, seed=11).values
    b = sample_field(g, 1.0, 0.25, seed=11).values
    c = sample_field(g, 1.0, 0.25, seed=12).values
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)
    assert a.shape == (128,)


def test_ensemble_matches_single_draws():
    from mrmspec.field_sim import derive_rng

    g = Grid(64)
    cov = field_covariance(0.5, 0.25, g.spacing)
    ens, _ = sample_field_ensemble(g, cov, 5, master_seed=4, stream=2, chunk=2)
    single = sample_field(g, 0.5, 0.25, seed=derive_rng(4, 2, 3)).values
    assert np.array_equal(ens[3], single)


def test_embedding_reproduces_target_without_clipping():
    g = Grid(256)
    for tau in (0.25, 1.0, 2.0):
        emb = CirculantEmbedding(g, field_covariance(1.0, tau, g.spacing))
        assert emb.clipped_mass == 0.0
        assert np.allclose(emb.realized_covariance(), emb.target, atol=1e-10)


@pytest.fixture(scope="module")
def field_ensemble():
    g = Grid(256)
    cov = field_covariance(1.0, 0.25, g.spacing)
    values, _ = sample_field_ensemble(g, cov, 10_000, master_seed=2024)
    return g, values


@pytest.mark.parametrize("k", [0, 1, 4, 16])
def test_field_covariance_monte_carlo(field_ensemble, k):
    g, w = field_ensemble
    # One statistic per realisation (position average) -> i.i.d. across the ensemble.
    stat = np.mean(w[:, : g.n_points - k] * w[:, k:], axis=1)
    se = stat.std(ddof=1) / math.sqrt(stat.size)
    target = math.log(0.25 / (k * g.spacing + g.spacing))
    assert abs(stat.mean() - target) < 3 * se


def test_field_mean_zero(field_ensemble):
    _, w = field_ensemble
    stat = w.mean(axis=1)
    assert abs(stat.mean()) < 3 * stat.std(ddof=1) / math.sqrt(stat.size)
