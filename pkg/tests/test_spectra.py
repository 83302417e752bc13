import numpy as np
import pytest
from scipy import integrate

from mrmspec.mrm import ModelParams, sample_returns
from mrmspec.spectra import (
    bn_spectrum_check,
    covariance_spectrum,
    esd_histogram,
    ks_distance,
    mp_cdf,
    mp_density,
    mp_edges,
    pool_eigenvalues,
)


def test_single_row_eigenvalue():
    x = np.array([[3.0, 4.0]])
    s = covariance_spectrum(x)
    assert s.eigenvalues == pytest.approx([25.0])
    assert (s.n, s.t_steps) == (1, 2)


def test_trace_identity():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((20, 35))
    s = covariance_spectrum(x)
    assert s.eigenvalues.sum() == pytest.approx(np.sum(x * x), rel=1e-12)
    assert np.all(np.diff(s.eigenvalues) >= 0)


def test_rejects_non_finite():
    with pytest.raises(ValueError):
        covariance_spectrum(np.array([[1.0, np.nan]]))


def test_permutation_invariance():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((12, 30))
    a = covariance_spectrum(x).eigenvalues
    b = covariance_spectrum(x[rng.permutation(12)][:, rng.permutation(30)]).eigenvalues
    assert np.allclose(a, b, atol=1e-10)


def test_iid_matches_marchenko_pastur():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((512, 512)) / np.sqrt(512)
    lam = covariance_spectrum(x).eigenvalues
    assert ks_distance(lam, lambda v: mp_cdf(v, 1.0)) < 0.05


@pytest.mark.parametrize("shape", [(3, 3), (4, 9), (7, 2), (1, 5)])
def test_bn_spectrum(shape):
    rng = np.random.default_rng(sum(shape))
    ok, dev = bn_spectrum_check(rng.standard_normal(shape))
    assert ok and dev < 1e-8


def test_bn_spectrum_on_returns():
    x = sample_returns(ModelParams(0.25, 0.25, 0.5, 20), master_seed=3)
    assert bn_spectrum_check(x)[0]


@pytest.mark.parametrize("q, lo, hi", [(1.0, 0.0, 4.0), (0.25, 0.25, 2.25)])
def test_mp_edges(q, lo, hi):
    assert mp_edges(q) == pytest.approx((lo, hi))


@pytest.mark.parametrize("q", [1.0, 0.5, 0.25, 0.1])
def test_mp_density_integrates_to_one(q):
    lo, hi = mp_edges(q)
    total, _ = integrate.quad(mp_density, lo, hi, args=(q,), limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)
    assert mp_density(hi + 0.1, q) == 0.0


@pytest.mark.parametrize("q", [1.0, 0.5, 0.2])
def test_mp_cdf_matches_quadrature(q):
    lo, hi = mp_edges(q)
    for x in np.linspace(lo + 0.01, hi - 0.01, 7):
        ref, _ = integrate.quad(mp_density, lo, x, args=(q,), limit=200)
        assert mp_cdf(x, q) == pytest.approx(ref, abs=1e-7)
    assert mp_cdf(hi + 1, q) == pytest.approx(1.0)


def test_histogram_normalised():
    h = esd_histogram(np.array([0.5, 1.5, 1.5, 4.0]), bins=4)
    assert h.bin_edges[0] == 0.0 and h.bin_edges[-1] == 4.0
    assert h.probabilities == pytest.approx([0.25, 0.5, 0.0, 0.25])
    assert np.sum(h.density * h.widths) == pytest.approx(1.0)


def test_histogram_explicit_edges_and_errors():
    h = esd_histogram(np.array([0.1, 0.2, 5.0]), bins=[0.0, 0.15, 0.3])
    assert h.probabilities == pytest.approx([0.5, 0.5])
    with pytest.raises(ValueError):
        esd_histogram(np.array([]))
    with pytest.raises(ValueError):
        pool_eigenvalues([])


def test_log_histogram():
    h = esd_histogram(np.array([0.01, 0.1, 1.0, 10.0]), bins=3, log=True)
    assert np.allclose(h.bin_edges, [0.01, 0.1, 1.0, 10.0])


def test_ks_distance_exact():
    # Two samples against the uniform CDF: the gap is largest at 0.75.
    assert ks_distance([0.25, 0.75], lambda v: np.clip(v, 0, 1)) == pytest.approx(0.25)
    assert ks_distance([0.1, 0.2], lambda v: np.clip(v, 0, 1), window=(0.5, 1.0)) == pytest.approx(0.5)
