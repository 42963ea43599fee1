import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy.integrate import quad

from bhlab.spectra import (
    SpacingSet,
    UnfoldingError,
    WindowSpec,
    berry_robnik_cdf,
    berry_robnik_pdf,
    fit_regularity,
    sector_subsequences,
    unfold,
    wigner_surmise_sample,
    windowed_regularity_scan,
    write_scan,
)
from bhlab.tables import read_table


def goe_levels(n, rng):
    a = rng.standard_normal((n, n))
    return np.linalg.eigvalsh((a + a.T) / 2)


def test_unfold_equally_spaced():
    uf = unfold(np.arange(100.0), trim=0.0)
    assert_allclose(uf.spacings, 1.0, rtol=0.02)
    assert np.all(np.diff(uf.unfolded) > 0)


def test_unfold_mean_spacing_stable_in_degree(sol20):
    eps = sol20.systems[1].energies / 20
    eps = eps[(eps > -6) & (eps < -1)]
    means = [np.mean(unfold(eps, degree=d).spacings) for d in (5, 6, 7)]
    assert_allclose(means, 1.0, rtol=0.02)


def test_unfold_semicircle_is_flat():
    E = goe_levels(800, np.random.default_rng(0))
    uf = unfold(E, degree=9, trim=0.05)
    assert np.mean(uf.spacings) == pytest.approx(1.0, rel=0.02)
    counts, _ = np.histogram(uf.unfolded, bins=5)
    assert counts.max() / counts.min() < 1.1


def test_unfold_rejects_short_input():
    with pytest.raises(UnfoldingError):
        unfold(np.arange(40.0))


def test_pdf_limits():
    s = np.linspace(0, 8, 401)
    assert_allclose(berry_robnik_pdf(s, 1.0), np.exp(-s), atol=1e-12, rtol=0)
    assert_allclose(berry_robnik_pdf(s, 0.0), 0.5 * np.pi * s * np.exp(-np.pi * s ** 2 / 4), atol=1e-12, rtol=0)
    assert_allclose(berry_robnik_cdf(s, 1.0), 1 - np.exp(-s), atol=1e-12, rtol=0)
    assert_allclose(berry_robnik_cdf(s, 0.0), 1 - np.exp(-np.pi * s ** 2 / 4), atol=1e-12, rtol=0)


@pytest.mark.parametrize("rho", [0.0, 0.3, 0.7, 1.0])
def test_pdf_normalization_and_mean(rho):
    norm, _ = quad(lambda s: berry_robnik_pdf(s, rho), 0, np.inf, epsabs=1e-12)
    mean, _ = quad(lambda s: s * berry_robnik_pdf(s, rho), 0, np.inf, epsabs=1e-12)
    assert norm == pytest.approx(1.0, abs=1e-6)
    assert mean == pytest.approx(1.0, abs=1e-6)
    assert berry_robnik_cdf(80.0, rho) == pytest.approx(1.0, abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1))
def test_cdf_is_integral_of_pdf(rho):
    s = np.linspace(0, 6, 61)
    F = berry_robnik_cdf(s, rho)
    assert np.all(np.diff(F) >= -1e-15)
    assert np.all(berry_robnik_pdf(np.linspace(0, 20, 2001), rho) >= 0)
    for a, b in zip(s[:-1:10], s[1::10]):
        val, _ = quad(lambda x: berry_robnik_pdf(x, rho), a, b)
        assert berry_robnik_cdf(b, rho) - berry_robnik_cdf(a, rho) == pytest.approx(val, abs=1e-10)


def test_domain_errors():
    with pytest.raises(ValueError):
        berry_robnik_pdf(1.0, 1.5)
    with pytest.raises(ValueError):
        berry_robnik_cdf(-1.0, 0.5)
    with pytest.raises(ValueError):
        SpacingSet(np.array([1.0, -0.1]))


def test_fit_poisson_and_wigner():
    rng = np.random.default_rng(0)
    assert fit_regularity(rng.exponential(size=10_000)).rho >= 0.9
    assert fit_regularity(wigner_surmise_sample(rng, 10_000)).rho <= 0.1


def test_fit_superposition_of_sequences():
    rng = np.random.default_rng(3)
    regular = np.cumsum(rng.exponential(size=5000)) * 2.0
    chaotic = np.cumsum(wigner_surmise_sample(rng, 5000)) * 2.0
    merged = np.sort(np.concatenate([regular, chaotic]))
    merged = merged[merged < min(regular[-1], chaotic[-1])]
    s = np.diff(merged)
    fit = fit_regularity(s / s.mean())
    assert fit.rho == pytest.approx(0.5, abs=0.1)


def test_fit_flags_and_determinism():
    rng = np.random.default_rng(1)
    s = rng.exponential(size=100)
    a, b = fit_regularity(s), fit_regularity(s.copy())
    assert a == b and a.flagged
    assert 0 <= a.rho <= 1
    assert fit_regularity(np.ones(300)).flagged


def test_rescaling_invariance():
    E = np.sort(np.random.default_rng(4).uniform(0, 1, 1500))
    a = fit_regularity(unfold(E).spacings)
    b = fit_regularity(unfold(37.5 * E).spacings)
    assert a.rho == pytest.approx(b.rho, abs=1e-9)


def test_pooling_order_invariance():
    rng = np.random.default_rng(5)
    sets = [SpacingSet(rng.exponential(size=300), (i,)) for i in range(4)]
    a = fit_regularity(SpacingSet.pooled(sets))
    b = fit_regularity(SpacingSet.pooled(sets[::-1]))
    assert a.rho == b.rho


def test_scan_on_poisson_levels(tmp_path):
    rng = np.random.default_rng(6)
    subs = {(k, s): np.sort(rng.uniform(-7.5, -0.5, 2500)) for k in (0, 2) for s in (1, -1)}
    scan = windowed_regularity_scan(subs, WindowSpec(eps_max=-1.0))
    assert len(scan.points) >= 20
    # local polynomial unfolding absorbs part of the Poisson staircase noise
    assert scan.rho.mean() >= 0.85
    assert scan.rho.min() >= 0.6
    path = tmp_path / "scan.csv"
    write_scan(path, scan)
    data = read_table(path)
    assert_allclose(data["rho"], scan.rho)


def test_scan_skips_sparse_windows():
    rng = np.random.default_rng(7)
    subs = {0: np.sort(rng.uniform(-7, -6, 30)), 1: np.sort(rng.uniform(-7, -1, 3000))}
    scan = windowed_regularity_scan(subs, WindowSpec(eps_max=-1.0, min_spacings=150))
    assert scan.skipped == [] or all(isinstance(r, str) for _, r in scan.skipped)
    sparse = windowed_regularity_scan({0: subs[0]}, WindowSpec(eps_max=-5.0))
    assert sparse.points == [] and len(sparse.skipped) > 0


def test_sector_subsequences(sol10):
    subs = sector_subsequences(sol10)
    assert set(subs) == {(0, 1), (0, -1), (2, 1), (2, -1)}
    total = sum(len(v) for v in subs.values())
    assert total == sol10.sectors[0].dim + sol10.sectors[2].dim
