import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from bhlab.classical import PhasePoint, classical_occupations, integrate
from bhlab.errors import NumericalError
from bhlab.fock import ModelParams, build_hamiltonian, enumerate_basis
from bhlab.quantum import build_coherent_state, expectation
from bhlab.tables import read_table
from bhlab.twa import (
    CloudSpec,
    Occupation,
    ensemble_energy_histogram,
    propagate_ensemble,
    sample_cloud,
    standard_observables,
    write_ensemble,
)

from conftest import QUENCH_POINTS

P = ModelParams(35)


def center(name):
    return PhasePoint.projected(*QUENCH_POINTS[name])


def test_width_and_validation():
    spec = CloudSpec(center("chaotic"), 50)
    assert spec.sigma == pytest.approx(0.1)
    assert CloudSpec(center("chaotic"), 50, width_mode="variance").sigma == pytest.approx(np.sqrt(0.1))
    for bad in (dict(n_particles=0), dict(n_samples=1), dict(width_mode="x"), dict(projection="x")):
        kw = dict(center=center("chaotic"), n_particles=10) | bad
        with pytest.raises(ValueError):
            CloudSpec(**kw)


@pytest.mark.parametrize("projection", ["radial", "tangent"])
def test_cloud_constraint_and_determinism(projection):
    spec = CloudSpec(center("intermittent"), 35, 3000, seed=4, projection=projection)
    x = sample_cloud(spec)
    assert x.shape == (3000, 8)
    assert_allclose(np.sum(x ** 2, axis=1), 2.0, atol=1e-12)
    assert_array_equal(x, sample_cloud(spec))
    assert not np.array_equal(x, sample_cloud(CloudSpec(center("intermittent"), 35, 3000, seed=5)))


def test_cloud_mean_is_unbiased():
    spec = CloudSpec(center("trapped"), 35, 20_000, seed=1)
    x = sample_cloud(spec)
    c = spec.center.vector
    # radial projection shrinks each coordinate by a factor 1 - O(L sigma^2)
    bound = 4 * spec.sigma / np.sqrt(spec.n_samples) + 4 * spec.sigma ** 2 * np.abs(c)
    assert np.all(np.abs(x.mean(axis=0) - c) <= bound)


def test_narrow_cloud_collapses_to_center():
    spec = CloudSpec(center("chaotic"), 10**30, 50)
    x = sample_cloud(spec)
    assert_allclose(x, np.broadcast_to(spec.center.vector, x.shape), atol=1e-6)
    hist = ensemble_energy_histogram(x, P, bins=20)
    assert np.count_nonzero(hist.weights) == 1


def test_identical_points_give_zero_stderr():
    x0 = center("chaotic").vector
    t = np.linspace(0, 20, 21)
    obs = standard_observables(4, 1)
    res = propagate_ensemble(np.tile(x0, (5, 1)), t, obs, P)
    single = integrate(x0, P, times=t)
    assert_allclose(res.mean["n2"], classical_occupations(single.states)[:, 1], atol=1e-14)
    for name in obs:
        assert np.all(res.stderr[name] <= 1e-12)
    assert res.n_effective == 5 and res.n_failed == 0


def test_stderr_shrinks_as_root_two():
    t = np.array([0.0, 5.0, 10.0])
    obs = {"n1": Occupation(0)}
    errs = []
    for n in (2000, 4000):
        x = sample_cloud(CloudSpec(center("intermittent"), 35, n, seed=7))
        errs.append(propagate_ensemble(x, t, obs, P, rtol=1e-10, atol=1e-12).stderr["n1"])
    ratio = errs[0] / errs[1]
    assert_allclose(ratio, np.sqrt(2), rtol=0.15)


def initial_occupation_means(name, n=4000):
    spec = CloudSpec(center(name), 35, n, seed=3)
    res = propagate_ensemble(sample_cloud(spec), [0.0], standard_observables(4, 0), P)
    m = np.array([res.mean[f"n{k + 1}"][0] for k in range(4)])
    s = np.array([res.stderr[f"n{k + 1}"][0] for k in range(4)])
    return spec, m, s


@pytest.mark.parametrize("name", list(QUENCH_POINTS))
def test_initial_means_within_projection_bias(name):
    spec, m, s = initial_occupation_means(name)
    n_c = classical_occupations(spec.center.vector)
    assert np.all(np.abs(m - n_c) <= spec.sigma ** 2 + 4 * s)


@pytest.mark.parametrize("name", list(QUENCH_POINTS))
def test_initial_bias_follows_leading_order(name):
    # noise adds sigma^2 to each n_k, rescaling divides by 1 + L sigma^2
    spec, m, s = initial_occupation_means(name, n=20_000)
    n_c = classical_occupations(spec.center.vector)
    s2 = spec.sigma ** 2
    predicted = n_c + s2 * (1 - 4 * n_c)
    assert np.all(np.abs(m - predicted) <= 4 * s + 10 * s2 ** 2)


def test_reduction_is_order_insensitive():
    x = sample_cloud(CloudSpec(center("chaotic"), 35, 40, seed=2))
    t = np.linspace(0, 5, 6)
    obs = standard_observables(4, 0)
    a = propagate_ensemble(x, t, obs, P, rtol=1e-10, atol=1e-12)
    b = propagate_ensemble(x[::-1], t, obs, P, rtol=1e-10, atol=1e-12)
    for name in obs:
        assert_allclose(a.mean[name], b.mean[name], rtol=1e-12, atol=1e-14)


def test_failed_trajectories_raise():
    x = sample_cloud(CloudSpec(center("chaotic"), 35, 10, seed=0))
    x[0] = np.nan
    with pytest.raises(NumericalError):
        propagate_ensemble(x, [0.0, 1.0], {"n1": Occupation(0)}, P)


def test_ensemble_output(tmp_path):
    x = sample_cloud(CloudSpec(center("chaotic"), 35, 20, seed=0))
    res = propagate_ensemble(x, np.linspace(0, 2, 5), standard_observables(4, 0), P)
    lo, hi = res.band("n_max")
    assert np.all(hi - lo == pytest.approx(6 * res.stderr["n_max"]))
    path = tmp_path / "twa.csv"
    write_ensemble(path, res)
    data = read_table(path)
    assert "mean_n_max" in data and "stderr_n4" in data
    assert_allclose(data["mean_n1"], res.mean["n1"])


def quantum_energy_moments(x, params):
    basis = enumerate_basis(params)
    H = build_hamiltonian(params, basis)
    psi = build_coherent_state(x, params, basis).amplitudes
    N = params.n_particles
    m = expectation(psi, H) / N
    return m, expectation(psi, H @ H) / N ** 2 - m * m


def cloud_moments(name):
    hist = ensemble_energy_histogram(sample_cloud(CloudSpec(center(name), 35, 2000, seed=0)), P)
    return hist.mean_eps, hist.var_eps


def test_intermittent_cloud_matches_quantum_mean():
    m_q, _ = quantum_energy_moments(center("intermittent"), P)
    m_c, _ = cloud_moments("intermittent")
    assert abs(m_q - m_c) <= 0.05


def test_trapped_cloud_mean_example():
    # reference example: same mean energy for classical and quantum histograms within 0.05
    m_q, _ = quantum_energy_moments(center("trapped"), P)
    m_c, _ = cloud_moments("trapped")
    assert abs(m_q - m_c) <= 0.05


def test_chaotic_cloud_moments_example():
    # reference example: means within 0.05 and variances within 20%
    m_q, v_q = quantum_energy_moments(center("chaotic"), P)
    m_c, v_c = cloud_moments("chaotic")
    assert abs(v_c / v_q - 1) <= 0.2
    assert abs(m_q - m_c) <= 0.05
