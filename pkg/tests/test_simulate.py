import numpy as np
import pytest

from mvfilter.lions import standard_family
from mvfilter.model import gallery
from mvfilter.oracles import mean_field_linear_mean, ou_mean
from mvfilter.simulate import (SimulationError, TimeGrid, generator_consistency, prior_flow,
                               simulate_observation, simulate_signal)


def test_time_grid():
    g = TimeGrid(2.0, 4)
    assert g.dt == 0.5 and len(g) == 5
    np.testing.assert_allclose(g.times, [0, 0.5, 1, 1.5, 2])
    with pytest.raises(ValueError):
        TimeGrid(0.0, 3)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_thread_count_does_not_change_values():
    e = gallery("mean-field-linear")
    g = TimeGrid(0.2, 20)
    a = simulate_signal(e.coeffs, e.x0, g, 5000, 9, threads=1)
    b = simulate_signal(e.coeffs, e.x0, g, 5000, 9, threads=4)
    np.testing.assert_array_equal(a.particles, b.particles)


def test_increments_reproduce_euler_step():
    e = gallery("bounded-sensor", theta=0.7, s=0.4)
    g = TimeGrid(0.5, 10)
    sig = simulate_signal(e.coeffs, e.x0, g, 50, 1)
    X = sig.particles
    for k in (0, 5, 9):
        np.testing.assert_allclose(X[k + 1] - X[k] + 0.7 * X[k] * g.dt, 0.4 * sig.increments(k),
                                   atol=1e-14)


def test_particles_are_independent_of_N_prefix():
    # with no interaction, particle i's path depends only on its own stream
    e = gallery("bounded-sensor")
    g = TimeGrid(0.1, 10)
    a = simulate_signal(e.coeffs, e.x0, g, 10, 4)
    b = simulate_signal(e.coeffs, e.x0, g, 30, 4)
    np.testing.assert_array_equal(a.particles, b.particles[:, :10])


def test_ou_mean_oracle():
    e = gallery("bounded-sensor", theta=1.0, x0=2.0)
    g = TimeGrid(1.0, 200)
    sig = simulate_signal(e.coeffs, e.x0, g, 4000, 2)
    m = sig.particles[:, :, 0].mean(axis=1)
    # Euler mean (1 - theta dt)^k plus Monte Carlo error
    euler = 2.0 * (1 - g.dt) ** np.arange(g.steps + 1)
    assert np.max(np.abs(m - euler)) < 5 * np.sqrt(0.5 / 4000)
    assert np.max(np.abs(euler - ou_mean(1.0, 2.0, g.times))) < 3e-3


def test_mean_field_mean_oracle_coarse():
    e = gallery("mean-field-linear")
    g = TimeGrid(1.0, 200)
    sig = simulate_signal(e.coeffs, e.x0, g, 2000, 0)
    m = sig.particles[:, :, 0].mean(axis=1)
    exact = mean_field_linear_mean(0.0, 1.0, 1.0, g.times)
    assert np.max(np.abs(m / exact - 1)) < 0.02


def test_observation_measures():
    e = gallery("bounded-sensor")
    g = TimeGrid(1.0, 100)
    sig = simulate_signal(e.coeffs, e.x0, g, 10, 0)
    phys = simulate_observation(e.coeffs, sig, 0.25, 5)
    ref = simulate_observation(e.coeffs, sig, 0.25, 5, measure="reference")
    np.testing.assert_array_equal(ref.dY, ref.dW)
    drift = np.tanh(sig.reference_path[:-1]) * 0.5 * g.dt
    np.testing.assert_allclose(phys.dY - ref.dY, drift, atol=1e-15)
    assert phys.values.shape == (101, 1) and phys.values[0, 0] == 0
    with pytest.raises(ValueError):
        simulate_observation(e.coeffs, sig, 0.0, 5)
    with pytest.raises(ValueError):
        simulate_observation(e.coeffs, sig, 0.5, 5, measure="other")


def test_prior_flow_matches_ensemble_average():
    e = gallery("linear-gaussian")
    sig = simulate_signal(e.coeffs, e.x0, TimeGrid(0.1, 10), 100, 0)
    fam = standard_family()
    means, errs = prior_flow(fam, sig, with_errors=True)
    np.testing.assert_allclose(means["x"], sig.particles[:, :, 0].mean(axis=1), rtol=1e-14)
    np.testing.assert_array_equal(means["one"], 1.0)
    assert np.all(errs["one"] == 0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blowup_is_reported():
    from mvfilter.model import CoefficientSet
    co = CoefficientSet(lambda t, x, mu: x ** 3 * 1e3, lambda t, x, mu: np.ones((x.shape[0], 1, 1)),
                        lambda t, x, mu: np.zeros_like(x), lambda t: np.eye(1), (1, 1, 1))
    with pytest.raises(SimulationError, match="step"):
        simulate_signal(co, [10.0], TimeGrid(1.0, 50), 4, 0)


def test_dynkin_small():
    e = gallery("mean-field-linear")
    res = generator_consistency(e.coeffs, standard_family(), e.x0, TimeGrid(0.05, 50), 500,
                                seeds=range(6))
    assert all(r.passed for r in res), [(r.name, r.gap, r.tolerance) for r in res]
