import numpy as np
import pytest

from mvfilter.filtering import (FilterError, innovations, kalman_bucy_rmse, ks_residual,
                                mass_martingale_test, moment_diagnostic, normalize, run_zakai,
                                zakai_residual)
from mvfilter.lions import resolve_family, standard_family
from mvfilter.model import gallery
from mvfilter.oracles import kalman_bucy
from mvfilter.simulate import TimeGrid, prior_flow, simulate_observation, simulate_signal


def setup(name="bounded-sensor", T=1.0, steps=100, N=400, eps=1.0, seed=0, **params):
    e = gallery(name, **params)
    sig = simulate_signal(e.coeffs, e.x0, TimeGrid(T, steps), N, seed)
    obs = simulate_observation(e.coeffs, sig, eps, seed + 100)
    return e, sig, obs


def test_ks_identity_and_unit_mass_normalization():
    e, sig, obs = setup()
    p = run_zakai(e.coeffs, sig, obs, standard_family())
    assert p.ks_identity_gap() <= 1e-10
    np.testing.assert_array_equal(p.normalized["one"], 1.0)
    for nm, v in normalize(p).items():
        np.testing.assert_allclose(v, p.normalized[nm], rtol=1e-12, atol=1e-14)


def test_manual_weight_recursion():
    e, sig, obs = setup(steps=5, N=7)
    p = run_zakai(e.coeffs, sig, obs, resolve_family(["one"]))
    X = sig.particles[:, :, 0]
    lw = np.zeros(7)
    for k in range(5):
        hk = np.tanh(X[k])
        lw = lw + hk * obs.dY[k, 0] - 0.5 * hk ** 2 * sig.grid.dt
    np.testing.assert_allclose(p.log_weights[-1], lw, rtol=1e-13, atol=1e-15)
    assert p.mass[-1] == pytest.approx(np.mean(np.exp(lw)), rel=1e-13)


def test_zero_sensor_gives_prior():
    e, sig, obs = setup("linear-gaussian", c=0.0)
    fam = standard_family()
    p = run_zakai(e.coeffs, sig, obs, fam)
    prior = prior_flow(fam, sig)
    for nm in fam:
        np.testing.assert_array_equal(p.normalized[nm], prior[nm])
    np.testing.assert_array_equal(p.mass, 1.0)


def test_epsilon_zero_hook_switches_off_likelihood():
    e, sig, obs = setup()
    p = run_zakai(e.coeffs, sig, obs, resolve_family(["x"]), epsilon=0.0)
    np.testing.assert_array_equal(p.log_weights, 0.0)


def test_threads_do_not_change_values():
    e, sig, obs = setup(N=5000)
    a = run_zakai(e.coeffs, sig, obs, standard_family(), threads=1)
    b = run_zakai(e.coeffs, sig, obs, standard_family(), threads=4)
    np.testing.assert_array_equal(a.log_weights, b.log_weights)
    for nm in a.names:
        np.testing.assert_array_equal(a.normalized[nm], b.normalized[nm])


def test_grid_mismatch():
    e, sig, obs = setup()
    other = simulate_signal(e.coeffs, e.x0, TimeGrid(1.0, 50), 10, 0)
    with pytest.raises(FilterError):
        run_zakai(e.coeffs, other, obs, standard_family())


def test_kalman_bucy_oracle_small():
    e, sig, obs = setup("linear-gaussian", steps=500, N=4000)
    p = run_zakai(e.coeffs, sig, obs, resolve_family(["x"]))
    rmse, mean, var = kalman_bucy_rmse(p, e, obs)
    assert rmse < 0.05


def test_kalman_bucy_riccati_steady_state():
    # dP/dt = 2aP + s^2 - P^2 c^2/g^2 -> P* = (a + sqrt(a^2 + s^2 c^2/g^2)) g^2/c^2
    _, P = kalman_bucy(-1.0, 1.0, 1.0, 1.0, 0.0, 1e-3, np.zeros(20000))
    assert P[-1] == pytest.approx(-1 + np.sqrt(2), rel=1e-6)


def test_residuals_one_is_exact_and_order():
    e, sig, obs = setup()
    fam = standard_family()
    p = run_zakai(e.coeffs, sig, obs, fam)
    r1 = ks_residual(p, e.coeffs, fam["one"], obs)
    np.testing.assert_array_equal(r1.residuals, 0.0)
    rz = zakai_residual(p, e.coeffs, fam["one"], obs)
    assert rz.rms < 0.05


def _rms(fn, steps, compensate):
    e, sig, obs = setup(steps=steps, N=1000, seed=3)
    F = standard_family()["x"]
    p = run_zakai(e.coeffs, sig, obs, {"x": F})
    return fn(p, e.coeffs, F, obs, compensate=compensate).rms


@pytest.mark.parametrize("fn", [zakai_residual, ks_residual])
def test_residual_orders(fn):
    dts = np.array([4e-3, 2e-3, 1e-3])
    raw = [_rms(fn, int(round(1 / dt)), False) for dt in dts]
    comp = [_rms(fn, int(round(1 / dt)), True) for dt in dts]
    s_raw = np.polyfit(np.log(dts), np.log(raw), 1)[0]
    s_comp = np.polyfit(np.log(dts), np.log(comp), 1)[0]
    # uncompensated defects carry the signal martingale, order one half
    assert 0.35 < s_raw < 0.65
    assert s_comp > 0.9


def test_innovations_shape_and_mean():
    e, sig, obs = setup(steps=400, N=500)
    p = run_zakai(e.coeffs, sig, obs, resolve_family(["one"]))
    dI = innovations(p, e.coeffs, obs)
    assert dI.shape == (400, 1)
    # innovation increments behave like Brownian increments
    assert abs(np.sum(dI ** 2) - 1.0) < 0.3


def test_resampling_preserves_mass_track_and_normalization():
    e, sig, obs = setup(steps=200, N=300, beta=5.0)
    fam = standard_family()
    p = run_zakai(e.coeffs, sig, obs, fam, resample=True, ess_threshold=0.9)
    q = run_zakai(e.coeffs, sig, obs, fam)
    assert p.resampled_steps
    assert p.ks_identity_gap() <= 1e-10
    # both runs estimate the same posterior mean up to Monte Carlo error
    assert np.max(np.abs(p.normalized["x"] - q.normalized["x"])) < 0.5
    with pytest.raises(FilterError):
        ks_residual(p, e.coeffs, fam["x"], obs)


def test_mass_martingale_batch_matches_single_runs():
    e, sig, _ = setup(steps=50, N=40)
    r = mass_martingale_test(e.coeffs, sig, 0.25, 6, 7, chunk=4)
    for stream in (0, 5):
        obs = simulate_observation(e.coeffs, sig, 0.25, 7, measure="reference", stream=stream)
        p = run_zakai(e.coeffs, sig, obs, resolve_family(["one"]))
        assert r.terminal_mass[stream] == pytest.approx(p.mass[-1], rel=1e-12)


def test_mass_martingale_and_moments():
    e, sig, _ = setup(steps=100, N=50)
    r = mass_martingale_test(e.coeffs, sig, 1.0, 3000, 1)
    assert r.passed, r.to_dict()
    d = moment_diagnostic(e.coeffs, sig, [1.0, 0.5], 500, 1)
    assert 1.0 <= d["sup"] < 10.0
