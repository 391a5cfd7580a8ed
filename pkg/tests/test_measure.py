import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvfilter.measure import (Ensemble, EvaluationError, WassersteinError, WeightedEnsemble,
                              brute_force_w2, integrate, second_moment, wasserstein2)


def test_validation():
    with pytest.raises(ValueError):
        WeightedEnsemble(np.zeros((0, 1)))
    with pytest.raises(ValueError):
        WeightedEnsemble([[np.nan]])
    with pytest.raises(ValueError):
        WeightedEnsemble([[0.0], [1.0]], [1.0, -1.0])
    with pytest.raises(ValueError):
        WeightedEnsemble([[0.0], [1.0]], [1.0])
    with pytest.raises(ValueError):
        WeightedEnsemble([[0.0], [1.0]], [0.0, 0.0]).probabilities


def test_points_are_read_only():
    e = Ensemble(np.ones((3, 2)))
    with pytest.raises(ValueError):
        e.points[0, 0] = 2.0


def test_integrate_weighted_and_raw():
    e = WeightedEnsemble([[0.0], [1.0], [2.0]], [1.0, 2.0, 1.0])
    assert integrate(e, lambda x: x[:, 0]) == pytest.approx(1.0)
    assert integrate(e, lambda x: x[:, 0], normalized=False) == pytest.approx(4.0)
    assert e.total_mass == 4.0
    assert second_moment(e) == pytest.approx((0 + 2 + 4) / 4)


def test_integrate_reports_offending_particle():
    e = Ensemble([[0.0], [1.0], [2.0]])
    with pytest.raises(EvaluationError, match="particle 1"):
        integrate(e, lambda x: np.where(x[:, 0] == 1.0, np.inf, 0.0))


def test_uniform_ensemble_matches_weighted():
    pts = np.random.default_rng(0).normal(size=(20, 2))
    a, b = Ensemble(pts), WeightedEnsemble(pts, np.full(20, 3.0))
    np.testing.assert_allclose(a.mean, b.mean, rtol=1e-14)
    assert a.second_moment == pytest.approx(b.second_moment, rel=1e-14)


def test_w2_point_masses():
    assert wasserstein2([[0.0]], [[3.0]]).value == pytest.approx(3.0)
    r = wasserstein2([[0.0, 0.0]], [[3.0, 4.0]])
    assert r.value == pytest.approx(5.0) and r.exact


def test_w2_gaussian_shift_closed_form():
    # translating a cloud by c moves it by exactly |c| in W2
    pts = np.random.default_rng(1).normal(size=(40, 1))
    assert wasserstein2(pts, pts + 0.7).value == pytest.approx(0.7, rel=1e-12)


def test_w2_quantile_unequal_weights():
    a = WeightedEnsemble([[0.0], [1.0]], [0.5, 0.5])
    b = Ensemble([[0.5]])
    assert wasserstein2(a, b).value == pytest.approx(0.5)


def test_w2_lp_for_weighted_2d():
    a = WeightedEnsemble([[0.0, 0.0], [1.0, 0.0]], [0.25, 0.75])
    b = WeightedEnsemble([[0.0, 1.0]], [1.0])
    expected = np.sqrt(0.25 * 1 + 0.75 * 2)
    r = wasserstein2(a, b)
    assert r.method == "linear-program" and r.value == pytest.approx(expected, rel=1e-9)


def test_w2_cap_and_approximate():
    g = np.random.default_rng(2)
    a, b = g.normal(size=(80, 2)), g.normal(size=(80, 2)) + 1.0
    with pytest.raises(WassersteinError):
        wasserstein2(a, b)
    approx = wasserstein2(a, b, allow_approximate=True)
    exact = wasserstein2(a, b, cap=100)
    assert not approx.exact and approx.regularization > 0
    assert approx.value == pytest.approx(exact.value, rel=0.05)


def test_w2_dim_mismatch():
    with pytest.raises(WassersteinError):
        wasserstein2([[0.0]], [[0.0, 1.0]])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(2, 3), st.integers(0, 2 ** 31))
def test_w2_matches_brute_force_nd(n, dim, seed):
    g = np.random.default_rng(seed)
    a, b = g.normal(size=(n, dim)), g.normal(size=(n, dim))
    assert wasserstein2(a, b).value == pytest.approx(brute_force_w2(a, b), abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2 ** 31))
def test_w2_metric_properties(n, seed):
    g = np.random.default_rng(seed)
    a, b, c = (g.normal(size=(n, 1)) for _ in range(3))
    ab = wasserstein2(a, b).value
    assert ab == pytest.approx(wasserstein2(b, a).value, abs=1e-12)
    assert wasserstein2(a, a).value == 0.0
    assert ab <= wasserstein2(a, c).value + wasserstein2(c, b).value + 1e-12
