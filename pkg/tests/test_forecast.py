from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from plar.backfit import BackfitConfig, FixedK, run_backfit
from plar.errors import InsufficientDataError, InvalidInputError
from plar.forecast import (
    holdout_intervals,
    interval,
    make_interval,
    predict_next,
    predict_path,
    quantile,
    quantile_inverse,
    retro_residuals,
    write_intervals_csv,
)
from plar.harness import builtin_model
from plar.model import Trajectory, simulate


def stub(theta, b, sigma2=lambda e: np.ones_like(np.asarray(e, dtype=float))):
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return SimpleNamespace(p=theta.size, theta_hat=theta, b_hat=b, sigma2_hat=sigma2)


@pytest.fixture(scope="module")
def fitted():
    traj = simulate(builtin_model("minus", seed=20240), 5000, stream=(0,))
    return traj, run_backfit(traj, 1, BackfitConfig(stop_mode=FixedK(20)))


def test_zero_theta_predicts_b():
    res = stub([0.0], lambda e: 1.25 + 0.0 * np.asarray(e))
    for hist in ([5.0], [-100.0]):
        assert predict_next(res, hist, 0.3) == 1.25


def test_random_walk_carry_forward():
    res = stub([1.0], lambda e: 0.0 * np.asarray(e))
    assert predict_next(res, [3.5], 0.0) == 3.5


def test_lag_order_is_newest_first():
    res = stub([0.5, 0.25], lambda e: 0.0 * np.asarray(e))
    assert predict_next(res, [4.0, 8.0], 0.0) == 4.0
    with pytest.raises(InvalidInputError):
        predict_next(res, [1.0], 0.0)


def test_predict_path_feeds_back():
    res = stub([0.5], lambda e: 0.0 * np.asarray(e) + 1.0)
    np.testing.assert_allclose(predict_path(res, [2.0], [0.0, 0.0, 0.0]), [2.0, 2.0, 2.0])


def test_retro_residuals_of_exact_fit_vanish():
    x = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    traj = Trajectory(x, np.zeros(5))
    res = stub([2.0], lambda e: 0.0 * np.asarray(e))
    np.testing.assert_array_equal(retro_residuals(res, traj), 0.0)


def test_retro_residuals_standardized(fitted):
    traj, res = fitted
    r = retro_residuals(res, traj)
    assert 0.8 <= np.var(r, ddof=1) <= 1.2
    np.testing.assert_allclose(r, -res.residuals, atol=1e-12)


def test_quantile_inverse_edges():
    r = np.array([0.5, -1.0, 2.0, -3.0])
    assert quantile_inverse(r, 0.0) == 1.0
    assert quantile_inverse(r, 3.0) == 0.0
    with pytest.raises(InsufficientDataError):
        quantile_inverse([], 1.0)


def test_quantile_inverse_gaussian_tail():
    z = np.random.default_rng(7).standard_normal(200_000)
    oracle = 2 * stats.norm.cdf(-1.96)
    assert oracle == pytest.approx(0.05, abs=1e-3)
    assert quantile_inverse(z, 1.96) == pytest.approx(oracle, abs=0.01)


def test_quantile_order_statistic():
    r = np.array([1, -2, 3, -4, 5, -6, 7, -8, 9, -10], dtype=float)
    assert quantile(r, 0.2) == 8.0


def test_quantile_needs_enough_residuals():
    with pytest.raises(InsufficientDataError):
        quantile(np.ones(39), 0.05)
    with pytest.raises(InvalidInputError):
        quantile(np.ones(100), 1.5)


def test_quantile_reference_model(fitted):
    traj, res = fitted
    assert 1.8 <= quantile(retro_residuals(res, traj), 0.05) <= 2.2


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=60, max_size=200), st.floats(0.04, 0.9))
def test_quantile_is_smallest_level_point(values, alpha):
    r = np.array(values)
    q = quantile(r, alpha)
    assert quantile_inverse(r, q) <= alpha + 1e-12
    below = np.abs(r)[np.abs(r) < q]
    if below.size:
        assert quantile_inverse(r, below.max()) > alpha


def test_unit_sigma_interval():
    iv = make_interval(1.5, 1.0, 2.0, 0.1)
    assert (iv.lo, iv.hi) == (-0.5, 3.5)
    assert iv.covers(3.5) and not iv.covers(3.6)
    assert iv.width == 4.0


def test_widths_shrink_with_alpha(fitted):
    traj, res = fitted
    r = retro_residuals(res, traj)
    w = [interval(res, traj, traj.x[-1:], 0.0, a, r).width for a in (0.01, 0.10, 0.50)]
    assert w[0] >= w[1] >= w[2]


def test_holdout_intervals_match_single_calls(fitted):
    traj, res = fitted
    r = retro_residuals(res, traj)
    ivs = holdout_intervals(res, traj.x[:100], traj.x[100:103], traj.e[100:103], 0.1, r)
    for j, iv in enumerate(ivs):
        single = interval(res, traj, traj.x[99 + j:100 + j][::-1], traj.e[100 + j], 0.1, r)
        assert iv.point == pytest.approx(single.point, abs=1e-12)
        assert iv.hi == pytest.approx(single.hi, abs=1e-12)


def test_intervals_csv(tmp_path):
    iv = make_interval(0.0, 1.0, 1.0, 0.1)
    text = write_intervals_csv(tmp_path / "iv.csv", [(7, iv)]).read_text().splitlines()
    assert text == ["t,point,lo,hi,alpha", "7,0.0,-1.0,1.0,0.1"]
