import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plar.errors import InvalidInputError, StabilityError
from plar.harness import builtin_model
from plar.model import (
    ModelSpec,
    NoiseLaw,
    SymbolicFn,
    Trajectory,
    check_hypotheses,
    check_stability,
    coeffs_from_roots,
    default_burn_in,
    make_rng,
    simulate,
)

AR4_COEFFS = [1.0, 0.0625, -0.25, 0.046875]


def expand_monic(roots):
    """Coefficients of prod (z - r) by repeated multiplication, highest power first."""
    poly = [1.0]
    for r in roots:
        nxt = [0.0] * (len(poly) + 1)
        for i, c in enumerate(poly):
            nxt[i] += c
            nxt[i + 1] -= r * c
        poly = nxt
    return poly


def noiseless(theta):
    return ModelSpec(theta, SymbolicFn.zero(), SymbolicFn.zero(), [0.0])


# -- stability and roots ------------------------------------------------------


def test_stability_ar1_root_is_coefficient():
    stable, roots = check_stability([0.7])
    assert stable
    np.testing.assert_allclose(roots, [0.7])


def test_unstable_ar1():
    stable, roots = check_stability([1.5])
    assert not stable
    assert abs(roots[0]) == pytest.approx(1.5)


def test_ar4_roots_recovered():
    oracle = expand_monic([0.5, -0.5, 0.75, 0.25])
    np.testing.assert_allclose(-np.array(oracle[1:]), AR4_COEFFS, atol=1e-15)
    stable, roots = check_stability(AR4_COEFFS)
    assert stable
    np.testing.assert_allclose(np.sort(roots.real), [-0.5, 0.25, 0.5, 0.75], atol=1e-10)
    np.testing.assert_allclose(roots.imag, 0.0, atol=1e-10)


def test_unit_root_is_unstable():
    assert not check_stability([1.0])[0]


def test_zero_trailing_coefficient_keeps_p_roots():
    _, roots = check_stability([0.5, 0.0])
    assert roots.size == 2


def test_non_finite_theta_rejected():
    with pytest.raises(InvalidInputError):
        check_stability([np.nan])


@pytest.mark.parametrize(
    "roots, expected",
    [([0.5], [0.5]), ([0.5, -0.5], [0.0, 0.25]), ([0.5, -0.5, 0.75, 0.25], AR4_COEFFS)],
)
def test_coeffs_from_roots(roots, expected):
    np.testing.assert_allclose(coeffs_from_roots(roots), expected, atol=1e-15)


def test_coeffs_from_roots_conjugate_pair_is_real():
    c = coeffs_from_roots([0.5 + 0.5j, 0.5 - 0.5j])
    assert c.dtype == float
    np.testing.assert_allclose(c, [1.0, -0.5])


def test_coeffs_from_roots_errors():
    with pytest.raises(InvalidInputError):
        coeffs_from_roots([])
    with pytest.raises(InvalidInputError):
        coeffs_from_roots([0.5j])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-0.95, 0.95), min_size=1, max_size=5))
def test_roots_round_trip(roots):
    coeffs = coeffs_from_roots(roots)
    _, back = check_stability(coeffs)
    np.testing.assert_allclose(coeffs_from_roots(back), coeffs, atol=1e-8)
    np.testing.assert_allclose(coeffs, -np.array(expand_monic(roots)[1:]), atol=1e-10)


# -- symbolic functions and noise laws ----------------------------------------


def test_symbolic_functions():
    e = np.array([-4.0, 0.0, 2.25])
    np.testing.assert_allclose(SymbolicFn.sqrt_abs()(e), [2.0, 0.0, 1.5])
    np.testing.assert_allclose(SymbolicFn.quadratic_affine(1.0, 1 / 24)(e), 1 + e ** 2 / 24)
    np.testing.assert_allclose(SymbolicFn.constant(3.0)(e), 3.0)
    np.testing.assert_allclose(SymbolicFn.zero()(e), 0.0)
    pw = SymbolicFn.piecewise_linear([(0.0, 0.0), (1.0, 2.0)])
    np.testing.assert_allclose(pw(np.array([-1.0, 0.5, 3.0])), [0.0, 1.0, 2.0])
    assert SymbolicFn.sqrt_abs().holder_exponent == 0.5


def test_symbolic_fn_round_trip_and_errors():
    f = SymbolicFn.quadratic_affine(1.0, 0.5)
    assert SymbolicFn.from_dict(f.to_dict()) == f
    with pytest.raises(InvalidInputError):
        SymbolicFn("Cubic")
    with pytest.raises(InvalidInputError):
        SymbolicFn.piecewise_linear([(1.0, 0.0), (0.0, 1.0)])


@pytest.mark.parametrize("law", [NoiseLaw.uniform(3.0), NoiseLaw.gaussian(), NoiseLaw.truncated_gaussian(2.0)])
def test_noise_law_moments(law):
    draws = law.sample(make_rng(11), 200_000)
    assert abs(draws.mean()) < 0.01 * max(1.0, law.support_half_width if law.bounded else 1.0)
    assert draws.var() == pytest.approx(law.variance, rel=0.02)
    if law.bounded:
        assert np.max(np.abs(draws)) <= law.support_half_width


def test_truncated_gaussian_has_unit_variance():
    assert NoiseLaw.truncated_gaussian(2.0).variance == pytest.approx(1.0)


# -- simulation ----------------------------------------------------------------


def test_noiseless_recursion_is_exact():
    traj = simulate(noiseless([0.7]), 30, burn_in=0, x0=[1.0])
    np.testing.assert_allclose(traj.x, 0.7 ** np.arange(1, 31), rtol=1e-14)


def test_simulate_refuses_unstable():
    with pytest.raises(StabilityError):
        simulate(noiseless([1.2]), 10)


def test_simulate_needs_n_above_p():
    with pytest.raises(InvalidInputError):
        simulate(noiseless([0.5, 0.1]), 2)


def test_seasonal_mean_of_inputs():
    spec = builtin_model("minus", seed=3)
    n = 6 * 4000
    traj = simulate(spec, n)
    se = np.std(traj.e, ddof=1) / np.sqrt(n)
    assert abs(traj.e.mean() - np.mean(spec.seasonal_s)) < 3 * se
    assert np.mean(spec.seasonal_s) == pytest.approx(-0.376, abs=1e-3)


def test_inputs_follow_the_cycle():
    spec = builtin_model("minus")
    traj = simulate(spec, 600)
    t = np.arange(1, 601)
    eta = traj.e - spec.seasonal_s[t % 6]
    assert np.all(np.abs(eta) <= 3.0)
    assert np.all(spec.domain.contains(traj.e))


def test_simulation_is_deterministic():
    spec = builtin_model("ar4", seed=5)
    a, b = simulate(spec, 400, stream=(1, 2)), simulate(spec, 400, stream=(1, 2))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.e, b.e)
    c = simulate(spec, 400, stream=(2, 2))
    assert not np.array_equal(a.x, c.x)


def test_default_burn_in():
    assert default_burn_in([0.7]) == 500
    assert default_burn_in([0.99]) == int(np.ceil(np.log(1e-12) / np.log(0.99)))


def test_check_hypotheses_reference_model():
    hyp = check_hypotheses(builtin_model("plus"))
    assert hyp["stable"] and hyp["eta_bounded_zero_mean"] and hyp["sigma_positive"]
    assert hyp["eps_unit_variance"] and not hyp["eps_bounded"]
    assert not check_hypotheses(noiseless([0.5]))["sigma_positive"]


def test_spec_json_round_trip(tmp_path):
    spec = builtin_model("ar4", seed=9)
    back = ModelSpec.from_json(spec.to_json(tmp_path / "m.json"))
    assert back.to_dict() == spec.to_dict()
    d = json.loads((tmp_path / "m.json").read_text())
    d["p"] = 2
    with pytest.raises(InvalidInputError):
        ModelSpec.from_dict(d)


def test_trajectory_csv_round_trip(tmp_path):
    traj = simulate(builtin_model("plus"), 50)
    back = Trajectory.from_csv(traj.to_csv(tmp_path / "t.csv"))
    assert np.array_equal(back.x, traj.x) and np.array_equal(back.e, traj.e)
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "t,x,e"


def test_trajectory_validation():
    with pytest.raises(InvalidInputError):
        Trajectory([1.0, 2.0], [0.0])
    with pytest.raises(InvalidInputError):
        Trajectory([0.0, 0.0], [50.0, 0.0], truth=builtin_model("minus"))
