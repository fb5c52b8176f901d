import numpy as np
import pytest
from conftest import circle_problem
from hypothesis import given, strategies as st

from bdflow import geometry
from bdflow.dtn import build_dtn_circle, build_dtn_general
from bdflow.stationary import (ProblemError, Regime, check_exponent, classify_regime,
                               energy_Ep, energy_G, estimate_Yp, first_eigen, make_problem,
                               mass_of, separable_b, solve_steady, steady_residual,
                               uniqueness_probe)


@pytest.mark.parametrize("a_value", [0.7, 0.0, -1.0])
def test_first_eigen_constant_coefficient(circle64, a_value):
    lam, phi1 = first_eigen(circle64, build_dtn_circle(64), np.full(64, a_value))
    assert lam == pytest.approx(a_value, abs=1e-12)
    np.testing.assert_allclose(phi1, 1 / np.sqrt(2 * np.pi), atol=1e-12)


def test_first_eigen_is_positive_and_normalized():
    curve = geometry.make_curve("ellipse", {"a": 1.3, "b": 0.8}, 64)
    a = 1 + 0.3 * np.cos(curve.theta)
    lam, phi1 = first_eigen(curve, build_dtn_general(curve), a)
    assert phi1.min() > 0
    assert geometry.l2_norm(curve, phi1) == pytest.approx(1.0, abs=1e-12)
    assert a.min() < lam < a.max() + 1.0


@pytest.mark.parametrize("lam,p,regime", [
    (1.0, 2.0, Regime.EXTINCTION_OR_BLOWUP),
    (1.0, 0.5, Regime.GROWTH),
    (0.0, 2.0, Regime.NEUTRAL),
    (-1.0, 0.5, Regime.EXTINCTION_OR_BLOWUP),
    (-1.0, 2.0, Regime.GROWTH),
])
def test_classify_regime(lam, p, regime):
    assert classify_regime(lam, p, 1e-8) is regime


@pytest.mark.parametrize("p", [1.0, 1.04, 0.96, 0.0, -1.0])
def test_exponent_guard(p):
    with pytest.raises(ProblemError):
        check_exponent(p)


def test_separable_branches():
    assert separable_b(0.5, 1.0, 2.0, 1) == pytest.approx(0.5)
    assert separable_b(1.0, 1.0, 0.5, 1) == pytest.approx(0.25)
    assert separable_b(3.7, 8.0, 4.0, 0) == pytest.approx(2.0)
    with pytest.raises(ProblemError):
        separable_b(1.5, 1.0, 2.0, 1)


def test_energies_closed_forms():
    spec = circle_problem(64, 2.0, 1.0)
    assert energy_G(np.zeros(64), spec) == 0.0
    assert energy_G(np.full(64, 0.5), spec) == pytest.approx(np.pi / 12, rel=1e-12)
    assert energy_Ep(np.ones(64), spec) == pytest.approx((2 * np.pi) ** (1 / 3), rel=1e-12)
    neutral = circle_problem(64, 2.0, 0.0)
    assert energy_G(np.ones(64), neutral) == pytest.approx(0.0, abs=1e-13)
    assert energy_Ep(np.ones(64), neutral) == pytest.approx(0.0, abs=1e-13)


def test_Yp_is_a_lower_estimate():
    spec = circle_problem(64, 2.0, 1.0)
    Yp = estimate_Yp(spec)
    f = 1 + 0.1 * np.cos(spec.curve.theta)
    assert energy_Ep(f, spec) >= Yp - 1e-10
    assert Yp <= energy_Ep(np.ones(64), spec) + 1e-12


@pytest.mark.parametrize("p,a_value,expect", [(2.0, 1.0, 0.5), (0.5, -1.0, 1.0)])
def test_steady_closed_forms(p, a_value, expect):
    st_ = solve_steady(circle_problem(64, p, a_value))
    np.testing.assert_allclose(st_.phi, expect, atol=1e-9)
    assert st_.residual <= 1e-9


def test_steady_neutral_mass_selection():
    spec = circle_problem(64, 2.0, 0.0)
    target = mass_of(np.full(64, 2.0), spec)
    assert target == pytest.approx(4 * np.sqrt(2 * np.pi), rel=1e-12)
    st_ = solve_steady(spec, mass_target=target)
    np.testing.assert_allclose(st_.phi, 2.0, atol=1e-9)
    with pytest.raises(ProblemError):
        solve_steady(spec)


def test_steady_on_star_domain():
    curve = geometry.make_curve("star", {"eps": 0.05, "m": 3}, 64)
    a = 1 + 0.2 * np.cos(curve.theta)
    for p in (0.5, 2.0, 2.5):
        spec = make_problem(curve, build_dtn_general(curve), p, a)
        st_ = solve_steady(spec, estimate_energy=False)
        assert st_.phi.min() > 0
        assert np.abs(steady_residual(st_.phi, spec)).max() <= 1e-9 * (1 + st_.phi.max() ** p)


def test_continuation_fallback(circle64):
    # p = 3 puts the constant profile next to a degenerate mode; plain Newton from
    # the default guess stagnates and the solver has to continue from a constant
    a = 1 + 0.2 * np.cos(circle64.theta)
    spec = make_problem(circle64, build_dtn_circle(64), 3.0, a)
    st_ = solve_steady(spec, estimate_energy=False)
    assert st_.phi.min() > 0
    assert np.abs(steady_residual(st_.phi, spec)).max() <= 1e-9


def test_uniqueness_constant_case():
    spec = circle_problem(64, 0.5, 1.0)
    rep = uniqueness_probe(spec, trials=5)
    assert rep["max_distance"] <= 1e-7
    np.testing.assert_allclose(rep["phi_min"], 1.0, atol=1e-9)
    assert uniqueness_probe(spec, trials=1)["max_distance"] == 0.0


def test_uniqueness_variable_coefficient(circle64):
    a = 1 + 0.2 * np.cos(circle64.theta)
    spec = make_problem(circle64, build_dtn_circle(64), 0.5, a)
    assert uniqueness_probe(spec, trials=5)["max_distance"] <= 1e-7


@given(st.floats(0.2, 3.0), st.sampled_from([0.5, 2.0, 3.0]))
def test_constant_steady_scaling(a_value, p):
    # constant coefficient a > 0: the constant profile solves a phi = q phi^p
    spec = circle_problem(32, p, a_value if p > 1 else -a_value)
    st_ = solve_steady(spec, estimate_energy=False)
    expect = (abs(a_value) / spec.q) ** (1 / (p - 1))
    np.testing.assert_allclose(st_.phi, expect, rtol=1e-9)
