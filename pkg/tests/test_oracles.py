import math

import numpy as np
import pytest

from src.oracles import (
    DEFAULT_RULE,
    CatalogFunction,
    QuadratureError,
    QuadratureRule,
    SigmaKind,
    batch_equivalence,
    check_monotonicity_propagation,
    convex_catalog,
    counterexample_derivative,
    counterexample_factor,
    counterexample_finite_difference,
    counterexample_sigma,
    expect_f_of_truncated,
    finite_support_mcv_equivalence,
    function_family_coefficients,
    integer_stop_loss_dominated,
    normal_cdf,
    random_atom_pairs,
    run_suite,
)


def test_quadrature_reproduces_normal_moments():
    mass, first, second = DEFAULT_RULE.moments()
    assert mass == pytest.approx(1.0, abs=1e-10)
    assert first == pytest.approx(0.0, abs=1e-10)
    assert second == pytest.approx(1.0, abs=1e-10)
    DEFAULT_RULE.self_check()


def test_quadrature_self_check_fails_on_narrow_range():
    with pytest.raises(QuadratureError):
        QuadratureRule(lower=-2.0, upper=2.0).self_check()


def test_quadrature_call_price():
    value = DEFAULT_RULE.integrate(lambda z: np.maximum(z, 0.0), breakpoints=[0.0])
    assert value == pytest.approx(1.0 / math.sqrt(2.0 * math.pi), abs=1e-12)


def test_normal_cdf():
    assert normal_cdf(0.0) == pytest.approx(0.5)
    assert normal_cdf(1.959963984540054) == pytest.approx(0.975)


def test_catalog_is_versioned_and_sized():
    names = [f.name for f in convex_catalog()]
    assert len(names) == 15
    assert "call(0)" in names and "exp" in names and "softplus(2)" in names


def test_truncated_expectation_edge_cases():
    assert expect_f_of_truncated(0.0, 0.0625, 1.0, np.exp) == pytest.approx(1.0)
    assert abs(expect_f_of_truncated(1.7, 0.0625, 1.0, lambda z: z)) < 1e-12


def test_truncated_expectation_of_abs_is_monotone():
    f = CatalogFunction("abs", np.abs, (0.0,))
    values = [expect_f_of_truncated(u, 0.0625, 1.0, f, kinks=f.kinks) for u in np.linspace(0.0, 3.0, 50)]
    assert np.all(np.diff(values) >= -1e-12)


def test_truncated_expectation_matches_closed_form_for_square():
    # E (u Z 1{|Z| <= c})^2 with c = 2
    c = 2.0
    phi_c = math.exp(-0.5 * c * c) / math.sqrt(2.0 * math.pi)
    inner = (1.0 - 2.0 * 0.5 * math.erfc(c / math.sqrt(2.0))) - 2.0 * c * phi_c
    assert expect_f_of_truncated(1.5, 0.0625, 1.0, np.square) == pytest.approx(2.25 * inner, rel=1e-10)


def test_counterexample_sigma_is_decreasing_and_convex():
    xs = np.linspace(-10.0, 5.0, 151)
    s = counterexample_sigma(xs)
    assert np.all(np.diff(s) < 0)
    assert np.all(np.diff(s, n=2) >= -1e-12)
    assert counterexample_sigma(-10.0) == pytest.approx(10.0, rel=1e-12)


def test_counterexample_derivative_signs():
    h = 0.5
    assert counterexample_derivative(8.0, h) == pytest.approx(math.exp(8.0), rel=1e-6)
    assert counterexample_derivative(-10.0, h) < 0
    assert counterexample_factor(-10.0, h) == pytest.approx(1.0 - 0.5 * 10.0, rel=1e-6)
    with pytest.raises(ValueError):
        counterexample_derivative(0.0, 0.0)


def test_counterexample_derivative_matches_finite_difference():
    for x in (-6.0, -2.0, 0.0, 3.0):
        closed = counterexample_derivative(x, 0.5)
        scale = math.exp(x + 0.25 * float(counterexample_sigma(x)) ** 2)
        assert abs(counterexample_finite_difference(x, 0.5) - closed) / scale < 1e-6


def test_counterexample_factor_changes_sign_once():
    xs = np.linspace(-20.0, 20.0, 4001)
    signs = np.sign(counterexample_factor(xs, 0.5))
    crossings = np.nonzero(np.diff(signs) != 0)[0]
    assert crossings.size == 1
    assert -2.3 < xs[crossings[0]] < -1.8


def test_propagation_nondecreasing_sigma_is_clean():
    report = check_monotonicity_propagation(SigmaKind.NONDECREASING, 0.5)
    assert report.count() == 0
    assert len(report.x_grid) == 201


def test_propagation_constant_sigma_is_clean():
    calls = [f for f in convex_catalog() if f.name == "call(0)"]
    report = check_monotonicity_propagation(SigmaKind.CONSTANT, 0.5, catalog=calls)
    assert report.count() == 0


def test_propagation_counterexample_is_detected():
    exp_only = [f for f in convex_catalog() if f.name == "exp"]
    report = check_monotonicity_propagation(SigmaKind.DECREASING_COUNTEREXAMPLE, 0.5, catalog=exp_only)
    assert report.monotonicity_violations_below("exp", -5.0)


@pytest.mark.parametrize("mu,nu,dominated", [
    ([0, 1, 2], [0, 1, 2], True),
    ([0], [-1, 1], True),
    ([1], [0], False),
    ([0, 0], [1], True),
    ([-10, 10], [0, 1, 2, 3, 4], False),
])
def test_finite_support_equivalence_known_cases(mu, nu, dominated):
    result = finite_support_mcv_equivalence(mu, nu)
    assert result.agree
    assert result.stop_loss_dominated is dominated


def test_atoms_are_validated():
    with pytest.raises(ValueError):
        integer_stop_loss_dominated([11], [0])
    with pytest.raises(ValueError):
        integer_stop_loss_dominated([0.5], [0])
    with pytest.raises(ValueError):
        integer_stop_loss_dominated([0] * 6, [0])


def test_function_family_size():
    family = function_family_coefficients()
    assert family.shape == (14950, 22)
    assert family.sum(axis=1).max() == 4


def test_random_equivalence_agrees():
    pairs = random_atom_pairs(2000, seed=3)
    agree, disagree, dominated = batch_equivalence(pairs)
    assert disagree == 0
    assert agree == 2000
    assert 0 < dominated < 2000


def test_suites_pass():
    for name in ("truncated_gaussian", "counterexample", "mcv_equivalence"):
        report = run_suite(name)
        failed = [row for row in report.rows if not row.passed]
        assert not failed, failed


@pytest.mark.slow
def test_all_suites_pass(tmp_path):
    report = run_suite("all")
    assert report.passed
    lines = report.to_csv(tmp_path / "oracle.csv").read_text().splitlines()
    assert lines[0] == "check,input,expected,observed,pass"
    assert "FAIL" not in report.to_text()


def test_unknown_suite():
    with pytest.raises(ValueError):
        run_suite("nope")
