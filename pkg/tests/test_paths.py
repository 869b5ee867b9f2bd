import math

import numpy as np
import pytest

from src.coefficients import ModelPair, gbm
from src.measures import EmpiricalMeasure
from src.noise import generate_noise
from src.paths import (
    Estimate,
    FunctionalCurve,
    FunctionalKind,
    FunctionalSpec,
    GridPath,
    compare_curves,
    compare_functionals,
    estimate_curve,
    estimate_functional,
    gbm_call_square_closed_form,
    interpolate,
    marginal_at,
    paired_stderrs,
    running_mean,
    running_sup,
    spot_check_convexity,
)
from src.scheme import ParticleEnsemble, SchemeConfig, simulate, simulate_coupled


def _toy_ensemble():
    config = SchemeConfig(horizon_T=2.0, steps_M=2, particles_N=2)
    states = np.array([[0.0, 2.0, 1.0], [1.0, 1.0, 3.0]])
    return ParticleEnsemble(states=states, config=config, model_label="toy")


def test_interpolate_hits_knots_and_midpoints():
    values = [0.0, 2.0, 1.0]
    assert interpolate(values, 0.0, 2.0) == 0.0
    assert interpolate(values, 1.0, 2.0) == 2.0
    assert interpolate(values, 2.0, 2.0) == 1.0
    assert interpolate(values, 1.5, 2.0) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        interpolate(values, 2.5, 2.0)


def test_grid_path():
    path = GridPath(np.array([0.0, 0.5, 1.0]), np.array([1.0, 3.0, 2.0]))
    assert path(0.25) == pytest.approx(2.0)
    assert path.sup() == 3.0
    with pytest.raises(ValueError):
        GridPath(np.array([0.0, 0.2, 1.0]), np.array([1.0, 3.0, 2.0]))


def test_running_sup_and_mean():
    states = np.array([[0.0, 2.0, 1.0]])
    assert running_sup(states, 1.5, 2.0)[0] == pytest.approx(2.0)
    assert running_sup(states, 0.5, 2.0)[0] == pytest.approx(1.0)
    assert running_mean(states, 2.0, 2.0)[0] == pytest.approx(1.25)
    assert running_mean(states, 0.5, 2.0)[0] == pytest.approx(0.5)
    assert running_mean(states, 0.0, 2.0)[0] == 0.0


def test_marginal_at_mixes_neighbours():
    ens = _toy_ensemble()
    assert marginal_at(ens, 1.0) is ens.marginal(1)
    mid = marginal_at(ens, 1.5)
    assert mid.mean == pytest.approx(0.5 * ens.marginal(1).mean + 0.5 * ens.marginal(2).mean)


def test_functional_spec_validation():
    with pytest.raises(ValueError):
        FunctionalSpec(FunctionalKind.USER_COMPOSITE)
    with pytest.raises(ValueError):
        FunctionalSpec(FunctionalKind.SUP_PATH, expression="x")
    assert FunctionalSpec("sup_path").name == "sup_path"


def test_builtin_functionals_on_toy_paths():
    ens = _toy_ensemble()
    call = FunctionalSpec(FunctionalKind.TERMINAL_CALL_SQUARE)
    sup = FunctionalSpec(FunctionalKind.SUP_PATH)
    value = FunctionalSpec(FunctionalKind.TERMINAL_VALUE)
    assert estimate_functional(ens, call).value == pytest.approx((1.0 + 9.0) / 2)
    assert estimate_functional(ens, sup).value == pytest.approx((2.0 + 3.0) / 2)
    assert estimate_functional(ens, value, 1.0).value == pytest.approx(1.5)


def test_composite_reads_marginal_statistics():
    ens = _toy_ensemble()
    f = FunctionalSpec(FunctionalKind.USER_COMPOSITE, expression="max(x - mean_x, 0) + 0 * path_mean",
                       name="above_mean")
    assert f.statistics == ["mean_x"]
    # at T the marginal is {1, 3}, mean 2
    assert estimate_functional(ens, f).value == pytest.approx(0.5)


def test_estimate_from_samples():
    est = Estimate.from_samples(np.array([1.0, 2.0, 3.0]))
    assert est.value == 2.0
    assert est.stderr == pytest.approx(1.0 / math.sqrt(3.0))
    assert est.ci95[0] == pytest.approx(2.0 - 1.96 / math.sqrt(3.0))
    with pytest.raises(ValueError):
        Estimate.from_samples(np.array([]))


def test_curve_csv(tmp_path):
    ens = _toy_ensemble()
    curve = estimate_curve(ens, FunctionalSpec(FunctionalKind.TERMINAL_VALUE))
    lines = curve.to_csv(tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "t,estimate,stderr,ci_lo,ci_hi"
    assert len(lines) == 4


def test_compare_curves_requires_shared_times():
    est = Estimate.from_samples(np.array([1.0, 2.0]))
    a = FunctionalCurve("f", "a", np.array([0.0, 1.0]), [est, est])
    b = FunctionalCurve("f", "b", np.array([0.0, 0.5]), [est, est])
    with pytest.raises(ValueError):
        compare_curves(a, b)


def test_compare_curves_flags_reversed_order():
    low = Estimate(1.0, 0.01, 100, (0.98, 1.02))
    high = Estimate(2.0, 0.01, 100, (1.98, 2.02))
    times = np.array([0.0])
    ordered = compare_curves(FunctionalCurve("f", "a", times, [low]), FunctionalCurve("f", "b", times, [high]))
    reversed_ = compare_curves(FunctionalCurve("f", "b", times, [high]), FunctionalCurve("f", "a", times, [low]))
    assert ordered[0].ordered and ordered[0].strict
    assert not reversed_[0].ordered


def test_compare_curves_uses_paired_stderrs():
    low = Estimate(1.0, 1.0, 100, (-0.96, 2.96))
    high = Estimate(2.0, 1.0, 100, (0.04, 3.96))
    times = np.array([0.5])
    a, b = FunctionalCurve("f", "a", times, [low]), FunctionalCurve("f", "b", times, [high])
    independent = compare_curves(a, b)[0]
    paired = compare_curves(a, b, paired=[0.1])[0]
    assert independent.pooled_stderr == pytest.approx(math.sqrt(2.0))
    assert independent.ordered and not independent.strict
    assert paired.pooled_stderr == 0.1
    assert paired.slack == pytest.approx(0.3)
    assert paired.strict
    with pytest.raises(ValueError):
        compare_curves(a, b, paired=[0.1, 0.2])


def test_gbm_references_are_ordered(gbm_down, gbm_up):
    config = SchemeConfig(steps_M=50, particles_N=20_000, master_seed=21)
    initial = EmpiricalMeasure.dirac(1.0, config.particles_N)
    lower, upper = simulate_coupled(ModelPair(gbm_down, gbm_up), initial, initial, config)
    for kind in (FunctionalKind.TERMINAL_CALL_SQUARE, FunctionalKind.SUP_PATH):
        comparisons = compare_functionals(lower, upper, FunctionalSpec(kind))
        assert all(c.ordered for c in comparisons)


def test_spot_check_convexity(small_config, small_noise, dirac_one, gbm_down):
    ens = simulate(gbm_down, dirac_one, small_config, small_noise)
    convex = FunctionalSpec(FunctionalKind.USER_COMPOSITE, expression="max(path_max - 1, 0) ** 2", name="convex")
    concave = FunctionalSpec(FunctionalKind.USER_COMPOSITE, expression="-(x ** 2)", name="concave")
    assert spot_check_convexity(convex, ens) == 0
    assert spot_check_convexity(concave, ens) > 0


def test_closed_form():
    assert gbm_call_square_closed_form(0.05, 1.0, 1.0, 1.0) == pytest.approx(math.exp(1.1))
    with pytest.raises(ValueError):
        gbm_call_square_closed_form(0.05, 1.0, 0.0, 1.0)


@pytest.mark.slow
def test_gbm_curves_match_closed_forms(gbm_down, gbm_up):
    config = SchemeConfig(steps_M=100, particles_N=100_000, master_seed=20240521)
    noise = generate_noise(config.master_seed, config.particles_N, config.steps_M)
    initial = EmpiricalMeasure.dirac(1.0, config.particles_N)
    f = FunctionalSpec(FunctionalKind.TERMINAL_CALL_SQUARE)
    for model, rate in ((gbm_down, 1.1), (gbm_up, 1.3)):
        curve = estimate_curve(simulate(model, initial, config, noise), f)
        exact = np.exp(rate * curve.times)
        assert np.all(np.abs(curve.values - exact) <= 3 * curve.stderrs + 1e-12)


def test_coupled_comparison_uses_paired_differences(gbm_down, gbm_up):
    config = SchemeConfig(steps_M=20, particles_N=4000, master_seed=13)
    initial = EmpiricalMeasure.dirac(1.0, config.particles_N)
    lower, upper = simulate_coupled(ModelPair(gbm_down, gbm_up), initial, initial, config)
    f = FunctionalSpec(FunctionalKind.TERMINAL_VALUE)
    comparisons = compare_functionals(lower, upper, f)
    diffs = upper.states[:, -1] - lower.states[:, -1]
    last = comparisons[-1]
    assert last.paired_stderr == pytest.approx(np.std(diffs, ddof=1) / math.sqrt(config.particles_N))
    assert last.pooled_stderr < 0.5 * math.hypot(last.lower.stderr, last.upper.stderr)
    assert all(c.strict for c in comparisons if c.t >= 0.2)


def test_paired_stderrs_need_common_noise(gbm_down, gbm_up):
    config = SchemeConfig(steps_M=5, particles_N=200, master_seed=2)
    initial = EmpiricalMeasure.dirac(1.0, config.particles_N)
    lower = simulate(gbm_down, initial, config, generate_noise(2, config.particles_N, config.steps_M))
    upper = simulate(gbm_up, initial, config, generate_noise(2, config.particles_N, config.steps_M))
    f = FunctionalSpec(FunctionalKind.TERMINAL_VALUE)
    assert not lower.coupled_with(upper)
    with pytest.raises(ValueError):
        paired_stderrs(lower, upper, f)
    assert all(c.paired_stderr is None for c in compare_functionals(lower, upper, f))


def test_stderr_scales_with_inverse_root_n():
    calm = gbm(0.05, 0.2)
    f = FunctionalSpec(FunctionalKind.TERMINAL_VALUE)
    stderrs = []
    for n, seed in ((2000, 31), (8000, 32)):
        config = SchemeConfig(steps_M=20, particles_N=n, master_seed=seed)
        ens = simulate(calm, EmpiricalMeasure.dirac(1.0, n), config, generate_noise(seed, n, config.steps_M))
        stderrs.append(estimate_functional(ens, f).stderr)
    assert stderrs[0] / stderrs[1] == pytest.approx(2.0, rel=0.2)
