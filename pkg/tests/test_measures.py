import numpy as np
import pytest

from src.measures import (
    EmpiricalMeasure,
    check_mcv,
    default_strike_grid,
    flow_distance,
    mixture,
    stop_loss,
    stop_loss_curve,
    paired_stop_loss_tolerance,
    stop_loss_tolerance,
    wasserstein_p,
    write_measure_csv,
)


def test_samples_are_sorted_and_read_only():
    mu = EmpiricalMeasure([3.0, -1.0, 2.0])
    assert mu.samples.tolist() == [-1.0, 2.0, 3.0]
    with pytest.raises(ValueError):
        mu.samples[0] = 10.0


def test_rejects_empty_and_non_finite():
    with pytest.raises(ValueError):
        EmpiricalMeasure([])
    with pytest.raises(ValueError):
        EmpiricalMeasure([0.0, np.nan])


def test_wasserstein_identity_and_translation(rng):
    mu = EmpiricalMeasure(rng.normal(size=200))
    assert wasserstein_p(mu, mu, 2) == 0.0
    zero = EmpiricalMeasure.dirac(0.0, 5)
    shifted = EmpiricalMeasure.dirac(-2.5, 5)
    assert wasserstein_p(zero, shifted, 3) == pytest.approx(2.5)


def test_wasserstein_two_points():
    assert wasserstein_p(EmpiricalMeasure([0, 1]), EmpiricalMeasure([1, 2]), 1) == pytest.approx(1.0)


@pytest.mark.parametrize("p", [1, 2, 3.5])
def test_wasserstein_symmetry_and_triangle_inequality(rng, p):
    for _ in range(20):
        a, b, c = (EmpiricalMeasure(rng.standard_t(4, size=50) * rng.uniform(0.1, 3.0) + rng.normal())
                   for _ in range(3))
        assert wasserstein_p(a, b, p) == pytest.approx(wasserstein_p(b, a, p), rel=1e-12)
        assert wasserstein_p(a, c, p) <= wasserstein_p(a, b, p) + wasserstein_p(b, c, p) + 1e-12


def test_wasserstein_argument_errors():
    with pytest.raises(ValueError):
        wasserstein_p(EmpiricalMeasure([0, 1]), EmpiricalMeasure([0, 1, 2]), 2)
    with pytest.raises(ValueError):
        wasserstein_p(EmpiricalMeasure([0]), EmpiricalMeasure([0]), 0.5)


def test_wasserstein_weighted_matches_uniform_expansion():
    mu = EmpiricalMeasure([0.0, 1.0], weights=[0.25, 0.75])
    nu = EmpiricalMeasure([0.0, 1.0, 1.0, 1.0])
    other = EmpiricalMeasure([2.0, 2.0, 2.0, 2.0])
    assert wasserstein_p(mu, other, 1) == pytest.approx(wasserstein_p(nu, other, 1))


def test_stop_loss_values():
    assert stop_loss(EmpiricalMeasure.dirac(0.0, 4), -1.0) == pytest.approx(1.0)
    assert stop_loss(EmpiricalMeasure([1.0, 3.0]), 2.0) == pytest.approx(0.5)


def test_stop_loss_of_standard_normal(rng):
    samples = rng.standard_normal(1_000_000)
    mu = EmpiricalMeasure(samples)
    payoff = np.maximum(samples, 0.0)
    stderr = payoff.std() / np.sqrt(samples.size)
    assert abs(stop_loss(mu, 0.0) - 1.0 / np.sqrt(2 * np.pi)) < 3 * stderr


def test_stop_loss_curve_is_convex_and_non_increasing(rng):
    mu = EmpiricalMeasure(rng.normal(size=500))
    curve = stop_loss_curve(mu, np.linspace(-3, 3, 61))
    assert np.all(np.diff(curve.values) <= 1e-15)
    assert np.all(curve.second_differences() >= -1e-12)


def test_check_mcv_diracs():
    grid = np.array([-1.0, 0.0, 0.5, 1.0])
    low = EmpiricalMeasure.dirac(0.0, 10)
    high = EmpiricalMeasure.dirac(1.0, 10)
    assert check_mcv(low, high, grid, 0.0).dominated

    verdict = check_mcv(high, low, grid, 0.0)
    assert not verdict.dominated
    assert verdict.worst_strike == 0.0
    assert verdict.worst_margin == pytest.approx(-1.0)
    assert verdict.mean_gap == pytest.approx(-1.0)


def test_check_mcv_pathwise_domination_is_exact(rng):
    x = rng.normal(size=1000)
    y = x + rng.uniform(0.0, 1e-9, size=x.size)
    low, high = EmpiricalMeasure(x), EmpiricalMeasure(y)
    assert check_mcv(low, high, default_strike_grid(low, high), 0.0).dominated


def test_check_mcv_per_strike_tolerance_absorbs_small_gaps(rng):
    x = rng.normal(size=300)
    mu = EmpiricalMeasure(x)
    nu = EmpiricalMeasure(x - 1e-4)
    grid = default_strike_grid(mu, nu, 33)
    tolerance = stop_loss_tolerance(mu, nu, grid, 3.0)
    assert tolerance.shape == grid.shape
    assert np.all(tolerance >= 0)
    assert not check_mcv(mu, nu, grid, 0.0).dominated
    assert check_mcv(mu, nu, grid, tolerance).dominated


def test_paired_tolerance_catches_small_violation_under_coupling(rng):
    x = rng.normal(size=2000)
    y = x - 0.02
    mu, nu = EmpiricalMeasure(x), EmpiricalMeasure(y)
    grid = default_strike_grid(mu, nu, 65)
    assert check_mcv(mu, nu, grid, stop_loss_tolerance(mu, nu, grid, 3.0)).dominated

    paired = paired_stop_loss_tolerance(x, y, grid, 3.0)
    assert paired.shape == grid.shape
    assert np.all(paired <= stop_loss_tolerance(mu, nu, grid, 3.0))
    verdict = check_mcv(mu, nu, grid, paired)
    assert not verdict.dominated
    assert verdict.worst_margin == pytest.approx(-0.02)


def test_paired_tolerance_matches_difference_stderr():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    y = np.array([0.5, 1.0, 3.0, 3.0])
    tol = paired_stop_loss_tolerance(x, y, [-10.0, 10.0], 2.0)
    assert tol[0] == pytest.approx(2.0 * np.std(y - x, ddof=1) / 2.0)
    assert tol[1] == 0.0
    with pytest.raises(ValueError):
        paired_stop_loss_tolerance(x, y[:3], [0.0])
    with pytest.raises(ValueError):
        paired_stop_loss_tolerance(x, y, [0.0], -1.0)


def test_check_mcv_is_reflexive(rng):
    mu = EmpiricalMeasure(rng.lognormal(size=500))
    verdict = check_mcv(mu, mu, default_strike_grid(mu), 0.0)
    assert verdict.dominated
    assert verdict.worst_margin == 0.0


def test_check_mcv_is_transitive(rng):
    x = rng.normal(size=800)
    x -= x.mean()
    chain = [EmpiricalMeasure(x), EmpiricalMeasure(1.5 * x), EmpiricalMeasure(1.5 * x + 0.3)]
    grid = default_strike_grid(chain[0], chain[2], 129)
    assert check_mcv(chain[0], chain[1], grid, 1e-12).dominated
    assert check_mcv(chain[1], chain[2], grid, 1e-12).dominated
    assert check_mcv(chain[0], chain[2], grid, 1e-12).dominated
    assert not check_mcv(chain[2], chain[0], grid, 1e-12).dominated


def test_check_mcv_rejects_bad_grid():
    mu = EmpiricalMeasure([0.0])
    with pytest.raises(ValueError):
        check_mcv(mu, mu, [], 0.0)
    with pytest.raises(ValueError):
        check_mcv(mu, mu, [1.0, 0.0], 0.0)
    with pytest.raises(ValueError):
        check_mcv(mu, mu, [0.0], -1.0)


def test_default_strike_grid_covers_both_supports():
    grid = default_strike_grid(EmpiricalMeasure([0.0, 1.0]), EmpiricalMeasure([2.0, 5.0]), 9)
    assert grid.size == 9
    assert grid[0] < 0.0 and grid[-1] > 5.0


def test_default_strike_grid_uses_weighted_spread():
    mu = EmpiricalMeasure([0.0, 10.0], weights=[0.99, 0.01])
    grid = default_strike_grid(mu, mu, 5)
    spread = np.sqrt(0.99 * 0.01 * 100.0)
    assert grid[0] == pytest.approx(-spread)
    assert grid[-1] == pytest.approx(10.0 + spread)
    assert default_strike_grid(mu, count=5)[0] == pytest.approx(-spread)
    assert default_strike_grid(EmpiricalMeasure.dirac(2.0, 3), count=3).tolist() == [1.0, 2.0, 3.0]


def test_mixture_degenerate_weights_and_stop_loss():
    mu = EmpiricalMeasure.dirac(0.0, 3)
    nu = EmpiricalMeasure.dirac(1.0, 3)
    assert mixture(mu, nu, 1.0) is mu
    assert mixture(mu, nu, 0.0) is nu
    half = mixture(mu, nu, 0.5)
    assert stop_loss(half, 0.0) == pytest.approx(0.5)
    assert half.mean == pytest.approx(0.5)
    with pytest.raises(ValueError):
        mixture(mu, nu, 1.5)


def test_quantile_and_flatten():
    mu = EmpiricalMeasure([0.0, 1.0], weights=[0.25, 0.75])
    assert mu.quantile([0.1, 0.25, 0.5]).tolist() == [0.0, 0.0, 1.0]
    flat = mu.flatten(4)
    assert flat.is_uniform
    assert flat.samples.tolist() == [0.0, 1.0, 1.0, 1.0]


def test_statistics_are_cached_and_known():
    mu = EmpiricalMeasure([0.0, np.pi / 2])
    assert mu.statistic("mean_sin") == pytest.approx(0.5)
    assert mu.statistic("mean_sin2") == pytest.approx(0.5)
    with pytest.raises(ValueError):
        mu.statistic("median")


def test_flow_distance_is_max_over_times():
    a = [EmpiricalMeasure.dirac(0.0, 2), EmpiricalMeasure.dirac(0.0, 2)]
    b = [EmpiricalMeasure.dirac(0.5, 2), EmpiricalMeasure.dirac(2.0, 2)]
    assert flow_distance(a, b, 2) == pytest.approx(2.0)


def test_write_measure_csv(tmp_path):
    path = write_measure_csv(EmpiricalMeasure([2.0, 1.0]), tmp_path / "m.csv")
    assert path.read_text().splitlines() == ["value,weight", "1,0.5", "2,0.5"]
