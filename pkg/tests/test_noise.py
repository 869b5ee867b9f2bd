import math

import numpy as np
import pytest

from src.noise import NoiseGrid, generate_noise, particle_stream, raw_to_normal


def test_grid_is_reproducible_and_read_only():
    a = generate_noise(42, 50, 8)
    b = generate_noise(42, 50, 8)
    assert np.array_equal(a.increments, b.increments)
    assert not a.increments.flags.writeable
    assert a.shape == (50, 8)


def test_thread_count_does_not_change_grid():
    serial = generate_noise(9, 2100, 3, threads=1)
    threaded = generate_noise(9, 2100, 3, threads=4)
    assert np.array_equal(serial.increments, threaded.increments)


def test_wider_grid_extends_narrower_one():
    narrow = generate_noise(5, 20, 4)
    wide = generate_noise(5, 30, 10)
    assert np.array_equal(wide.increments[:20, :4], narrow.increments)


def test_seeds_give_different_streams():
    assert not np.array_equal(generate_noise(1, 10, 5).increments, generate_noise(2, 10, 5).increments)


def test_streams_are_independent_across_particles():
    first = particle_stream(0, 0).random_raw(4)
    second = particle_stream(0, 1).random_raw(4)
    assert not np.array_equal(first, second)
    with pytest.raises(ValueError):
        particle_stream(0, -1)


def test_standard_normal_moments():
    z = generate_noise(2024, 4000, 25).increments.ravel()
    n = z.size
    assert abs(z.mean()) < 4 / math.sqrt(n)
    assert abs(z.var() - 1.0) < 4 * math.sqrt(2.0 / n)


def test_raw_to_normal_is_finite_at_extremes():
    raw = np.array([0, np.iinfo(np.uint64).max], dtype=np.uint64)
    z = raw_to_normal(raw)
    assert np.all(np.isfinite(z))
    assert z[0] < -8 and z[1] > 8
    assert z[0] == pytest.approx(-z[1])


def test_coarsen_preserves_brownian_increments():
    grid = generate_noise(3, 10, 8)
    coarse = grid.coarsen_to(2)
    z = grid.increments
    expected = z[:, :4].sum(axis=1) / 2.0
    np.testing.assert_allclose(coarse.increments[:, 0], expected, rtol=1e-12, atol=1e-12)
    with pytest.raises(ValueError):
        grid.coarsen_to(3)


def test_truncation_helpers():
    grid = NoiseGrid(np.array([[0.5, -2.0], [1.0, 0.1]]), master_seed=0)
    np.testing.assert_array_equal(grid.truncated(1.0), [[0.5, 0.0], [1.0, 0.1]])
    np.testing.assert_array_equal(grid.within_threshold(1.0), [False, True])


def test_writable_input_is_copied():
    source = np.zeros((2, 2))
    grid = NoiseGrid(source, master_seed=0)
    source[0, 0] = 1.0
    assert grid.increments[0, 0] == 0.0
