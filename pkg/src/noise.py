"""
Gaussian noise grids for the particle schemes.

Each particle owns a Philox counter-based stream keyed by
(particle_index, master_seed); the k-th 64-bit word of that stream is the
draw for step k. A grid is therefore bit-reproducible for a fixed
(seed, N, M) no matter how rows are split across worker threads, and the
first M columns of a wider grid equal the narrower grid.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
ROW_CHUNK = 1024


def particle_stream(master_seed: int, particle: int) -> np.random.Philox:
    """Counter-based bit generator for one particle."""
    if particle < 0:
        raise ValueError("particle index must be non-negative")
    key = (int(particle) << 64) | (int(master_seed) & MASK64)
    return np.random.Philox(key=key)


def raw_to_normal(raw: np.ndarray) -> np.ndarray:
    """Map uint64 words to standard normals through the inverse cdf.

    The top 52 bits plus one half ulp give a uniform strictly inside (0, 1)
    that is exactly representable, so every draw is finite (|z| < 8.3).
    """
    u = ((raw >> np.uint64(12)).astype(np.float64) + 0.5) * 2.0 ** -52
    return ndtri(u)


def _fill_rows(out: np.ndarray, master_seed: int, start: int, stop: int) -> None:
    steps = out.shape[1]
    for i in range(start, stop):
        out[i] = raw_to_normal(particle_stream(master_seed, i).random_raw(steps))


@dataclass(frozen=True, eq=False)
class NoiseGrid:
    """N x M standard normal increments Z_{i,m}, read-only."""

    increments: np.ndarray
    master_seed: int

    def __post_init__(self):
        z = np.asarray(self.increments, dtype=float)
        if z.ndim != 2 or z.shape[0] < 1 or z.shape[1] < 1:
            raise ValueError(f"noise must be a nonempty N x M array, got shape {z.shape}")
        if z is self.increments and z.flags.writeable:
            z = z.copy()
        z.setflags(write=False)
        object.__setattr__(self, "increments", z)

    @property
    def particles(self) -> int:
        return int(self.increments.shape[0])

    @property
    def steps(self) -> int:
        return int(self.increments.shape[1])

    @property
    def shape(self):
        return self.increments.shape

    def coarsen(self) -> NoiseGrid:
        """Z_coarse[m] = (Z[2m] + Z[2m+1]) / sqrt(2): same Brownian path, half the steps."""
        if self.steps % 2:
            raise ValueError(f"cannot halve a grid with an odd number of steps ({self.steps})")
        z = self.increments
        return NoiseGrid((z[:, 0::2] + z[:, 1::2]) / math.sqrt(2.0), self.master_seed)

    def coarsen_to(self, steps: int) -> NoiseGrid:
        """Repeated halving down to ``steps`` columns (a power-of-two divisor)."""
        grid = self
        while grid.steps > steps:
            grid = grid.coarsen()
        if grid.steps != steps:
            raise ValueError(f"{self.steps} steps do not refine {steps} steps by halving")
        return grid

    def truncated(self, threshold: float) -> np.ndarray:
        """Z^h: increments beyond the threshold replaced by 0."""
        z = self.increments
        return np.where(np.abs(z) <= threshold, z, 0.0)

    def within_threshold(self, threshold: float) -> np.ndarray:
        """Per particle, whether no increment of its row gets truncated."""
        return np.all(np.abs(self.increments) <= threshold, axis=1)


def generate_noise(master_seed: int, particles: int, steps: int, threads: int = 1) -> NoiseGrid:
    """
    Draw the N x M grid from the per-particle streams.

    Args:
        master_seed: 64-bit seed shared by every stream
        particles: number of rows N
        steps: number of columns M
        threads: worker threads; the result does not depend on it

    Returns:
        NoiseGrid
    """
    if particles < 1 or steps < 1:
        raise ValueError("particles and steps must be at least 1")
    out = np.empty((particles, steps), dtype=np.float64)
    chunks = [(lo, min(lo + ROW_CHUNK, particles)) for lo in range(0, particles, ROW_CHUNK)]

    if threads <= 1 or len(chunks) == 1:
        for lo, hi in chunks:
            _fill_rows(out, master_seed, lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_fill_rows, out, master_seed, lo, hi) for lo, hi in chunks]
            for future in futures:
                future.result()

    out.setflags(write=False)
    logger.debug(f"Generated noise grid {particles}x{steps} (seed={master_seed}, threads={threads})")
    return NoiseGrid(out, master_seed)
