"""
Empirical probability measures on the real line.
Wasserstein-p distance, stop-loss transforms and monotone convex order tests.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

# Strike grid and tolerance defaults for order certification
DEFAULT_STRIKE_COUNT = 129
DEFAULT_Z = 3.0

ArrayLike = Union[float, Sequence[float], np.ndarray]

# Mean-field statistics the coefficient models and composite functionals may ask for
MEAN_FIELD_STATISTICS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "mean_x": lambda x: x,
    "mean_x2": lambda x: x * x,
    "mean_sin": np.sin,
    "mean_cos": np.cos,
    "mean_sin2": lambda x: np.sin(x) ** 2,
}


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """A finite atomic probability measure, samples stored sorted ascending.

    Uniform weight 1/N is implied when ``weights`` is None. Weighted measures
    only arise from mixtures; they are kept exact and never resampled.
    """

    samples: np.ndarray
    weights: Optional[np.ndarray] = None
    _stats: Dict[str, float] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float).ravel()
        if samples.size == 0:
            raise ValueError("EmpiricalMeasure needs at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ValueError("EmpiricalMeasure samples must be finite (no NaN/Inf)")

        if self.weights is None:
            samples = np.sort(samples, kind="stable")
            weights = None
        else:
            weights = np.asarray(self.weights, dtype=float).ravel()
            if weights.shape != samples.shape:
                raise ValueError(
                    f"weights shape {weights.shape} does not match samples shape {samples.shape}"
                )
            if not np.all(np.isfinite(weights)) or np.any(weights < 0):
                raise ValueError("weights must be finite and non-negative")
            total = weights.sum()
            if total <= 0:
                raise ValueError("weights must have positive total mass")
            order = np.argsort(samples, kind="stable")
            samples = samples[order]
            weights = weights[order] / total
            keep = weights > 0
            samples = samples[keep]
            weights = weights[keep]
            weights.setflags(write=False)

        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def dirac(cls, value: float, n: int) -> EmpiricalMeasure:
        """N copies of a single point."""
        if n < 1:
            raise ValueError("n must be at least 1")
        return cls(np.full(n, float(value)))

    @property
    def size(self) -> int:
        return int(self.samples.size)

    @property
    def is_uniform(self) -> bool:
        return self.weights is None

    @property
    def probs(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.size, 1.0 / self.size)
        return self.weights

    @property
    def effective_size(self) -> float:
        """Kish effective sample size, N for uniform measures."""
        if self.weights is None:
            return float(self.size)
        return float(1.0 / np.sum(self.weights ** 2))

    def average(self, values: np.ndarray) -> float:
        """Weighted average of an array aligned with the sorted samples."""
        values = np.asarray(values, dtype=float)
        if self.weights is None:
            return float(np.mean(values))
        return float(np.dot(self.weights, values))

    def expect(self, fn: Callable[[np.ndarray], np.ndarray]) -> float:
        """Integral of fn against the measure."""
        return self.average(fn(self.samples))

    def statistic(self, name: str) -> float:
        """Cached mean-field statistic (mean_x, mean_x2, mean_sin, mean_cos, mean_sin2)."""
        if name not in self._stats:
            try:
                fn = MEAN_FIELD_STATISTICS[name]
            except KeyError:
                raise ValueError(f"Unknown mean-field statistic '{name}'") from None
            self._stats[name] = self.expect(fn)
        return self._stats[name]

    @property
    def mean(self) -> float:
        return self.statistic("mean_x")

    @property
    def std(self) -> float:
        variance = self.expect(lambda x: (x - self.mean) ** 2)
        return float(np.sqrt(max(variance, 0.0)))

    def quantile(self, q: ArrayLike) -> np.ndarray:
        """Left-continuous quantile function inf{x : F(x) >= q}."""
        q = np.asarray(q, dtype=float)
        if np.any((q < 0) | (q > 1)):
            raise ValueError("quantile levels must lie in [0, 1]")
        cdf = np.cumsum(self.probs)
        idx = np.searchsorted(cdf, q, side="left")
        return self.samples[np.clip(idx, 0, self.size - 1)]

    def flatten(self, n: Optional[int] = None) -> EmpiricalMeasure:
        """Uniform-weight representation on n atoms at quantile midpoints (export only)."""
        if self.weights is None and (n is None or n == self.size):
            return self
        n = self.size if n is None else n
        if n < 1:
            raise ValueError("n must be at least 1")
        return EmpiricalMeasure(self.quantile((np.arange(n) + 0.5) / n))


@dataclass(frozen=True)
class StopLossCurve:
    """k -> E(X - k)^+ evaluated on an ascending strike grid."""

    strikes: np.ndarray
    values: np.ndarray

    def second_differences(self) -> np.ndarray:
        return np.diff(self.values, n=2)

    def to_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["strike", "value"])
            for strike, value in zip(self.strikes, self.values):
                writer.writerow([f"{strike:.17g}", f"{value:.17g}"])
        return path


@dataclass(frozen=True)
class OrderVerdict:
    """Decision record for a mu <=_mcv nu test on a strike grid."""

    dominated: bool
    worst_margin: float
    worst_strike: float
    tolerance_used: float
    mean_gap: float = 0.0

    def to_dict(self) -> Dict[str, float]:
        return {
            "dominated": self.dominated,
            "worst_margin": self.worst_margin,
            "worst_strike": self.worst_strike,
            "tolerance_used": self.tolerance_used,
            "mean_gap": self.mean_gap,
        }


def _as_strike_grid(strikes: ArrayLike) -> np.ndarray:
    grid = np.atleast_1d(np.asarray(strikes, dtype=float))
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("strike grid is empty")
    if not np.all(np.isfinite(grid)):
        raise ValueError("strike grid must be finite")
    if np.any(np.diff(grid) < 0):
        raise ValueError("strike grid must be ascending")
    return grid


def wasserstein_p(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float) -> float:
    """
    Wasserstein-p distance between two measures on the line.

    For equal-size uniform measures this is the p-mean of sorted-sample
    differences, the exact optimal coupling. Weighted measures (mixtures) are
    compared through their quantile functions, which are piecewise constant,
    so the integral is exact as well.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")

    if mu.is_uniform and nu.is_uniform:
        if mu.size != nu.size:
            raise ValueError(
                f"unequal sample counts ({mu.size} vs {nu.size}); resample before comparing"
            )
        gaps = np.abs(mu.samples - nu.samples)
        return float(np.mean(gaps ** p) ** (1.0 / p))

    levels = np.union1d(np.cumsum(mu.probs), np.cumsum(nu.probs))
    levels = np.clip(levels, 0.0, 1.0)
    edges = np.concatenate(([0.0], levels[levels < 1.0], [1.0]))
    widths = np.diff(edges)
    keep = widths > 0
    mids = edges[:-1][keep] + widths[keep] / 2
    gaps = np.abs(mu.quantile(mids) - nu.quantile(mids))
    return float(np.sum(widths[keep] * gaps ** p) ** (1.0 / p))


def flow_distance(
    flow_a: Sequence[EmpiricalMeasure],
    flow_b: Sequence[EmpiricalMeasure],
    r: float,
) -> float:
    """Sup over grid times of W_r between two marginal flows on the same grid."""
    if len(flow_a) != len(flow_b) or not flow_a:
        raise ValueError("marginal flows must be nonempty and of equal length")
    return max(wasserstein_p(a, b, r) for a, b in zip(flow_a, flow_b))


def stop_loss(mu: EmpiricalMeasure, k: float) -> float:
    """E(X - k)^+ under mu."""
    return mu.average(np.maximum(mu.samples - float(k), 0.0))


def stop_loss_curve(mu: EmpiricalMeasure, strikes: ArrayLike) -> StopLossCurve:
    """Stop-loss transform on a strike grid.

    Each strike is evaluated over the full sample array so that pathwise
    dominated inputs give dominated sums in floating point too.
    """
    grid = _as_strike_grid(strikes)
    values = np.array([stop_loss(mu, k) for k in grid])
    return StopLossCurve(strikes=grid, values=values)


def default_strike_grid(
    mu: EmpiricalMeasure,
    nu: Optional[EmpiricalMeasure] = None,
    count: int = DEFAULT_STRIKE_COUNT,
) -> np.ndarray:
    """Equally spaced strikes over [min - sd, max + sd] of the equal-weight pool of mu and nu."""
    if count < 1:
        raise ValueError("count must be at least 1")
    if nu is None:
        pooled = mu
    else:
        pooled = EmpiricalMeasure(
            np.concatenate((mu.samples, nu.samples)),
            weights=np.concatenate((0.5 * mu.probs, 0.5 * nu.probs)),
        )
    spread = pooled.std if pooled.samples[-1] > pooled.samples[0] else 1.0
    return np.linspace(pooled.samples[0] - spread, pooled.samples[-1] + spread, count)


def stop_loss_tolerance(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    strikes: ArrayLike,
    z: float = DEFAULT_Z,
) -> np.ndarray:
    """Per-strike z times the pooled standard error of the stop-loss difference."""
    if z < 0:
        raise ValueError("z must be non-negative")
    grid = _as_strike_grid(strikes)

    def variance(measure: EmpiricalMeasure) -> np.ndarray:
        out = np.empty(grid.size)
        for j, k in enumerate(grid):
            payoff = np.maximum(measure.samples - k, 0.0)
            first = measure.average(payoff)
            second = measure.average(payoff * payoff)
            out[j] = max(second - first * first, 0.0)
        return out

    pooled = variance(mu) / mu.effective_size + variance(nu) / nu.effective_size
    return z * np.sqrt(pooled)


def paired_stop_loss_tolerance(
    lower: np.ndarray,
    upper: np.ndarray,
    strikes: ArrayLike,
    z: float = DEFAULT_Z,
) -> np.ndarray:
    """
    Per-strike z times the standard error of the mean paired difference
    (upper_i - k)^+ - (lower_i - k)^+.

    For ensembles driven by common noise: row i of ``lower`` and ``upper``
    is the same particle, given in particle order (not sorted).
    """
    if z < 0:
        raise ValueError("z must be non-negative")
    x = np.asarray(lower, dtype=float).ravel()
    y = np.asarray(upper, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError(f"unequal sample counts ({x.size} vs {y.size})")
    if x.size < 2:
        raise ValueError("paired tolerance needs at least two particles")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("paired samples must be finite")
    grid = _as_strike_grid(strikes)
    out = np.empty(grid.size)
    for j, k in enumerate(grid):
        diff = np.maximum(y - k, 0.0) - np.maximum(x - k, 0.0)
        out[j] = np.std(diff, ddof=1)
    return z * out / np.sqrt(x.size)


def check_mcv(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    strikes: ArrayLike,
    tolerance: Union[float, np.ndarray] = 0.0,
) -> OrderVerdict:
    """
    Test mu <=_mcv nu through stop-loss dominance on a strike grid.

    ``tolerance`` is a scalar or one value per strike. Ties for the worst slack
    resolve to the largest strike.
    """
    grid = _as_strike_grid(strikes)
    tol = np.broadcast_to(np.asarray(tolerance, dtype=float), grid.shape)
    if np.any(tol < 0) or not np.all(np.isfinite(tol)):
        raise ValueError("tolerance must be finite and non-negative")

    margins = stop_loss_curve(nu, grid).values - stop_loss_curve(mu, grid).values
    slack = margins + tol
    j = grid.size - 1 - int(np.argmin(slack[::-1]))

    verdict = OrderVerdict(
        dominated=bool(margins[j] >= -tol[j]),
        worst_margin=float(margins[j]),
        worst_strike=float(grid[j]),
        tolerance_used=float(tol[j]),
        mean_gap=nu.mean - mu.mean,
    )
    logger.debug(
        f"check_mcv: dominated={verdict.dominated} worst_margin={verdict.worst_margin:.3e} "
        f"at k={verdict.worst_strike:.4g}"
    )
    return verdict


def mixture(mu: EmpiricalMeasure, nu: EmpiricalMeasure, lam: float) -> EmpiricalMeasure:
    """lam * mu + (1 - lam) * nu, kept as an explicitly weighted measure."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixture weight must lie in [0, 1], got {lam}")
    if mu.size != nu.size:
        raise ValueError(f"unequal sample counts ({mu.size} vs {nu.size})")
    if lam == 1.0:
        return mu
    if lam == 0.0:
        return nu
    return EmpiricalMeasure(
        samples=np.concatenate((mu.samples, nu.samples)),
        weights=np.concatenate((lam * mu.probs, (1.0 - lam) * nu.probs)),
    )


def write_measure_csv(mu: EmpiricalMeasure, path: Path) -> Path:
    """Atoms and weights, 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["value", "weight"])
        for value, weight in zip(mu.samples, mu.probs):
            writer.writerow([f"{value:.17g}", f"{weight:.17g}"])
    return path


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)

    rng = np.random.default_rng(7)
    low = EmpiricalMeasure(rng.normal(0.0, 1.0, 1000))
    high = EmpiricalMeasure(low.samples + 0.25)
    grid = default_strike_grid(low, high)

    print(f"W2(low, high) = {wasserstein_p(low, high, 2):.6f}")
    print(f"check_mcv(low, high) -> {check_mcv(low, high, grid)}")
    print(f"check_mcv(high, low) -> {check_mcv(high, low, grid)}")
