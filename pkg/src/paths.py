"""
Piecewise-affine path reconstruction, path functionals and Monte Carlo
estimators with 95% confidence intervals.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .expressions import Expression, compile_expression
from .measures import MEAN_FIELD_STATISTICS, EmpiricalMeasure, mixture
from .scheme import ParticleEnsemble, SchemeBlowUp

logger = logging.getLogger(__name__)

CI_Z = 1.96
DEFAULT_ORDER_Z = 3.0

# Variables a composite functional may read at the query time
PATH_VARIABLES = ("x", "x0", "path_max", "path_mean", "t")
COMPOSITE_VARIABLES = PATH_VARIABLES + tuple(MEAN_FIELD_STATISTICS)

SPOT_CHECK_PAIRS = 64
SPOT_CHECK_TOLERANCE = 1e-9


def _locate(t: float, horizon: float, steps: int) -> Tuple[int, float]:
    """Cell index m and weight w in [0, 1] with t = t_m + w h."""
    if not 0.0 <= t <= horizon:
        raise ValueError(f"t={t} outside [0, {horizon}]")
    s = t * steps / horizon
    m = min(int(math.floor(s)), steps - 1)
    w = min(max(s - m, 0.0), 1.0)
    return m, w


def interpolate(values: Sequence[float], t: float, T: float) -> float:
    """Piecewise-affine interpolation of grid values x_0..x_M on the uniform grid of [0, T]."""
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("need at least two grid values")
    m, w = _locate(t, T, x.size - 1)
    if w == 0.0:
        return float(x[m])
    if w == 1.0:
        return float(x[m + 1])
    return float((1.0 - w) * x[m] + w * x[m + 1])


def interpolate_states(states: np.ndarray, t: float, T: float) -> np.ndarray:
    """interpolate() applied to every row of an (N, M+1) state matrix."""
    m, w = _locate(t, T, states.shape[1] - 1)
    if w == 0.0:
        return states[:, m].copy()
    if w == 1.0:
        return states[:, m + 1].copy()
    return (1.0 - w) * states[:, m] + w * states[:, m + 1]


def running_sup(states: np.ndarray, t: float, T: float) -> np.ndarray:
    """sup over [0, t] of each interpolated path; attained at knots or at t."""
    m, w = _locate(t, T, states.shape[1] - 1)
    knots = states[:, : m + 1].max(axis=1)
    if w == 0.0:
        return knots
    return np.maximum(knots, interpolate_states(states, t, T))


def running_mean(states: np.ndarray, t: float, T: float) -> np.ndarray:
    """(1/t) times the integral of each interpolated path over [0, t]; x_0 at t = 0."""
    steps = states.shape[1] - 1
    h = T / steps
    m, w = _locate(t, T, steps)
    if t == 0.0:
        return states[:, 0].copy()
    full = h * 0.5 * (states[:, :m] + states[:, 1 : m + 1]).sum(axis=1)
    x_t = interpolate_states(states, t, T)
    partial = w * h * 0.5 * (states[:, m] + x_t)
    return (full + partial) / t


@dataclass(frozen=True)
class GridPath:
    """One path on the uniform grid t_0 < ... < t_M."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.shape != values.shape or times.size < 2:
            raise ValueError("times and values must have the same length >= 2")
        if times[0] != 0.0 or not np.allclose(np.diff(times), times[-1] / (times.size - 1), rtol=1e-9, atol=0):
            raise ValueError("times must be the uniform grid of [0, T]")
        if not np.all(np.isfinite(values)):
            raise ValueError("path values must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def __call__(self, t: float) -> float:
        return interpolate(self.values, t, self.horizon)

    def sup(self) -> float:
        return float(self.values.max())

    @classmethod
    def from_ensemble(cls, ens: ParticleEnsemble, particle: int) -> GridPath:
        return cls(ens.times, ens.states[particle])


def marginal_at(ens: ParticleEnsemble, t: float) -> EmpiricalMeasure:
    """Marginal at t; off the grid, mixture of the neighbouring marginals weighted by distance."""
    m, w = _locate(t, ens.config.horizon_T, ens.config.steps_M)
    if w == 0.0:
        return ens.marginal(m)
    if w == 1.0:
        return ens.marginal(m + 1)
    return mixture(ens.marginal(m), ens.marginal(m + 1), 1.0 - w)


class FunctionalKind(str, Enum):
    TERMINAL_CALL_SQUARE = "terminal_call_square"
    SUP_PATH = "sup_path"
    TERMINAL_VALUE = "terminal_value"
    USER_COMPOSITE = "user_composite"


@dataclass(frozen=True)
class FunctionalSpec:
    """
    A path functional F_t evaluated at a query time t.

    terminal_call_square is max(x_t, 0)^2, sup_path the running sup up to t,
    terminal_value x_t. A user_composite is an expression over x, x0,
    path_max, path_mean, t and the marginal statistics at t; its monotonicity
    and convexity are declared by the caller.
    """

    kind: FunctionalKind
    monotone_convex_declared: bool = True
    expression: Optional[str] = None
    name: Optional[str] = None

    def __post_init__(self):
        kind = FunctionalKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is FunctionalKind.USER_COMPOSITE:
            if not self.expression:
                raise ValueError("user_composite functionals need an expression")
            object.__setattr__(self, "_compiled", compile_expression(self.expression, COMPOSITE_VARIABLES))
        elif self.expression is not None:
            raise ValueError(f"{kind.value} takes no expression")
        if self.name is None:
            object.__setattr__(self, "name", kind.value)

    @property
    def compiled(self) -> Optional[Expression]:
        return getattr(self, "_compiled", None)

    @property
    def statistics(self) -> List[str]:
        expr = self.compiled
        if expr is None:
            return []
        return sorted(expr.names & set(MEAN_FIELD_STATISTICS))

    def evaluate_paths(
        self,
        states: np.ndarray,
        t: float,
        T: float,
        stats: Optional[Dict[str, float]] = None,
    ) -> np.ndarray:
        """F_t on every row of an (N, M+1) state matrix."""
        if self.kind is FunctionalKind.TERMINAL_VALUE:
            return interpolate_states(states, t, T)
        if self.kind is FunctionalKind.TERMINAL_CALL_SQUARE:
            return np.maximum(interpolate_states(states, t, T), 0.0) ** 2
        if self.kind is FunctionalKind.SUP_PATH:
            return running_sup(states, t, T)

        expr = self.compiled
        env: Dict[str, object] = {"t": t}
        names = expr.names
        if "x" in names:
            env["x"] = interpolate_states(states, t, T)
        if "x0" in names:
            env["x0"] = states[:, 0]
        if "path_max" in names:
            env["path_max"] = running_sup(states, t, T)
        if "path_mean" in names:
            env["path_mean"] = running_mean(states, t, T)
        for name in self.statistics:
            if stats is None or name not in stats:
                raise ValueError(f"functional '{self.name}' needs statistic {name} at t={t}")
            env[name] = stats[name]
        out = np.broadcast_to(np.asarray(expr.evaluate(env), dtype=float), (states.shape[0],))
        if not np.all(np.isfinite(out)):
            raise SchemeBlowUp(f"functional '{self.name}' produced non-finite values at t={t}")
        return out


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo mean with standard error and normal 95% interval."""

    value: float
    stderr: float
    n: int
    ci95: Tuple[float, float]

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> Estimate:
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        if n == 0:
            raise ValueError("cannot estimate from zero samples")
        value = float(np.mean(samples))
        stderr = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(value, stderr, n, (value - CI_Z * stderr, value + CI_Z * stderr))


def _stats_at(ens: ParticleEnsemble, f: FunctionalSpec, t: float) -> Dict[str, float]:
    names = f.statistics
    if not names:
        return {}
    measure = marginal_at(ens, t)
    return {name: measure.statistic(name) for name in names}


def functional_values(ens: ParticleEnsemble, f: FunctionalSpec, t: float) -> np.ndarray:
    """F_t on every particle path, in particle order."""
    return f.evaluate_paths(ens.states, t, ens.config.horizon_T, _stats_at(ens, f, t))


def estimate_functional(ens: ParticleEnsemble, f: FunctionalSpec, t_query: Optional[float] = None) -> Estimate:
    """
    E F_t(X) over the particle paths, t defaulting to the horizon.

    Off-grid queries interpolate each path; measure statistics come from
    the mixture-interpolated marginal.
    """
    t = ens.config.horizon_T if t_query is None else float(t_query)
    return Estimate.from_samples(functional_values(ens, f, t))


@dataclass
class FunctionalCurve:
    """Estimates of one functional for one model across query times."""

    functional: str
    model_label: str
    times: np.ndarray
    estimates: List[Estimate]

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.estimates])

    @property
    def stderrs(self) -> np.ndarray:
        return np.array([e.stderr for e in self.estimates])

    def to_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["t", "estimate", "stderr", "ci_lo", "ci_hi"])
            for t, e in zip(self.times, self.estimates):
                writer.writerow([f"{t:.17g}", f"{e.value:.17g}", f"{e.stderr:.17g}",
                                 f"{e.ci95[0]:.17g}", f"{e.ci95[1]:.17g}"])
        return path


def estimate_curve(
    ens: ParticleEnsemble,
    f: FunctionalSpec,
    times: Optional[Sequence[float]] = None,
) -> FunctionalCurve:
    """estimate_functional at every grid time (or the given times)."""
    grid = ens.times if times is None else np.asarray(times, dtype=float)
    estimates = [estimate_functional(ens, f, float(t)) for t in grid]
    return FunctionalCurve(f.name, ens.model_label, grid, estimates)


@dataclass(frozen=True)
class FunctionalComparison:
    """E F_t(lower) <= E F_t(upper) at one time, up to z pooled standard errors."""

    t: float
    lower: Estimate
    upper: Estimate
    z: float
    paired_stderr: Optional[float] = None  # stderr of the mean per-particle difference, when coupled

    @property
    def margin(self) -> float:
        return self.upper.value - self.lower.value

    @property
    def pooled_stderr(self) -> float:
        if self.paired_stderr is not None:
            return self.paired_stderr
        return math.hypot(self.lower.stderr, self.upper.stderr)

    @property
    def slack(self) -> float:
        return self.z * self.pooled_stderr

    @property
    def ordered(self) -> bool:
        return self.margin >= -self.slack

    @property
    def strict(self) -> bool:
        """Margin beyond the slack: the two curves are separated."""
        return self.margin > self.slack


def paired_stderrs(
    lower: ParticleEnsemble,
    upper: ParticleEnsemble,
    f: FunctionalSpec,
    times: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """Standard error of mean(F(upper_i) - F(lower_i)) per time, for ensembles on common noise."""
    if not lower.coupled_with(upper):
        raise ValueError("paired standard errors need ensembles driven by the same noise grid")
    grid = lower.times if times is None else np.asarray(times, dtype=float)
    n = lower.config.particles_N
    out = np.empty(grid.size)
    for j, t in enumerate(grid):
        diff = functional_values(upper, f, float(t)) - functional_values(lower, f, float(t))
        out[j] = float(np.std(diff, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return out


def compare_curves(
    lower: FunctionalCurve,
    upper: FunctionalCurve,
    z: float = DEFAULT_ORDER_Z,
    paired: Optional[Sequence[float]] = None,
) -> List[FunctionalComparison]:
    """
    Pointwise comparison of two curves estimated on the same times.

    ``paired`` holds per-time standard errors of the paired difference; without
    it the two estimates are treated as independent.
    """
    if not np.array_equal(lower.times, upper.times):
        raise ValueError("curves must share their query times")
    if paired is not None and len(paired) != len(lower.times):
        raise ValueError("one paired standard error per query time is required")
    out = [
        FunctionalComparison(float(t), lo, hi, z, None if paired is None else float(paired[j]))
        for j, (t, lo, hi) in enumerate(zip(lower.times, lower.estimates, upper.estimates))
    ]
    violations = [c for c in out if not c.ordered]
    if violations:
        worst = min(violations, key=lambda c: c.margin + c.slack)
        logger.warning(
            f"{lower.functional}: {lower.model_label} <= {upper.model_label} fails at {len(violations)} time(s), "
            f"worst t={worst.t:g} margin={worst.margin:.4g} slack={worst.slack:.4g}"
        )
    return out


def compare_functionals(
    lower: ParticleEnsemble,
    upper: ParticleEnsemble,
    f: FunctionalSpec,
    times: Optional[Sequence[float]] = None,
    z: float = DEFAULT_ORDER_Z,
) -> List[FunctionalComparison]:
    """
    Per-time ordering of E F(lower) <= E F(upper) on a shared time grid,
    with paired standard errors when both run on the same noise grid.
    """
    if lower.config.horizon_T != upper.config.horizon_T:
        raise ValueError("ensembles must share the time horizon")
    grid = lower.times if times is None else np.asarray(times, dtype=float)
    paired = paired_stderrs(lower, upper, f, grid) if lower.coupled_with(upper) else None
    return compare_curves(estimate_curve(lower, f, grid), estimate_curve(upper, f, grid), z, paired)


def spot_check_convexity(
    f: FunctionalSpec,
    ens: ParticleEnsemble,
    t: Optional[float] = None,
    pairs: int = SPOT_CHECK_PAIRS,
    seed: int = 0,
) -> int:
    """
    Midpoint convexity F((a + b)/2) <= (F(a) + F(b))/2 on random pairs of
    simulated paths. Returns the number of violated pairs and logs a warning;
    composites are declared convex, so nothing is raised.
    """
    T = ens.config.horizon_T
    t = T if t is None else float(t)
    rng = np.random.default_rng(seed)
    n = ens.config.particles_N
    i = rng.integers(0, n, size=pairs)
    j = rng.integers(0, n, size=pairs)
    a, b = ens.states[i], ens.states[j]
    stats = _stats_at(ens, f, t)

    fa = f.evaluate_paths(a, t, T, stats)
    fb = f.evaluate_paths(b, t, T, stats)
    fmid = f.evaluate_paths(0.5 * (a + b), t, T, stats)
    rhs = 0.5 * (fa + fb)
    bad = int(np.count_nonzero(fmid > rhs + SPOT_CHECK_TOLERANCE * (1.0 + np.abs(rhs))))
    if bad:
        logger.warning(
            f"Functional '{f.name}' is declared convex but failed midpoint convexity "
            f"on {bad}/{pairs} path pairs at t={t:g}"
        )
    return bad


def gbm_call_square_closed_form(r: float, v: float, x0: float, t: float) -> float:
    """E max(X_t, 0)^2 = x0^2 exp((2r + v^2) t) for geometric Brownian motion from x0 > 0."""
    if x0 <= 0:
        raise ValueError("x0 must be > 0")
    return float(x0 * x0 * math.exp((2.0 * r + v * v) * t))


if __name__ == "__main__":
    from .coefficients import gbm
    from .noise import generate_noise
    from .scheme import SchemeConfig, simulate

    logging.basicConfig(level=logging.INFO)

    config = SchemeConfig(steps_M=50, particles_N=20_000, master_seed=11)
    noise = generate_noise(config.master_seed, config.particles_N, config.steps_M)
    ens = simulate(gbm(0.05, 1.0), EmpiricalMeasure.dirac(1.0, config.particles_N), config, noise)
    f = FunctionalSpec(FunctionalKind.TERMINAL_CALL_SQUARE)
    for t in (0.25, 0.5, 1.0):
        est = estimate_functional(ens, f, t)
        print(f"t={t}: {est.value:.4f} +/- {est.stderr:.4f} (exact {gbm_call_square_closed_form(0.05, 1, 1, t):.4f})")
