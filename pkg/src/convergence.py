"""
Refinement-ladder diagnostics: strong error between consecutive grids,
moment stability, increment scaling, coincidence probability and marginal
flow distance, all driven by one fine noise grid aggregated to coarser ones.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .coefficients import CoefficientSet
from .measures import EmpiricalMeasure, flow_distance
from .noise import NoiseGrid, generate_noise
from .scheme import (
    ParticleEnsemble,
    SchemeConfig,
    Truncation,
    coincidence_probability,
    simulate,
)

logger = logging.getLogger(__name__)

DEFAULT_LADDER = (25, 50, 100, 200)
DEFAULT_MIN_SLOPE = 0.4
MOMENT_STABILITY_RATIO = 2.0


def validate_ladder(ladder: Sequence[int]) -> List[int]:
    """Ascending step counts, each twice the previous one."""
    steps = [int(m) for m in ladder]
    if len(steps) < 2:
        raise ValueError("a refinement ladder needs at least two step counts")
    for coarse, fine in zip(steps, steps[1:]):
        if fine != 2 * coarse or coarse < 1:
            raise ValueError(f"ladder must double at every level, got {steps}")
    return steps


def _lr_norm(sup: np.ndarray, r: float) -> float:
    return float(np.mean(sup ** r) ** (1.0 / r))


def sup_error(coarse: ParticleEnsemble, fine: ParticleEnsemble, r: float) -> float:
    """
    L^r norm over particles of max_m |coarse(t_m) - fine(t_m)| over the coarse knots.

    Only the shared knots are compared; between them the fine path carries
    Brownian detail the coarse one cannot resolve.
    """
    if fine.config.steps_M != 2 * coarse.config.steps_M:
        raise ValueError(f"fine grid must halve the coarse step ({coarse.config.steps_M} -> {fine.config.steps_M})")
    sup = np.max(np.abs(coarse.states - fine.states[:, ::2]), axis=1)
    return _lr_norm(sup, r)


def brownian_path(noise: NoiseGrid, horizon: float) -> np.ndarray:
    """B at the knots t_0..t_M of the grid the (untruncated) noise drives."""
    h = horizon / noise.steps
    w = np.zeros((noise.particles, noise.steps + 1))
    w[:, 1:] = np.cumsum(math.sqrt(h) * noise.increments, axis=1)
    return w


def exact_error(ens: ParticleEnsemble, model: CoefficientSet, noise: NoiseGrid, r: float) -> float:
    """L^r norm over particles of max_m |scheme(t_m) - exact(t_m)| along the same Brownian path."""
    if model.exact_solution is None:
        raise ValueError(f"{model.label} has no exact solution")
    w = brownian_path(noise, ens.config.horizon_T)
    exact = model.exact_solution(ens.states[:, :1], ens.times, w)
    return _lr_norm(np.max(np.abs(ens.states - exact), axis=1), r)


def sup_moment(ens: ParticleEnsemble, p: float) -> float:
    """E sup_m |X_m|^p over the particles."""
    return float(np.mean(np.max(np.abs(ens.states), axis=1) ** p))


def fit_loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log y against log x; NaN when some y is not positive."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.any(y <= 0) or np.any(x <= 0):
        return math.nan
    slope, _ = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope)


def increment_profile(ens: ParticleEnsemble):
    """L2 norm of X_{s+g} - X_s over dyadic gaps g, averaged over all start knots s."""
    steps = ens.config.steps_M
    h = ens.config.step_h
    gaps, norms = [], []
    g = 1
    while g <= steps // 2:
        diff = ens.states[:, g:] - ens.states[:, :-g]
        gaps.append(g * h)
        norms.append(float(math.sqrt(np.mean(diff * diff))))
        g *= 2
    return np.array(gaps), np.array(norms)


@dataclass
class LadderLevel:
    steps_M: int
    h: float
    strong_error: Optional[float]  # against the exact solution or the next finer level
    flow_distance: Optional[float]
    sup_moment: float
    coincidence_empirical: float
    coincidence_bound: float
    coincidence_stderr: float


@dataclass
class ConvergenceReport:
    model_label: str
    truncation: Truncation
    r_exponent: float
    p_exponent: float
    levels: List[LadderLevel] = field(default_factory=list)
    strong_slope: float = math.nan
    increment_slope: float = math.nan
    increment_gaps: np.ndarray = field(default_factory=lambda: np.zeros(0))
    increment_norms: np.ndarray = field(default_factory=lambda: np.zeros(0))
    strong_reference: str = "next_level"
    min_slope: float = DEFAULT_MIN_SLOPE

    @property
    def rate_ok(self) -> bool:
        return math.isfinite(self.strong_slope) and self.strong_slope >= self.min_slope

    @property
    def moments_stable(self) -> bool:
        moments = [lvl.sup_moment for lvl in self.levels]
        low = min(moments)
        if low <= 0:
            return max(moments) <= 0
        return max(moments) / low <= MOMENT_STABILITY_RATIO

    @property
    def zero_error(self) -> bool:
        return all(lvl.strong_error == 0.0 for lvl in self.levels if lvl.strong_error is not None)

    def to_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow([
                "M", "h", "strong_error", "flow_distance", "sup_moment",
                "coincidence_empirical", "coincidence_bound", "coincidence_stderr",
            ])
            for lvl in self.levels:
                writer.writerow([
                    lvl.steps_M,
                    f"{lvl.h:.17g}",
                    "" if lvl.strong_error is None else f"{lvl.strong_error:.17g}",
                    "" if lvl.flow_distance is None else f"{lvl.flow_distance:.17g}",
                    f"{lvl.sup_moment:.17g}",
                    f"{lvl.coincidence_empirical:.17g}",
                    f"{lvl.coincidence_bound:.17g}",
                    f"{lvl.coincidence_stderr:.17g}",
                ])
        return path

    def fit_to_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["quantity", "value", "threshold", "pass"])
            if self.zero_error:
                writer.writerow(["strong_slope", "nan", f"{self.min_slope:g}", "zero_error"])
            else:
                writer.writerow(["strong_slope", f"{self.strong_slope:.6g}", f"{self.min_slope:g}",
                                 str(self.rate_ok).lower()])
            writer.writerow(["strong_reference", self.strong_reference, "", ""])
            writer.writerow(["increment_slope", f"{self.increment_slope:.6g}", "0.5", ""])
            writer.writerow(["moment_ratio_max_over_min", f"{self._moment_ratio():.6g}",
                             f"{MOMENT_STABILITY_RATIO:g}", str(self.moments_stable).lower()])
        return path

    def _moment_ratio(self) -> float:
        moments = [lvl.sup_moment for lvl in self.levels]
        return max(moments) / min(moments) if min(moments) > 0 else math.nan


def run_ladder(
    model: CoefficientSet,
    initial: EmpiricalMeasure,
    config: SchemeConfig,
    ladder: Sequence[int] = DEFAULT_LADDER,
    r: float = 2.0,
    truncation: Truncation = Truncation.REGULAR,
    min_slope: float = DEFAULT_MIN_SLOPE,
) -> ConvergenceReport:
    """
    Simulate the model on every ladder level from one fine noise grid.

    The finest grid is generated once; coarser levels use pairwise-aggregated
    increments, so all levels follow the same Brownian path.
    Models with an exact solution are measured against it along that path;
    others against the next finer level at the shared knots.

    Args:
        model: coefficients
        initial: N initial samples shared by all levels
        config: horizon, N, p, seed and threads (steps_M is ignored)
        ladder: step counts, each twice the previous
        r: exponent of the strong error norm
        truncation: scheme variant to study
        min_slope: slope below which the rate is reported as failing

    Returns:
        ConvergenceReport
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    steps = validate_ladder(ladder)
    fine_steps = steps[-1]
    base = replace(config, truncation=Truncation(truncation))
    noise = generate_noise(base.master_seed, base.particles_N, fine_steps, base.threads)

    ensembles = []
    for m in steps:
        level_config = base.with_steps(m)
        ensembles.append(simulate(model, initial, level_config, noise.coarsen_to(m)))

    report = ConvergenceReport(
        model_label=model.label,
        truncation=Truncation(truncation),
        r_exponent=r,
        p_exponent=base.p_exponent,
        min_slope=min_slope,
        strong_reference="exact" if model.exact_solution is not None else "next_level",
    )
    for k, (m, ens) in enumerate(zip(steps, ensembles)):
        level_config = base.with_steps(m)
        strong = flow = None
        if model.exact_solution is not None:
            strong = exact_error(ens, model, noise.coarsen_to(m), r)
        if k + 1 < len(steps):
            finer = ensembles[k + 1]
            if model.exact_solution is None:
                strong = sup_error(ens, finer, r)
            flow = flow_distance(ens.marginals, finer.marginals[::2], r)
        coincidence = coincidence_probability(
            level_config, model.lip_x_diffusion, base.particles_N, noise=noise.coarsen_to(m)
        )
        report.levels.append(LadderLevel(
            steps_M=m,
            h=level_config.step_h,
            strong_error=strong,
            flow_distance=flow,
            sup_moment=sup_moment(ens, base.p_exponent),
            coincidence_empirical=coincidence.empirical,
            coincidence_bound=coincidence.lower_bound,
            coincidence_stderr=coincidence.stderr,
        ))

    paired = [lvl for lvl in report.levels if lvl.strong_error is not None]
    report.strong_slope = fit_loglog_slope([lvl.h for lvl in paired], [lvl.strong_error for lvl in paired])
    gaps, norms = increment_profile(ensembles[-1])
    report.increment_gaps, report.increment_norms = gaps, norms
    report.increment_slope = fit_loglog_slope(gaps, norms)

    if report.zero_error:
        logger.info(f"{model.label}: zero strong error on every level")
    elif report.rate_ok:
        logger.info(f"{model.label}: strong slope {report.strong_slope:.3f} (threshold {min_slope})")
    else:
        logger.warning(f"{model.label}: strong slope {report.strong_slope:.3f} below threshold {min_slope}")
    if not report.moments_stable:
        logger.warning(f"{model.label}: sup moments vary by more than {MOMENT_STABILITY_RATIO}x across the ladder")
    return report
