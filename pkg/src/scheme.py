"""
Truncated and regular Euler schemes for one-dimensional McKean-Vlasov
equations, simulated with an N-particle system.

At every step the empirical marginal is frozen from the pre-step column,
then all particles advance with

    X_{m+1} = X_m + h b(t_m, X_m, mu_m) + sqrt(h) sigma(t_m, X_m, mu_m) Z_{m+1}

where Z is the raw Gaussian increment (regular scheme) or the increment
zeroed beyond 1 / (2 sqrt(h) [sigma]_Lip) (truncated scheme).
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .coefficients import CoefficientSet, ModelPair
from .measures import EmpiricalMeasure
from .noise import ROW_CHUNK, NoiseGrid, generate_noise

logger = logging.getLogger(__name__)

Value = Union[float, np.ndarray]


class Truncation(str, Enum):
    TRUNCATED = "truncated"
    REGULAR = "regular"


class SchemeBlowUp(ArithmeticError):
    """A particle state became NaN or infinite."""

    def __init__(self, message: str, step: Optional[int] = None,
                 particle: Optional[int] = None, value: Optional[float] = None):
        super().__init__(message)
        self.step = step
        self.particle = particle
        self.value = value

    def __str__(self) -> str:
        context = []
        if self.step is not None:
            context.append(f"step={self.step}")
        if self.particle is not None:
            context.append(f"particle={self.particle}")
        if self.value is not None:
            context.append(f"state={self.value!r}")
        base = super().__str__()
        return f"{base} ({', '.join(context)})" if context else base


class StepSizeError(ValueError):
    """h violates h < 1 / (2 [b]_Lip) and no override was given."""


@dataclass(frozen=True)
class SchemeConfig:
    """Time grid, particle count and seeding of one simulation."""

    horizon_T: float = 1.0
    steps_M: int = 100
    particles_N: int = 100_000
    p_exponent: float = 2.0
    master_seed: int = 0
    truncation: Truncation = Truncation.TRUNCATED
    allow_large_h: bool = False
    threads: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.horizon_T) and self.horizon_T > 0):
            raise ValueError("horizon_T must be finite and > 0")
        if int(self.steps_M) != self.steps_M or self.steps_M < 1:
            raise ValueError("steps_M must be an integer >= 1")
        if int(self.particles_N) != self.particles_N or self.particles_N < 2:
            raise ValueError("particles_N must be an integer >= 2")
        if self.p_exponent < 2:
            raise ValueError("p_exponent must be >= 2")
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        object.__setattr__(self, "truncation", Truncation(self.truncation))

    @property
    def step_h(self) -> float:
        return self.horizon_T / self.steps_M

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon_T, self.steps_M + 1)

    def with_steps(self, steps_M: int) -> SchemeConfig:
        return replace(self, steps_M=steps_M)

    def max_step(self, model: CoefficientSet) -> float:
        """Largest admissible h (exclusive) for the model's drift constant."""
        if model.lip_x_drift == 0:
            return math.inf
        return 1.0 / (2.0 * model.lip_x_drift)

    def check_step_size(self, model: CoefficientSet) -> bool:
        return self.step_h < self.max_step(model)

    def enforce_step_size(self, model: CoefficientSet) -> bool:
        """Raise StepSizeError on a violated h constraint unless allow_large_h is set."""
        if self.check_step_size(model):
            return True
        message = (
            f"step h={self.step_h:g} violates h < 1/(2*lip_x_drift) = {self.max_step(model):g} "
            f"for model {model.label}"
        )
        if not self.allow_large_h:
            raise StepSizeError(message)
        logger.warning(f"{message}; continuing because allow_large_h is set")
        return False


def truncation_threshold(h: float, lip_sigma_x: float) -> float:
    """1 / (2 sqrt(h) [sigma]_Lip)."""
    if h <= 0:
        raise ValueError("h must be > 0")
    if lip_sigma_x <= 0:
        raise ValueError("lip_sigma_x must be > 0")
    return 1.0 / (2.0 * math.sqrt(h) * lip_sigma_x)


def truncate(z: Value, h: float, lip_sigma_x: float) -> Value:
    """z when |z| is within the threshold, 0 otherwise."""
    threshold = truncation_threshold(h, lip_sigma_x)
    if np.ndim(z) == 0:
        return float(z) if abs(z) <= threshold else 0.0
    z = np.asarray(z, dtype=float)
    return np.where(np.abs(z) <= threshold, z, 0.0)


def euler_step(
    x: Value,
    t: float,
    mu: EmpiricalMeasure,
    z_trunc: Value,
    model: CoefficientSet,
    h: float,
) -> Value:
    """
    One explicit Euler transition x -> x + h b + sqrt(h) sigma z.

    Raises:
        SchemeBlowUp: the result is not finite; ``particle`` is the index
            into x when x is an array
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    drift, diffusion = model.evaluate(t, x, mu)
    with np.errstate(all="ignore"):
        out = x + h * drift + math.sqrt(h) * diffusion * z_trunc

    if np.ndim(out) == 0:
        if not math.isfinite(out):
            raise SchemeBlowUp(f"non-finite state from model {model.label} at t={t:g}", value=float(x))
        return float(out)

    bad = ~np.isfinite(out)
    if bad.any():
        idx = int(np.argmax(bad))
        x_arr = np.broadcast_to(x, out.shape)
        raise SchemeBlowUp(
            f"non-finite state from model {model.label} at t={t:g}",
            particle=idx,
            value=float(x_arr[idx]),
        )
    return out


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """N particle paths on the grid t_0..t_M with lazily sorted marginals."""

    states: np.ndarray
    config: SchemeConfig
    model_label: str
    _marginals: Dict[int, EmpiricalMeasure] = field(default_factory=dict, repr=False)
    noise: Optional[NoiseGrid] = field(default=None, repr=False)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        expected = (self.config.particles_N, self.config.steps_M + 1)
        if states.shape != expected:
            raise ValueError(f"states shape {states.shape} does not match config {expected}")
        if not np.all(np.isfinite(states)):
            raise ValueError("ensemble states must be finite")
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    @property
    def times(self) -> np.ndarray:
        return self.config.times

    def coupled_with(self, other: ParticleEnsemble) -> bool:
        """Same noise grid row by row, so particle i of both ensembles can be paired."""
        return self.noise is not None and self.noise is other.noise

    @property
    def terminal(self) -> np.ndarray:
        return self.states[:, -1]

    def marginal(self, step: int) -> EmpiricalMeasure:
        steps = self.config.steps_M
        if not -steps - 1 <= step <= steps:
            raise IndexError(f"step {step} outside 0..{steps}")
        step %= steps + 1
        if step not in self._marginals:
            self._marginals[step] = EmpiricalMeasure(self.states[:, step])
        return self._marginals[step]

    @property
    def marginals(self) -> List[EmpiricalMeasure]:
        return [self.marginal(m) for m in range(self.config.steps_M + 1)]

    def to_csv(self, path: Path, max_particles: Optional[int] = None) -> Path:
        """Long format `particle,step,value`, optionally the first max_particles paths only."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        rows = self.states if max_particles is None else self.states[:max_particles]
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["particle", "step", "value"])
            for i, row in enumerate(rows):
                for m, value in enumerate(row):
                    writer.writerow([i, m, f"{value:.17g}"])
        return path


def _advance_block(
    states: np.ndarray,
    step: int,
    lo: int,
    hi: int,
    t: float,
    mu: EmpiricalMeasure,
    z: np.ndarray,
    model: CoefficientSet,
    h: float,
) -> None:
    try:
        states[lo:hi, step + 1] = euler_step(states[lo:hi, step], t, mu, z[lo:hi], model, h)
    except SchemeBlowUp as e:
        particle = lo + (e.particle or 0)
        raise SchemeBlowUp(
            f"non-finite state from model {model.label}", step=step, particle=particle, value=e.value
        ) from None


def simulate(
    model: CoefficientSet,
    initial: EmpiricalMeasure,
    config: SchemeConfig,
    noise: NoiseGrid,
) -> ParticleEnsemble:
    """
    Run the particle scheme for one model.

    Particle i starts from the i-th sorted initial sample and is driven by
    row i of the noise grid. Particle updates run in fixed blocks of rows, so
    the result does not depend on config.threads.

    Args:
        model: coefficients with declared constants
        initial: exactly N uniform-weight samples
        config: scheme configuration
        noise: N x M standard normal increments

    Returns:
        ParticleEnsemble

    Raises:
        SchemeBlowUp, StepSizeError, ValueError
    """
    n, steps = config.particles_N, config.steps_M
    if initial.size != n or not initial.is_uniform:
        raise ValueError(f"initial measure must have exactly N={n} uniform samples, got {initial.size}")
    if noise.shape != (n, steps):
        raise ValueError(f"noise shape {noise.shape} does not match (N, M) = {(n, steps)}")
    config.enforce_step_size(model)

    h = config.step_h
    threshold = truncation_threshold(h, model.lip_x_diffusion)
    if config.truncation is Truncation.TRUNCATED:
        z = noise.truncated(threshold)
        assert np.all(np.abs(z) <= threshold)
        truncated = int(np.count_nonzero(np.abs(noise.increments) > threshold))
    else:
        z = noise.increments
        truncated = 0

    logger.info(
        f"Simulating {model.label}: N={n} M={steps} h={h:g} threshold={threshold:.4g} "
        f"scheme={config.truncation.value} truncated_increments={truncated}"
    )

    times = config.times
    states = np.empty((n, steps + 1), dtype=float)
    states[:, 0] = initial.samples
    marginals: Dict[int, EmpiricalMeasure] = {0: initial}
    blocks = [(lo, min(lo + ROW_CHUNK, n)) for lo in range(0, n, ROW_CHUNK)]

    pool = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 and len(blocks) > 1 else None
    try:
        for m in range(steps):
            mu = marginals[m]
            t = float(times[m])
            if pool is None:
                for lo, hi in blocks:
                    _advance_block(states, m, lo, hi, t, mu, z[:, m], model, h)
            else:
                futures = [
                    pool.submit(_advance_block, states, m, lo, hi, t, mu, z[:, m], model, h)
                    for lo, hi in blocks
                ]
                for future in futures:
                    future.result()
            marginals[m + 1] = EmpiricalMeasure(states[:, m + 1])
            logger.debug(f"{model.label}: step {m + 1}/{steps} mean={marginals[m + 1].mean:.6g}")
    finally:
        if pool is not None:
            pool.shutdown()

    return ParticleEnsemble(states=states, config=config, model_label=model.label, _marginals=marginals, noise=noise)


def simulate_common(
    models: Sequence[CoefficientSet],
    initials: Sequence[EmpiricalMeasure],
    config: SchemeConfig,
    noise: Optional[NoiseGrid] = None,
) -> List[ParticleEnsemble]:
    """Simulate several models on one shared noise grid (common random numbers)."""
    if len(models) != len(initials):
        raise ValueError("one initial measure per model is required")
    for model in models:
        config.enforce_step_size(model)
    if noise is None:
        noise = generate_noise(config.master_seed, config.particles_N, config.steps_M, config.threads)
    return [simulate(model, initial, config, noise) for model, initial in zip(models, initials)]


def simulate_coupled(
    pair: ModelPair,
    initial_lower: EmpiricalMeasure,
    initial_upper: EmpiricalMeasure,
    config: SchemeConfig,
    noise: Optional[NoiseGrid] = None,
) -> Tuple[ParticleEnsemble, ParticleEnsemble]:
    """Lower and upper ensembles driven by the same increments."""
    lower, upper = simulate_common([pair.lower, pair.upper], [initial_lower, initial_upper], config, noise)
    return lower, upper


class Coincidence(NamedTuple):
    empirical: float
    lower_bound: float
    trials: int
    stderr: float


def coincidence_lower_bound(steps: int, horizon: float, lip_sigma_x: float) -> float:
    """(1 - exp(-M / (8 T lip^2)))^M, a lower bound on P(no increment truncated)."""
    return float((1.0 - math.exp(-steps / (8.0 * horizon * lip_sigma_x ** 2))) ** steps)


def binomial_stderr(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def coincidence_probability(
    config: SchemeConfig,
    lip_sigma_x: float,
    trials: int,
    noise: Optional[NoiseGrid] = None,
) -> Coincidence:
    """
    Fraction of M-step noise rows with no truncated increment, next to its
    lower bound. On such rows the truncated and regular schemes coincide path
    by path when the coefficients ignore the measure; with mean-field terms
    the empirical law still feels the truncated rows, so they agree only up to
    that perturbation.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    steps = config.steps_M
    if noise is None:
        noise = generate_noise(config.master_seed, trials, steps, config.threads)
    elif noise.shape != (trials, steps):
        raise ValueError(f"noise shape {noise.shape} does not match ({trials}, {steps})")
    threshold = truncation_threshold(config.step_h, lip_sigma_x)
    empirical = float(np.mean(noise.within_threshold(threshold)))
    bound = coincidence_lower_bound(steps, config.horizon_T, lip_sigma_x)
    logger.info(
        f"Coincidence M={steps}: empirical={empirical:.6f} lower_bound={bound:.6f} ({trials} trials)"
    )
    return Coincidence(empirical, bound, trials, binomial_stderr(empirical, trials))


if __name__ == "__main__":
    from .coefficients import gbm

    logging.basicConfig(level=logging.INFO)

    config = SchemeConfig(horizon_T=1.0, steps_M=100, particles_N=10_000, master_seed=7)
    lower, upper = simulate_coupled(
        ModelPair(gbm(0.05, 1.0), gbm(0.15, 1.0)),
        EmpiricalMeasure.dirac(1.0, config.particles_N),
        EmpiricalMeasure.dirac(1.0, config.particles_N),
        config,
    )
    print(f"E X_T = {lower.marginal(-1).mean:.4f} (exact {math.exp(0.05):.4f})")
    print(f"E Y_T = {upper.marginal(-1).mean:.4f} (exact {math.exp(0.15):.4f})")
    print(coincidence_probability(config, 1.0, trials=10_000))
