"""
Coefficient models (drift, diffusion) of one-dimensional McKean-Vlasov
equations, with their declared regularity constants, the built-in example
models and a randomized probe of the ordering/convexity assumptions.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from .expressions import ExpressionError, _log_cosh, compile_expression
from .measures import MEAN_FIELD_STATISTICS, EmpiricalMeasure

logger = logging.getLogger(__name__)

Value = Union[float, np.ndarray]
CoefficientFn = Callable[[float, Value, EmpiricalMeasure], Value]
# (x0 column, knot times, Brownian path at the knots) -> strong solution at the knots
ExactSolution = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]

# Constants of the second bounding example (lower/upper reference models)
EXAMPLE2_DOWN_SHIFT = 1.306
EXAMPLE2_UP_SHIFT = 2.917

# Variables a custom model expression may read
MODEL_VARIABLES = ("x", "t") + tuple(MEAN_FIELD_STATISTICS)

# Probe defaults
PROBE_RADIUS = 10.0
PROBE_ATOMS = 64
PROBE_TOLERANCE = 1e-9
MIN_PROBES = 100


class UnknownModelError(ValueError):
    """Raised for a model name that is neither built in nor declared."""


class Relation(str, Enum):
    """Which ordering assumption a coupled pair claims."""

    ASSUMPTION_II = "assumption_II"
    ASSUMPTION_II_PRIME = "assumption_II_prime"


@dataclass(frozen=True)
class CoefficientSet:
    """
    Drift and diffusion of a McKean-Vlasov equation with declared constants.

    Both callables take (t, x, mu) where x is a float or an array of particle
    states and mu the current empirical marginal; they must not mutate their
    inputs. Lipschitz constants are declared, never inferred.
    """

    drift: CoefficientFn
    diffusion: CoefficientFn
    lip_x_drift: float
    lip_x_diffusion: float
    lip_measure: float = 0.0
    holder_t: float = 1.0
    label: str = "custom"
    state_floor: Optional[float] = None  # lower end of the state space, None for the whole line
    exact_solution: Optional[ExactSolution] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not (math.isfinite(self.lip_x_drift) and self.lip_x_drift >= 0):
            raise ValueError(f"{self.label}: lip_x_drift must be finite and >= 0")
        if not (math.isfinite(self.lip_x_diffusion) and self.lip_x_diffusion > 0):
            raise ValueError(f"{self.label}: lip_x_diffusion must be finite and > 0")
        if not (math.isfinite(self.lip_measure) and self.lip_measure >= 0):
            raise ValueError(f"{self.label}: lip_measure must be finite and >= 0")
        if not 0 < self.holder_t <= 1:
            raise ValueError(f"{self.label}: holder_t must lie in (0, 1]")

    def evaluate(self, t: float, x: Value, mu: EmpiricalMeasure) -> Tuple[Value, Value]:
        return self.drift(t, x, mu), self.diffusion(t, x, mu)


@dataclass(frozen=True)
class ModelPair:
    """Two models claimed to be ordered, lower <= upper.

    Under assumption_II the lower member must have convex, measure-monotone
    coefficients; under assumption_II_prime (the symmetric setting) the upper
    one must.
    """

    lower: CoefficientSet
    upper: CoefficientSet
    claimed_relation: Relation = Relation.ASSUMPTION_II

    @property
    def regular(self) -> CoefficientSet:
        if Relation(self.claimed_relation) is Relation.ASSUMPTION_II:
            return self.lower
        return self.upper


# ---------------------------------------------------------------------------
# Built-in models
# ---------------------------------------------------------------------------


def gbm(drift_rate: float, vol: float) -> CoefficientSet:
    """Geometric Brownian motion dX = r X dt + v X dB."""
    drift_rate = float(drift_rate)
    vol = float(vol)

    def drift(t, x, mu):
        return drift_rate * x

    def diffusion(t, x, mu):
        return vol * x

    def exact(x0, t, w):
        return x0 * np.exp((drift_rate - 0.5 * vol * vol) * t + vol * w)

    return CoefficientSet(
        drift=drift,
        diffusion=diffusion,
        lip_x_drift=abs(drift_rate),
        # any positive constant bounds the zero function
        lip_x_diffusion=abs(vol) if vol != 0 else 1.0,
        lip_measure=0.0,
        holder_t=1.0,
        label=f"gbm({drift_rate:g},{vol:g})",
        state_floor=0.0,
        exact_solution=exact,
    )


def example1_y() -> CoefficientSet:
    """dY = 0.05 Y (E sin^2(Y) + 2) dt + Y dB, the mean-field middle of the first example."""

    def drift(t, x, mu):
        return 0.05 * x * (mu.statistic("mean_sin2") + 2.0)

    def diffusion(t, x, mu):
        return 1.0 * x

    return CoefficientSet(
        drift=drift,
        diffusion=diffusion,
        lip_x_drift=0.15,
        lip_x_diffusion=1.0,
        lip_measure=0.05,
        holder_t=1.0,
        label="example1_y",
        state_floor=0.0,
    )


def example2_y() -> CoefficientSet:
    """Mean-field middle of the second example, log-cosh coefficients."""

    def drift(t, x, mu):
        return 0.05 * (_log_cosh(x) + math.log(1.5 + mu.statistic("mean_sin")) + 2.0)

    def diffusion(t, x, mu):
        return 0.3 * (_log_cosh(x) + math.log(1.5 + mu.statistic("mean_cos")) + 2.0)

    return CoefficientSet(
        drift=drift,
        diffusion=diffusion,
        lip_x_drift=0.05,
        lip_x_diffusion=0.3,
        lip_measure=0.6,
        holder_t=1.0,
        label="example2_y",
    )


def _example2_reference(shift: float, label: str) -> CoefficientSet:
    def drift(t, x, mu):
        return 0.05 * (_log_cosh(x) + shift)

    def diffusion(t, x, mu):
        return 0.3 * (_log_cosh(x) + shift)

    return CoefficientSet(
        drift=drift,
        diffusion=diffusion,
        lip_x_drift=0.05,
        lip_x_diffusion=0.3,
        lip_measure=0.0,
        holder_t=1.0,
        label=label,
    )


def example2_down() -> CoefficientSet:
    return _example2_reference(EXAMPLE2_DOWN_SHIFT, "example2_down")


def example2_up() -> CoefficientSet:
    return _example2_reference(EXAMPLE2_UP_SHIFT, "example2_up")


BUILTIN_MODELS: Dict[str, Tuple[Callable[..., CoefficientSet], int]] = {
    "gbm": (gbm, 2),
    "example1_y": (example1_y, 0),
    "example2_y": (example2_y, 0),
    "example2_down": (example2_down, 0),
    "example2_up": (example2_up, 0),
}

_MODEL_REF = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\((.*)\))?\s*$")


def builtin_model(name: str, *params: float) -> CoefficientSet:
    """
    Look up a built-in model.

    Args:
        name: gbm, example1_y, example2_y, example2_down or example2_up
        params: gbm takes (drift_rate, vol); the examples take none

    Returns:
        The model's CoefficientSet
    """
    try:
        factory, arity = BUILTIN_MODELS[name]
    except KeyError:
        raise UnknownModelError(
            f"unknown model '{name}' (built-ins: {', '.join(sorted(BUILTIN_MODELS))})"
        ) from None
    if len(params) != arity:
        raise ValueError(f"model '{name}' takes {arity} parameter(s), got {len(params)}")
    return factory(*params)


def parse_model_ref(ref: str) -> CoefficientSet:
    """Resolve a reference such as 'gbm(0.05, 1.0)' or 'example1_y'."""
    match = _MODEL_REF.match(ref or "")
    if not match:
        raise UnknownModelError(f"cannot parse model reference '{ref}'")
    name, args = match.groups()
    params = []
    if args is not None and args.strip():
        try:
            params = [float(a) for a in args.split(",")]
        except ValueError:
            raise ValueError(f"model parameters must be numbers in '{ref}'") from None
    return builtin_model(name, *params)


def custom_model(
    label: str,
    drift: str,
    diffusion: str,
    lip_x_drift: float,
    lip_x_diffusion: float,
    lip_measure: float = 0.0,
    holder_t: float = 1.0,
    state_floor: Optional[float] = None,
) -> CoefficientSet:
    """Build a model from two grammar expressions over x, t and mean-field averages."""
    drift_expr = compile_expression(drift, MODEL_VARIABLES)
    diffusion_expr = compile_expression(diffusion, MODEL_VARIABLES)

    def bind(expr):
        stats = sorted(expr.names & set(MEAN_FIELD_STATISTICS))

        def fn(t, x, mu):
            env = {"x": x, "t": t}
            for name in stats:
                env[name] = mu.statistic(name)
            # constant expressions still broadcast against the particle array
            return expr.evaluate(env) + np.zeros_like(x, dtype=float)

        return fn

    return CoefficientSet(
        drift=bind(drift_expr),
        diffusion=bind(diffusion_expr),
        lip_x_drift=float(lip_x_drift),
        lip_x_diffusion=float(lip_x_diffusion),
        lip_measure=float(lip_measure),
        holder_t=float(holder_t),
        label=label,
        state_floor=state_floor,
    )


# ---------------------------------------------------------------------------
# Assumption probing
# ---------------------------------------------------------------------------


@dataclass
class ProbeViolation:
    """One failed probe with the inputs that triggered it."""

    check: str
    model: str
    lhs: float
    rhs: float
    inputs: Dict[str, float]


@dataclass
class ProbeReport:
    """Outcome of validate_assumption_II."""

    relation: Relation
    probe_count: int
    checks_run: Dict[str, int] = field(default_factory=dict)
    violations: List[ProbeViolation] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for v in self.violations:
            counts[v.check] = counts.get(v.check, 0) + 1
        return counts

    def to_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["check", "model", "lhs", "rhs", "inputs"])
            for v in self.violations:
                inputs = ";".join(f"{k}={val:.17g}" for k, val in v.inputs.items())
                writer.writerow([v.check, v.model, f"{v.lhs:.17g}", f"{v.rhs:.17g}", inputs])
        return path


def _slack(lhs: float, rhs: float, tolerance: float) -> bool:
    """lhs <= rhs up to a tolerance relative to the magnitudes involved."""
    return lhs <= rhs + tolerance * (1.0 + abs(lhs) + abs(rhs))


def validate_assumption_II(
    pair: ModelPair,
    probe_count: int,
    horizon: float = 1.0,
    radius: float = PROBE_RADIUS,
    seed: int = 0,
    atoms: int = PROBE_ATOMS,
    tolerance: float = PROBE_TOLERANCE,
) -> ProbeReport:
    """
    Randomized probe of the ordering and convexity assumptions on a pair.

    Every probe draws t ~ U[0, T], x, y ~ U on the shared state space within
    [-R, R], a convex weight, a Gaussian measure mu of ``atoms`` atoms and a
    pathwise upward shift nu of mu (so mu <=_mcv nu). It then checks:
    convexity in x of drift and |diffusion| of the regular member, monotone
    response of those to mu -> nu, dominance lower <= upper of drift and of
    |diffusion|, and the declared Lipschitz-in-x constants of both members.

    Failed probes are report entries, never exceptions.
    """
    if probe_count < MIN_PROBES:
        raise ValueError(f"probe_count must be >= {MIN_PROBES}")

    relation = Relation(pair.claimed_relation)
    report = ProbeReport(relation=relation, probe_count=probe_count)
    rng = np.random.default_rng(seed)

    floors = [m.state_floor for m in (pair.lower, pair.upper) if m.state_floor is not None]
    low = max([-radius] + floors)
    regular = pair.regular

    def record(check: str, model: CoefficientSet, lhs: float, rhs: float, inputs: Dict[str, float]):
        report.checks_run[check] = report.checks_run.get(check, 0) + 1
        if not _slack(lhs, rhs, tolerance):
            report.violations.append(ProbeViolation(check, model.label, lhs, rhs, dict(inputs)))

    for _ in range(probe_count):
        t = float(rng.uniform(0.0, horizon))
        x, y = (float(v) for v in rng.uniform(low, radius, size=2))
        lam = float(rng.uniform())
        loc = float(rng.uniform(low, radius))
        scale = float(rng.uniform(0.1, 2.0))
        shift = float(rng.uniform(0.0, 1.0))
        mu = EmpiricalMeasure(loc + scale * rng.standard_normal(atoms))
        nu = EmpiricalMeasure(mu.samples + shift)
        inputs = {"t": t, "x": x, "y": y, "lambda": lam, "mu_loc": loc, "mu_scale": scale, "shift": shift}
        z = lam * x + (1.0 - lam) * y

        # convexity of b and |sigma| in x for the regular member
        for check, fn in (
            ("convexity_drift", lambda s: float(regular.drift(t, s, mu))),
            ("convexity_diffusion", lambda s: abs(float(regular.diffusion(t, s, mu)))),
        ):
            record(check, regular, fn(z), lam * fn(x) + (1.0 - lam) * fn(y), inputs)

        # monotone response to mu <=_mcv nu
        record("measure_monotone_drift", regular,
               float(regular.drift(t, x, mu)), float(regular.drift(t, x, nu)), inputs)
        record("measure_monotone_diffusion", regular,
               abs(float(regular.diffusion(t, x, mu))), abs(float(regular.diffusion(t, x, nu))), inputs)

        # b <= beta and |sigma| <= |theta|
        record("drift_dominance", pair.lower,
               float(pair.lower.drift(t, x, mu)), float(pair.upper.drift(t, x, mu)), inputs)
        record("diffusion_dominance", pair.lower,
               abs(float(pair.lower.diffusion(t, x, mu))), abs(float(pair.upper.diffusion(t, x, mu))), inputs)

        # declared Lipschitz constants in x
        for model in (pair.lower, pair.upper):
            gap = abs(x - y)
            record("lipschitz_drift", model,
                   abs(float(model.drift(t, x, mu)) - float(model.drift(t, y, mu))),
                   model.lip_x_drift * gap, inputs)
            record("lipschitz_diffusion", model,
                   abs(float(model.diffusion(t, x, mu)) - float(model.diffusion(t, y, mu))),
                   model.lip_x_diffusion * gap, inputs)

    if report.violations:
        logger.warning(
            f"Assumption probe ({relation.value}) on {pair.lower.label} <= {pair.upper.label}: "
            f"{len(report.violations)} violations {report.counts()}"
        )
    else:
        logger.info(
            f"Assumption probe ({relation.value}) on {pair.lower.label} <= {pair.upper.label}: "
            f"no violations in {probe_count} probes"
        )
    return report


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)

    mu = EmpiricalMeasure.dirac(1.0, 4)
    for ref in ("gbm(0.05, 1)", "example1_y", "example2_down", "example2_up"):
        model = parse_model_ref(ref)
        b, s = model.evaluate(0.0, 2.0, mu)
        print(f"{model.label:16} drift(2)={float(b):.6f} diffusion(2)={float(s):.6f}")

    pair = ModelPair(example1_y(), gbm(0.15, 1.0), Relation.ASSUMPTION_II_PRIME)
    print(validate_assumption_II(pair, probe_count=1000).counts())
