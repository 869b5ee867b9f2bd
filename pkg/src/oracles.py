"""
Deterministic oracles independent of the Monte Carlo engine.

Gauss-Legendre quadrature against the standard normal density checks:
  - u -> E f(u Z^h) for truncated Gaussians (monotone in |u|, even, minimal at 0)
  - monotonicity propagation of one regular Euler transition for a catalog
    of non-decreasing convex functions, and its failure for a decreasing sigma
  - the closed-form derivative of the decreasing-sigma counterexample
Exact integer arithmetic checks that stop-loss dominance agrees with
dominance over a brute-force family of piecewise-linear convex functions.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import bisect
from scipy.special import erfc, roots_legendre

from .scheme import truncation_threshold

logger = logging.getLogger(__name__)

CATALOG_VERSION = "1"
CALL_STRIKES = tuple(np.round(np.arange(-2.5, 2.51, 0.5), 10))
SOFTPLUS_SCALES = (0.5, 1.0, 2.0)

QUAD_LIMIT = 8.0
QUAD_NODES = 20
QUAD_PANELS = 64
NORMALIZATION_TOLERANCE = 1e-8
MOMENT_TOLERANCE = 1e-10
ORDER_TOLERANCE = 1e-9

# truncated-Gaussian suite: threshold c = 1 / (2 sqrt(h) lip) = 2
TRUNCATED_H = 0.0625
TRUNCATED_LIP = 1.0
TRUNCATED_U_MAX = 3.0
TRUNCATED_U_POINTS = 50

COUNTEREXAMPLE_H = 0.5
DERIVATIVE_TOLERANCE = 1e-6
ROOT_TOLERANCE = 1e-8
FD_STEP = 1e-5

ATOM_RANGE = 10
MAX_ATOMS = 5
MAX_FAMILY_SLOPE = 4
EQUIVALENCE_TRIALS = 10_000

SUITES = ("truncated_gaussian", "monotonicity", "counterexample", "mcv_equivalence")


class QuadratureError(RuntimeError):
    """Quadrature failed its normalization self-check."""


def normal_pdf(x):
    return np.exp(-0.5 * np.square(x)) / math.sqrt(2.0 * math.pi)


def normal_cdf(x):
    return 0.5 * erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))


def normal_sf(x):
    """1 - Phi(x) without cancellation in the upper tail."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


@dataclass(frozen=True)
class QuadratureRule:
    """Composite Gauss-Legendre rule for integrals against the standard normal density."""

    lower: float = -QUAD_LIMIT
    upper: float = QUAD_LIMIT
    panels: int = QUAD_PANELS
    order: int = QUAD_NODES

    def __post_init__(self):
        if self.panels < 1 or self.order < 1 or not self.lower < self.upper:
            raise ValueError("need panels >= 1, order >= 1 and lower < upper")
        nodes, weights = roots_legendre(self.order)
        object.__setattr__(self, "_nodes", nodes)
        object.__setattr__(self, "_weights", weights)

    def integrate(
        self,
        g: Callable[[np.ndarray], np.ndarray],
        a: Optional[float] = None,
        b: Optional[float] = None,
        breakpoints: Sequence[float] = (),
    ) -> float:
        """
        Integral of g(z) phi(z) over [a, b] (default the rule's range).

        Panels are split at the breakpoints so that kinks of g never fall
        inside a panel.
        """
        a = self.lower if a is None else float(a)
        b = self.upper if b is None else float(b)
        if not a < b:
            return 0.0
        span = (b - a) / (self.upper - self.lower)
        count = max(1, int(math.ceil(self.panels * span)))
        inner = [p for p in breakpoints if a < p < b and math.isfinite(p)]
        edges = np.unique(np.concatenate((np.linspace(a, b, count + 1), inner)))
        left, right = edges[:-1], edges[1:]
        half = 0.5 * (right - left)
        mid = 0.5 * (right + left)
        z = mid[:, None] + half[:, None] * self._nodes[None, :]
        w = half[:, None] * self._weights[None, :]
        values = np.asarray(g(z), dtype=float) * normal_pdf(z)
        return float(np.sum(w * values))

    def moments(self) -> Tuple[float, float, float]:
        """Integrals of 1, z and z^2 (1, 0, 1 up to the truncated tails)."""
        return (
            self.integrate(np.ones_like),
            self.integrate(lambda z: z),
            self.integrate(np.square),
        )

    def self_check(self, tolerance: float = MOMENT_TOLERANCE) -> None:
        mass, first, second = self.moments()
        if abs(mass - 1.0) > tolerance or abs(first) > tolerance or abs(second - 1.0) > tolerance:
            raise QuadratureError(f"quadrature moments ({mass}, {first}, {second}) are off")


DEFAULT_RULE = QuadratureRule()


@dataclass(frozen=True)
class CatalogFunction:
    """A non-decreasing convex test function with its kinks."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    kinks: Tuple[float, ...] = ()

    def __call__(self, x):
        return self.fn(x)


def _call(k: float) -> CatalogFunction:
    return CatalogFunction(f"call({k:g})", lambda x: np.maximum(np.asarray(x, dtype=float) - k, 0.0), (k,))


def _softplus(scale: float) -> CatalogFunction:
    return CatalogFunction(f"softplus({scale:g})", lambda x: scale * np.logaddexp(0.0, np.asarray(x) / scale))


def convex_catalog() -> List[CatalogFunction]:
    """Versioned catalog: calls at 11 strikes, exp and softplus at 3 scales."""
    catalog = [_call(float(k)) for k in CALL_STRIKES]
    catalog.append(CatalogFunction("exp", np.exp))
    catalog.extend(_softplus(s) for s in SOFTPLUS_SCALES)
    return catalog


def expect_f_of_truncated(
    u: float,
    h: float,
    lip: float,
    f: Callable[[np.ndarray], np.ndarray],
    rule: QuadratureRule = DEFAULT_RULE,
    kinks: Sequence[float] = (),
) -> float:
    """
    E f(u T^h(Z)) for a standard normal Z.

    Integrates f(u z) over |z| <= c against phi and adds f(0) P(|Z| > c),
    c = 1 / (2 sqrt(h) lip). ``kinks`` are points where f is not smooth.

    Raises:
        QuadratureError: the rule does not reproduce the total mass within 1e-8
    """
    c = truncation_threshold(h, lip)
    f0 = float(np.asarray(f(np.zeros(1)))[0])
    if u == 0:
        return f0
    inner = min(c, rule.upper, -rule.lower)
    tail = float(erfc(c / math.sqrt(2.0)))

    mass = rule.integrate(np.ones_like, -inner, inner) + tail
    if abs(mass - 1.0) > NORMALIZATION_TOLERANCE:
        raise QuadratureError(f"normalization off by {mass - 1.0:.3e} (c={c:g})")

    breaks = [0.0] + [k / u for k in kinks]
    body = rule.integrate(lambda z: f(u * z), -inner, inner, breaks)
    return body + f0 * tail


def counterexample_sigma(x):
    """sigma(x) = E (zeta - x)^+ = phi(x) - x (1 - Phi(x)), decreasing and convex."""
    x = np.asarray(x, dtype=float)
    return normal_pdf(x) - x * normal_sf(x)


def counterexample_sigma_prime(x):
    return -normal_sf(x)


def counterexample_factor(x, h: float):
    """1 + h sigma sigma'(x); the derivative below has the sign of this factor."""
    return 1.0 + h * counterexample_sigma(x) * counterexample_sigma_prime(x)


def counterexample_derivative(x: float, h: float) -> float:
    """
    d/dx E exp(x + sqrt(h) sigma(x) Z) = exp(x + h sigma^2 / 2) (1 + h sigma sigma'(x)).

    b = 0 and f = exp; sigma is the decreasing counterexample above.
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    s = counterexample_sigma(x)
    return float(np.exp(x + 0.5 * h * s * s) * counterexample_factor(x, h))


def euler_transition_expectation(
    x: float,
    h: float,
    sigma: float,
    f: CatalogFunction,
    drift: float = 0.0,
    rule: QuadratureRule = DEFAULT_RULE,
) -> float:
    """E f(x + h b + sqrt(h) sigma Z) by quadrature, range widened to cover exp growth."""
    scale = math.sqrt(h) * abs(sigma)
    center = x + h * drift
    if scale == 0:
        return float(np.asarray(f(np.array([center])))[0])
    breaks = [(k - center) / scale for k in f.kinks]
    return rule.integrate(lambda z: f(center + scale * z), rule.lower, rule.upper + scale, breaks)


def counterexample_finite_difference(x: float, h: float, step: float = FD_STEP) -> float:
    """Central difference of x -> E exp(x + sqrt(h) sigma(x) Z) computed by quadrature."""
    exp_fn = CatalogFunction("exp", np.exp)

    def value(y):
        return euler_transition_expectation(y, h, float(counterexample_sigma(y)), exp_fn)

    return (value(x + step) - value(x - step)) / (2.0 * step)


class SigmaKind(str, Enum):
    NONDECREASING = "nondecreasing"
    DECREASING_COUNTEREXAMPLE = "decreasing_counterexample"
    CONSTANT = "constant"


SIGMA_FUNCTIONS: Dict[SigmaKind, Callable[[float], float]] = {
    SigmaKind.NONDECREASING: lambda x: max(x, 0.0) + 1.0,
    SigmaKind.DECREASING_COUNTEREXAMPLE: lambda x: float(counterexample_sigma(x)),
    SigmaKind.CONSTANT: lambda x: 1.0,
}

X_GRIDS: Dict[SigmaKind, Tuple[float, float, int]] = {
    SigmaKind.NONDECREASING: (-5.0, 5.0, 201),
    SigmaKind.CONSTANT: (-5.0, 5.0, 201),
    SigmaKind.DECREASING_COUNTEREXAMPLE: (-10.0, 5.0, 301),
}


@dataclass
class PropagationViolation:
    function: str
    kind: str  # monotonicity or convexity
    x: float
    magnitude: float


@dataclass
class PropagationReport:
    """Findings of check_monotonicity_propagation."""

    sigma_kind: SigmaKind
    h: float
    x_grid: np.ndarray
    functions: List[str]
    violations: List[PropagationViolation] = field(default_factory=list)

    def count(self, kind: Optional[str] = None, function: Optional[str] = None) -> int:
        return sum(
            1 for v in self.violations
            if (kind is None or v.kind == kind) and (function is None or v.function == function)
        )

    def monotonicity_violations_below(self, function: str, x_max: float) -> List[PropagationViolation]:
        return [v for v in self.violations if v.function == function and v.kind == "monotonicity" and v.x <= x_max]


def check_monotonicity_propagation(
    sigma_kind: SigmaKind,
    h: float,
    catalog: Optional[List[CatalogFunction]] = None,
    rule: QuadratureRule = DEFAULT_RULE,
) -> PropagationReport:
    """
    Evaluate x -> E f(x + sqrt(h) sigma(x) Z) (b = 0) on a grid for every
    catalog function and report where it decreases or fails discrete convexity.

    A finding is a report entry; non-decreasing sigma should produce none,
    the decreasing counterexample a monotonicity failure for f = exp at
    very negative x.
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    sigma_kind = SigmaKind(sigma_kind)
    sigma = SIGMA_FUNCTIONS[sigma_kind]
    lo, hi, count = X_GRIDS[sigma_kind]
    xs = np.linspace(lo, hi, count)
    catalog = convex_catalog() if catalog is None else catalog

    report = PropagationReport(sigma_kind, h, xs, [f.name for f in catalog])
    for f in catalog:
        values = np.array([euler_transition_expectation(float(x), h, sigma(float(x)), f, rule=rule) for x in xs])
        scale = ORDER_TOLERANCE * (1.0 + np.abs(values))

        steps = np.diff(values)
        for k in np.nonzero(steps < -scale[1:])[0]:
            report.violations.append(PropagationViolation(f.name, "monotonicity", float(xs[k + 1]), float(-steps[k])))

        curvature = np.diff(values, n=2)
        for k in np.nonzero(curvature < -scale[1:-1])[0]:
            report.violations.append(PropagationViolation(f.name, "convexity", float(xs[k + 1]), float(-curvature[k])))

    logger.info(
        f"Propagation check sigma={sigma_kind.value} h={h:g}: "
        f"{report.count('monotonicity')} monotonicity, {report.count('convexity')} convexity findings"
    )
    return report


# ---------------------------------------------------------------------------
# Finite-support equivalence
# ---------------------------------------------------------------------------

STRIKES = np.arange(-ATOM_RANGE, ATOM_RANGE + 1)


def _generator_matrix() -> np.ndarray:
    """Values of x and (x - k)^+ (k = -10..10) at the integer points -10..10, one row per generator."""
    points = np.arange(-ATOM_RANGE, ATOM_RANGE + 1)
    rows = [points] + [np.maximum(points - k, 0) for k in STRIKES]
    return np.array(rows, dtype=np.int64)


def function_family_coefficients() -> np.ndarray:
    """
    Non-negative integer combinations of at most four generators.

    Each row is a piecewise-linear non-decreasing convex function with
    integer knots in [-10, 10] and slopes in {0, ..., 4}; the zero row is
    the constant function.
    """
    n_gen = 1 + STRIKES.size
    rows = [np.zeros(n_gen, dtype=np.int64)]
    for size in range(1, MAX_FAMILY_SLOPE + 1):
        for combo in itertools.combinations_with_replacement(range(n_gen), size):
            row = np.zeros(n_gen, dtype=np.int64)
            for g in combo:
                row[g] += 1
            rows.append(row)
    return np.array(rows)


_GENERATORS = _generator_matrix()
_FAMILY: Optional[np.ndarray] = None


def _family() -> np.ndarray:
    global _FAMILY
    if _FAMILY is None:
        _FAMILY = function_family_coefficients()
    return _FAMILY


def _validate_atoms(atoms: Sequence[int], name: str) -> np.ndarray:
    arr = np.asarray(atoms)
    if arr.ndim != 1 or not 1 <= arr.size <= MAX_ATOMS:
        raise ValueError(f"{name} must hold 1..{MAX_ATOMS} atoms")
    if not np.all(arr == np.round(arr)) or np.any(np.abs(arr) > ATOM_RANGE):
        raise ValueError(f"{name} atoms must be integers in [-{ATOM_RANGE}, {ATOM_RANGE}]")
    return arr.astype(np.int64)


def integer_stop_loss_dominated(mu_atoms: Sequence[int], nu_atoms: Sequence[int]) -> bool:
    """E(X - k)^+ <= E(Y - k)^+ at every integer strike in [-10, 10], exact arithmetic."""
    mu = _validate_atoms(mu_atoms, "mu_atoms")
    nu = _validate_atoms(nu_atoms, "nu_atoms")
    sl_mu = np.maximum(mu[None, :] - STRIKES[:, None], 0).sum(axis=1)
    sl_nu = np.maximum(nu[None, :] - STRIKES[:, None], 0).sum(axis=1)
    return bool(np.all(sl_mu * nu.size <= sl_nu * mu.size))


def _generator_sums(atoms: np.ndarray) -> np.ndarray:
    return _GENERATORS[:, atoms + ATOM_RANGE].sum(axis=1)


def family_dominated(mu_atoms: Sequence[int], nu_atoms: Sequence[int]) -> bool:
    """Integral of every family function under mu <= under nu (integer arithmetic)."""
    mu = _validate_atoms(mu_atoms, "mu_atoms")
    nu = _validate_atoms(nu_atoms, "nu_atoms")
    family = _family()
    lhs = family @ (_generator_sums(mu) * nu.size)
    rhs = family @ (_generator_sums(nu) * mu.size)
    return bool(np.all(lhs <= rhs))


@dataclass(frozen=True)
class EquivalenceResult:
    stop_loss_dominated: bool
    family_dominated: bool

    @property
    def agree(self) -> bool:
        return self.stop_loss_dominated == self.family_dominated


def finite_support_mcv_equivalence(mu_atoms: Sequence[int], nu_atoms: Sequence[int]) -> EquivalenceResult:
    """Compare stop-loss dominance with dominance over the brute-force convex family."""
    return EquivalenceResult(
        integer_stop_loss_dominated(mu_atoms, nu_atoms),
        family_dominated(mu_atoms, nu_atoms),
    )


def random_atom_pairs(trials: int, seed: int = 0) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Random configurations: half independent draws, half upward perturbations
    of mu (so dominated pairs are well represented).
    """
    rng = np.random.default_rng(seed)
    pairs = []
    for k in range(trials):
        mu = rng.integers(-ATOM_RANGE, ATOM_RANGE + 1, size=int(rng.integers(1, MAX_ATOMS + 1)))
        if k % 2 == 0:
            nu = rng.integers(-ATOM_RANGE, ATOM_RANGE + 1, size=int(rng.integers(1, MAX_ATOMS + 1)))
        else:
            nu = np.clip(mu + rng.integers(-1, 3, size=mu.size), -ATOM_RANGE, ATOM_RANGE)
        pairs.append((mu, nu))
    return pairs


def batch_equivalence(pairs: Sequence[Tuple[np.ndarray, np.ndarray]], chunk: int = 500) -> Tuple[int, int, int]:
    """
    Agreement count over many configurations, the family test done as one
    float matrix product per chunk (all integers involved are exact in float64).

    Returns:
        (agreements, disagreements, dominated_count)
    """
    family = _family().astype(np.float64)
    agree = disagree = dominated = 0
    for start in range(0, len(pairs), chunk):
        block = pairs[start:start + chunk]
        lhs_sums = np.empty((_GENERATORS.shape[0], len(block)))
        rhs_sums = np.empty_like(lhs_sums)
        stop_loss = np.empty(len(block), dtype=bool)
        for j, (mu, nu) in enumerate(block):
            mu = _validate_atoms(mu, "mu_atoms")
            nu = _validate_atoms(nu, "nu_atoms")
            lhs_sums[:, j] = _generator_sums(mu) * nu.size
            rhs_sums[:, j] = _generator_sums(nu) * mu.size
            stop_loss[j] = integer_stop_loss_dominated(mu, nu)
        family_ok = np.all(family @ lhs_sums <= family @ rhs_sums, axis=0)
        matches = family_ok == stop_loss
        agree += int(matches.sum())
        disagree += int((~matches).sum())
        dominated += int(stop_loss.sum())
    return agree, disagree, dominated


# ---------------------------------------------------------------------------
# Suites and reports
# ---------------------------------------------------------------------------


@dataclass
class OracleRow:
    check: str
    input: str
    expected: str
    observed: str
    passed: bool


@dataclass
class OracleReport:
    suite: str
    rows: List[OracleRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows)

    def add(self, check: str, input: str, expected: str, observed: str, passed: bool) -> None:
        self.rows.append(OracleRow(check, input, expected, observed, bool(passed)))
        if not passed:
            logger.warning(f"Oracle check failed: {check} [{input}] expected {expected}, observed {observed}")

    def extend(self, other: OracleReport) -> None:
        self.rows.extend(other.rows)

    def to_text(self) -> str:
        lines = [f"Oracle suite: {self.suite} (catalog v{CATALOG_VERSION})", ""]
        for row in self.rows:
            status = "PASS" if row.passed else "FAIL"
            lines.append(f"[{status}] {row.check}: {row.input}")
            lines.append(f"       expected {row.expected}; observed {row.observed}")
        lines.append("")
        lines.append(f"{sum(r.passed for r in self.rows)}/{len(self.rows)} checks passed")
        return "\n".join(lines) + "\n"

    def to_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["check", "input", "expected", "observed", "pass"])
            for row in self.rows:
                writer.writerow([row.check, row.input, row.expected, row.observed, str(row.passed).lower()])
        return path


def _quadrature_rows(report: OracleReport, rule: QuadratureRule) -> None:
    mass, first, second = rule.moments()
    report.add("quadrature_moments", f"[{rule.lower:g},{rule.upper:g}] panels={rule.panels}",
               "(1, 0, 1) within 1e-10", f"({mass:.15f}, {first:.3e}, {second:.15f})",
               abs(mass - 1) <= MOMENT_TOLERANCE and abs(first) <= MOMENT_TOLERANCE
               and abs(second - 1) <= MOMENT_TOLERANCE)


def suite_truncated_gaussian(rule: QuadratureRule = DEFAULT_RULE) -> OracleReport:
    report = OracleReport("truncated_gaussian")
    _quadrature_rows(report, rule)
    h, lip = TRUNCATED_H, TRUNCATED_LIP
    us = np.linspace(0.0, TRUNCATED_U_MAX, TRUNCATED_U_POINTS)
    symmetric = np.concatenate((-us[:0:-1], us))
    functions = convex_catalog() + [CatalogFunction("abs", np.abs, (0.0,))]

    identity = max(abs(expect_f_of_truncated(u, h, lip, lambda z: z, rule)) for u in us)
    report.add("odd_moment_vanishes", f"f=identity, u in [0,{TRUNCATED_U_MAX:g}]", "0 within 1e-10",
               f"{identity:.3e}", identity <= MOMENT_TOLERANCE)

    for f in functions:
        values = np.array([expect_f_of_truncated(float(u), h, lip, f, rule, f.kinks) for u in symmetric])
        half = values[us.size - 1:]
        tol = ORDER_TOLERANCE * (1.0 + np.abs(half))
        drops = np.diff(half)
        worst = float(drops.min()) if drops.size else 0.0
        report.add("monotone_in_u", f"f={f.name}, h={h:g}, lip={lip:g}, {TRUNCATED_U_POINTS} points",
                   "non-decreasing within 1e-9", f"min step {worst:.3e}", bool(np.all(drops >= -tol[1:])))

        asym = float(np.max(np.abs(values - values[::-1])))
        report.add("even_in_u", f"f={f.name}, symmetric u grid", "|E f(uZ)-E f(-uZ)| <= 1e-9",
                   f"{asym:.3e}", asym <= ORDER_TOLERANCE * (1.0 + float(np.max(np.abs(values)))))

        at_zero = float(values[us.size - 1])
        gap = float(np.min(values) - at_zero)
        report.add("minimum_at_zero", f"f={f.name}, symmetric u grid", "min attained at u=0",
                   f"min - value(0) = {gap:.3e}", gap >= -ORDER_TOLERANCE * (1.0 + abs(at_zero)))
    return report


def suite_monotonicity(rule: QuadratureRule = DEFAULT_RULE) -> OracleReport:
    report = OracleReport("monotonicity")
    h = COUNTEREXAMPLE_H
    for kind in (SigmaKind.NONDECREASING, SigmaKind.CONSTANT):
        found = check_monotonicity_propagation(kind, h, rule=rule)
        lo, hi, count = X_GRIDS[kind]
        report.add("no_monotonicity_violation", f"sigma={kind.value}, h={h:g}, x in [{lo:g},{hi:g}] ({count})",
                   "0 findings", str(found.count("monotonicity")), found.count("monotonicity") == 0)
        report.add("no_convexity_violation", f"sigma={kind.value}, h={h:g}",
                   "0 findings", str(found.count("convexity")), found.count("convexity") == 0)

    counter = check_monotonicity_propagation(SigmaKind.DECREASING_COUNTEREXAMPLE, h, rule=rule)
    hits = counter.monotonicity_violations_below("exp", -5.0)
    report.add("counterexample_violation_detected", f"sigma=decreasing_counterexample, f=exp, h={h:g}, x <= -5",
               ">= 1 finding", str(len(hits)), len(hits) > 0)
    return report


def suite_counterexample(rule: QuadratureRule = DEFAULT_RULE) -> OracleReport:
    report = OracleReport("counterexample")
    h = COUNTEREXAMPLE_H

    right = counterexample_derivative(8.0, h)
    report.add("derivative_positive", f"x=8, h={h:g}", "> 0 (about e^8)", f"{right:.6g}", right > 0)
    left = counterexample_derivative(-10.0, h)
    report.add("derivative_negative", f"x=-10, h={h:g}", "< 0", f"{left:.6g}", left < 0)

    xs = np.linspace(-20.0, 20.0, 4001)
    signs = np.sign(counterexample_factor(xs, h))
    changes = np.nonzero(np.diff(signs) != 0)[0]
    report.add("single_sign_change", f"x in [-20,20], h={h:g}", "1", str(changes.size), changes.size == 1)

    if changes.size:
        a, b = float(xs[changes[0]]), float(xs[changes[0] + 1])
        root = bisect(lambda x: float(counterexample_factor(x, h)), a, b, xtol=1e-14)
        residual = abs(float(counterexample_factor(root, h)))
        report.add("sign_change_root", f"bracket [{a:g},{b:g}]", "1 + h sigma sigma'(root) = 0 within 1e-8",
                   f"root={root:.10f}, residual={residual:.3e}", residual <= ROOT_TOLERANCE)

    worst = 0.0
    for x in np.linspace(-12.0, 8.0, 41):
        closed = counterexample_derivative(float(x), h)
        scale = math.exp(x + 0.5 * h * float(counterexample_sigma(x)) ** 2)
        fd = counterexample_finite_difference(float(x), h)
        worst = max(worst, abs(fd - closed) / scale)
    report.add("finite_difference_match", f"x in [-12,8] (41 points), h={h:g}",
               "relative error <= 1e-6", f"{worst:.3e}", worst <= DERIVATIVE_TOLERANCE)
    return report


def suite_mcv_equivalence(trials: int = EQUIVALENCE_TRIALS, seed: int = 0) -> OracleReport:
    report = OracleReport("mcv_equivalence")
    family_size = _family().shape[0]
    for mu, nu, expected in (
        ([0, 1, 2], [0, 1, 2], True),
        ([0], [-1, 1], True),
        ([1], [0], False),
    ):
        result = finite_support_mcv_equivalence(mu, nu)
        report.add("known_case", f"mu={mu}, nu={nu}", f"agree, dominated={expected}",
                   f"stop_loss={result.stop_loss_dominated}, family={result.family_dominated}",
                   result.agree and result.stop_loss_dominated == expected)

    agree, disagree, dominated = batch_equivalence(random_atom_pairs(trials, seed))
    report.add("random_agreement", f"{trials} random configurations, {family_size} family functions",
               f"{trials}/{trials} agreements", f"{agree}/{trials} ({dominated} dominated)", disagree == 0)
    return report


def run_suite(name: str, rule: QuadratureRule = DEFAULT_RULE) -> OracleReport:
    """Run one named suite or ``all``."""
    runners = {
        "truncated_gaussian": lambda: suite_truncated_gaussian(rule),
        "monotonicity": lambda: suite_monotonicity(rule),
        "counterexample": lambda: suite_counterexample(rule),
        "mcv_equivalence": suite_mcv_equivalence,
    }
    if name == "all":
        report = OracleReport("all")
        for suite in SUITES:
            report.extend(runners[suite]())
    elif name in runners:
        report = runners[name]()
    else:
        raise ValueError(f"unknown oracle suite '{name}' (choose from {', '.join(SUITES + ('all',))})")
    logger.info(f"Oracle suite {name}: {sum(r.passed for r in report.rows)}/{len(report.rows)} passed")
    return report


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    print(run_suite("counterexample").to_text())
