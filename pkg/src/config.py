"""
Experiment configuration: a YAML document with sections models, scheme,
functionals, order_check, bound_check, convergence and outputs.

Precedence is CLI flags > environment (.env) > document > defaults.
Every problem is reported as a ConfigError naming the field and, when the
document provides it, the line.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml
from dotenv import load_dotenv
from scipy import stats

from .coefficients import (
    CoefficientSet,
    ModelPair,
    Relation,
    UnknownModelError,
    custom_model,
    parse_model_ref,
)
from .convergence import DEFAULT_LADDER, DEFAULT_MIN_SLOPE, validate_ladder
from .expressions import ExpressionError
from .measures import DEFAULT_STRIKE_COUNT, DEFAULT_Z, EmpiricalMeasure
from .paths import FunctionalKind, FunctionalSpec
from .scheme import SchemeConfig, Truncation

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).parent.parent / "config" / "config.yaml"
DEFAULT_OUT_DIR = "output"
DEFAULT_ENSEMBLE_PARTICLES = 1000
DEFAULT_PROBES = 10_000
DEFAULT_STRICT_AFTER = 0.2

SECTIONS = ("models", "scheme", "functionals", "order_check", "bound_check", "convergence", "outputs")
SCHEME_KEYS = ("horizon_T", "steps_M", "particles_N", "p_exponent", "master_seed",
               "truncation", "allow_large_h", "threads", "initial")
MODEL_KEYS = ("builtin", "drift", "diffusion", "lip_x_drift", "lip_x_diffusion",
              "lip_measure", "holder_t", "state_floor", "initial")
FUNCTIONAL_KEYS = ("kind", "name", "expression", "monotone_convex_declared")
ORDER_KEYS = ("lower", "upper", "relation", "z", "strikes", "probes", "radius")
BOUND_KEYS = ("lower", "mid", "upper", "relation", "z", "strict_after")
CONVERGENCE_KEYS = ("model", "ladder", "particles_N", "truncation", "r_exponent", "min_slope")
OUTPUT_KEYS = ("directory", "ensemble_particles", "svg", "marginal_steps")

BOUND_RELATIONS = {"bounding": Relation.ASSUMPTION_II, "partitioning": Relation.ASSUMPTION_II_PRIME}


class ConfigError(ValueError):
    """Invalid experiment configuration."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.field = field
        self.line = line

    def __str__(self) -> str:
        where = self.field or "config"
        if self.line is not None:
            where += f" (line {self.line})"
        return f"{where}: {self.message}"


@dataclass(frozen=True)
class InitialSpec:
    """Initial law: a Dirac mass, or a normal/uniform law sampled at quantile midpoints."""

    distribution: str = "dirac"
    value: float = 1.0
    mean: float = 0.0
    std: float = 1.0
    low: float = 0.0
    high: float = 1.0

    def measure(self, n: int) -> EmpiricalMeasure:
        if self.distribution == "dirac":
            return EmpiricalMeasure.dirac(self.value, n)
        levels = (np.arange(n) + 0.5) / n
        if self.distribution == "normal":
            return EmpiricalMeasure(stats.norm.ppf(levels, loc=self.mean, scale=self.std))
        return EmpiricalMeasure(stats.uniform.ppf(levels, loc=self.low, scale=self.high - self.low))

    def describe(self) -> str:
        if self.distribution == "dirac":
            return f"dirac({self.value:g})"
        if self.distribution == "normal":
            return f"normal({self.mean:g}, {self.std:g})"
        return f"uniform({self.low:g}, {self.high:g})"


@dataclass(frozen=True)
class ModelEntry:
    model: CoefficientSet
    initial: Optional[InitialSpec] = None


@dataclass(frozen=True)
class OrderCheckSettings:
    lower: Optional[str] = None
    upper: Optional[str] = None
    relation: Relation = Relation.ASSUMPTION_II
    z: float = DEFAULT_Z
    strike_count: int = DEFAULT_STRIKE_COUNT
    strikes: Optional[Tuple[float, ...]] = None
    probes: int = DEFAULT_PROBES
    radius: float = 10.0


@dataclass(frozen=True)
class BoundCheckSettings:
    lower: Optional[str] = None
    mid: Optional[str] = None
    upper: Optional[str] = None
    relation: str = "bounding"
    z: float = DEFAULT_Z
    strict_after: Optional[float] = DEFAULT_STRICT_AFTER  # None: ordering only, no strictness

    @property
    def assumption(self) -> Relation:
        return BOUND_RELATIONS[self.relation]


@dataclass(frozen=True)
class ConvergenceSettings:
    model: Optional[str] = None
    ladder: Tuple[int, ...] = DEFAULT_LADDER
    particles_N: Optional[int] = None
    truncation: Truncation = Truncation.REGULAR
    r_exponent: float = 2.0
    min_slope: float = DEFAULT_MIN_SLOPE


@dataclass(frozen=True)
class OutputSettings:
    directory: Path = Path(DEFAULT_OUT_DIR)
    ensemble_particles: Optional[int] = DEFAULT_ENSEMBLE_PARTICLES
    svg: bool = True
    marginal_steps: Optional[Tuple[int, ...]] = None


@dataclass
class ExperimentConfig:
    """A validated experiment document."""

    scheme: SchemeConfig
    initial: InitialSpec = field(default_factory=InitialSpec)
    models: Dict[str, ModelEntry] = field(default_factory=dict)
    functionals: List[FunctionalSpec] = field(
        default_factory=lambda: [FunctionalSpec(FunctionalKind.TERMINAL_CALL_SQUARE)]
    )
    order_check: OrderCheckSettings = field(default_factory=OrderCheckSettings)
    bound_check: BoundCheckSettings = field(default_factory=BoundCheckSettings)
    convergence: ConvergenceSettings = field(default_factory=ConvergenceSettings)
    outputs: OutputSettings = field(default_factory=OutputSettings)
    source: Optional[Path] = None
    document: Dict[str, Any] = field(default_factory=dict)
    lines: Dict[str, int] = field(default_factory=dict, repr=False)

    def line_of(self, field_path: str) -> Optional[int]:
        return self.lines.get(field_path)

    def error(self, message: str, field_path: str) -> ConfigError:
        return ConfigError(message, field_path, self.line_of(field_path))

    def model(self, ref: Optional[str], field_path: str) -> CoefficientSet:
        """A declared model by name, or a built-in reference such as 'gbm(0.05, 1)'."""
        if not ref:
            raise self.error("a model is required", field_path)
        if ref in self.models:
            return self.models[ref].model
        try:
            return parse_model_ref(ref)
        except (UnknownModelError, ValueError) as e:
            raise self.error(str(e), field_path) from None

    def initial_for(self, ref: str) -> InitialSpec:
        entry = self.models.get(ref)
        if entry is not None and entry.initial is not None:
            return entry.initial
        return self.initial

    def initial_measure(self, ref: str, n: Optional[int] = None) -> EmpiricalMeasure:
        return self.initial_for(ref).measure(self.scheme.particles_N if n is None else n)

    def order_pair(self) -> ModelPair:
        oc = self.order_check
        return ModelPair(
            self.model(oc.lower, "order_check.lower"),
            self.model(oc.upper, "order_check.upper"),
            oc.relation,
        )

    def strike_grid(self) -> Optional[np.ndarray]:
        if self.order_check.strikes is None:
            return None
        return np.asarray(self.order_check.strikes, dtype=float)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _line_index(node: yaml.Node, prefix: str = "", out: Optional[Dict[str, int]] = None) -> Dict[str, int]:
    """Map dotted field paths to 1-based source lines."""
    if out is None:
        out = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
            out[path] = key_node.start_mark.line + 1
            _line_index(value_node, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            path = f"{prefix}[{i}]"
            out[path] = item.start_mark.line + 1
            _line_index(item, path, out)
    return out


class _Reader:
    """Typed access to one mapping of the document with path-aware errors."""

    def __init__(self, data: Any, path: str, lines: Dict[str, int], allowed: Tuple[str, ...]):
        self.path = path
        self.lines = lines
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise self.error("must be a mapping", path)
        unknown = [k for k in data if k not in allowed]
        if unknown:
            key = f"{path}.{unknown[0]}" if path else str(unknown[0])
            raise self.error(f"unknown key (allowed: {', '.join(allowed)})", key)
        self.data = data

    def error(self, message: str, field_path: str) -> ConfigError:
        return ConfigError(message, field_path, self.lines.get(field_path))

    def field(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def has(self, key: str) -> bool:
        return key in self.data and self.data[key] is not None

    def raw(self, key: str, default: Any = None) -> Any:
        return self.data.get(key, default)

    def number(self, key: str, default: Optional[float] = None, minimum: Optional[float] = None) -> Optional[float]:
        value = self.data.get(key, default)
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(f"expected a number, got {value!r}", self.field(key))
        if minimum is not None and value < minimum:
            raise self.error(f"must be >= {minimum}", self.field(key))
        return float(value)

    def integer(self, key: str, default: Optional[int] = None, minimum: Optional[int] = None) -> Optional[int]:
        value = self.data.get(key, default)
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.error(f"expected an integer, got {value!r}", self.field(key))
        if minimum is not None and value < minimum:
            raise self.error(f"must be >= {minimum}", self.field(key))
        return int(value)

    def boolean(self, key: str, default: bool) -> bool:
        value = self.data.get(key, default)
        if not isinstance(value, bool):
            raise self.error(f"expected true or false, got {value!r}", self.field(key))
        return value

    def string(self, key: str, default: Optional[str] = None, choices: Optional[Tuple[str, ...]] = None) -> Optional[str]:
        value = self.data.get(key, default)
        if value is None:
            return None
        if not isinstance(value, str):
            raise self.error(f"expected a string, got {value!r}", self.field(key))
        if choices is not None and value not in choices:
            raise self.error(f"must be one of {', '.join(choices)}", self.field(key))
        return value


def _parse_initial(value: Any, path: str, lines: Dict[str, int]) -> InitialSpec:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return InitialSpec("dirac", value=float(value))
    reader = _Reader(value, path, lines, ("distribution", "value", "mean", "std", "low", "high"))
    dist = reader.string("distribution", "dirac", ("dirac", "normal", "uniform"))
    if dist == "dirac":
        return InitialSpec("dirac", value=reader.number("value", 1.0))
    if dist == "normal":
        std = reader.number("std", 1.0)
        if std <= 0:
            raise reader.error("must be > 0", reader.field("std"))
        return InitialSpec("normal", mean=reader.number("mean", 0.0), std=std)
    low, high = reader.number("low", 0.0), reader.number("high", 1.0)
    if not low < high:
        raise reader.error("low must be < high", reader.field("high"))
    return InitialSpec("uniform", low=low, high=high)


def _parse_model(name: str, value: Any, lines: Dict[str, int]) -> ModelEntry:
    path = f"models.{name}"
    if isinstance(value, str):
        value = {"builtin": value}
    reader = _Reader(value, path, lines, MODEL_KEYS)
    initial = _parse_initial(reader.raw("initial"), reader.field("initial"), lines) if reader.has("initial") else None

    if reader.has("builtin"):
        extra = [k for k in ("drift", "diffusion") if reader.has(k)]
        if extra:
            raise reader.error("builtin models take no expressions", reader.field(extra[0]))
        try:
            model = parse_model_ref(reader.string("builtin"))
        except (UnknownModelError, ValueError) as e:
            raise reader.error(str(e), reader.field("builtin")) from None
        return ModelEntry(replace(model, label=name), initial)

    for key in ("drift", "diffusion", "lip_x_drift", "lip_x_diffusion"):
        if not reader.has(key):
            raise reader.error("required for custom models", reader.field(key))
    try:
        model = custom_model(
            label=name,
            drift=reader.string("drift"),
            diffusion=reader.string("diffusion"),
            lip_x_drift=reader.number("lip_x_drift", minimum=0),
            lip_x_diffusion=reader.number("lip_x_diffusion"),
            lip_measure=reader.number("lip_measure", 0.0, minimum=0),
            holder_t=reader.number("holder_t", 1.0),
            state_floor=reader.number("state_floor"),
        )
    except ExpressionError as e:
        raise reader.error(str(e), path) from None
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise reader.error(str(e), path) from None
    return ModelEntry(model, initial)


def _parse_functionals(value: Any, lines: Dict[str, int]) -> List[FunctionalSpec]:
    if value is None:
        return [FunctionalSpec(FunctionalKind.TERMINAL_CALL_SQUARE)]
    if not isinstance(value, list) or not value:
        raise ConfigError("must be a nonempty list", "functionals", lines.get("functionals"))
    kinds = tuple(k.value for k in FunctionalKind)
    specs = []
    for i, item in enumerate(value):
        path = f"functionals[{i}]"
        if isinstance(item, str):
            item = {"kind": item}
        reader = _Reader(item, path, lines, FUNCTIONAL_KEYS)
        kind = reader.string("kind", choices=kinds)
        if kind is None:
            raise reader.error("required", reader.field("kind"))
        try:
            specs.append(FunctionalSpec(
                kind=FunctionalKind(kind),
                monotone_convex_declared=reader.boolean("monotone_convex_declared", True),
                expression=reader.string("expression"),
                name=reader.string("name"),
            ))
        except ValueError as e:
            raise reader.error(str(e), path) from None
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError("functional names must be unique", "functionals", lines.get("functionals"))
    return specs


def _env_int(name: str) -> Optional[int]:
    value = os.getenv(name)
    if value in (None, ""):
        return None
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"expected an integer, got {value!r}", f"env.{name}") from None


def parse_config(text: str, source: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    Validate a YAML experiment document.

    Args:
        text: document contents
        source: where it came from (for the manifest)
        overrides: CLI values (seed, threads, allow_large_h, out); None entries are ignored

    Returns:
        ExperimentConfig
    """
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    try:
        root = yaml.compose(text)
        document = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(e, 'problem', e)}", None,
                          mark.line + 1 if mark is not None else None) from None
    lines = _line_index(root) if root is not None else {}
    top = _Reader(document, "", lines, SECTIONS)

    # scheme
    sch = _Reader(top.raw("scheme"), "scheme", lines, SCHEME_KEYS)
    threads = overrides.get("threads", _env_int("MCV_THREADS"))
    try:
        scheme = SchemeConfig(
            horizon_T=sch.number("horizon_T", 1.0),
            steps_M=sch.integer("steps_M", 100, minimum=1),
            particles_N=sch.integer("particles_N", 100_000, minimum=2),
            p_exponent=sch.number("p_exponent", 2.0, minimum=2),
            master_seed=overrides.get("seed", sch.integer("master_seed", 0, minimum=0)),
            truncation=Truncation(sch.string("truncation", "truncated", tuple(t.value for t in Truncation))),
            allow_large_h=overrides.get("allow_large_h", sch.boolean("allow_large_h", False)),
            threads=threads if threads is not None else sch.integer("threads", 1, minimum=1),
        )
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e), "scheme", lines.get("scheme")) from None
    initial = _parse_initial(sch.raw("initial", 1.0), "scheme.initial", lines)

    # models
    models_raw = top.raw("models") or {}
    if not isinstance(models_raw, dict):
        raise ConfigError("must be a mapping", "models", lines.get("models"))
    models = {str(name): _parse_model(str(name), value, lines) for name, value in models_raw.items()}

    functionals = _parse_functionals(top.raw("functionals"), lines)

    # order_check
    oc = _Reader(top.raw("order_check"), "order_check", lines, ORDER_KEYS)
    strikes_raw = oc.raw("strikes")
    strike_count, strikes = DEFAULT_STRIKE_COUNT, None
    if isinstance(strikes_raw, list):
        if not strikes_raw or not all(isinstance(s, (int, float)) and not isinstance(s, bool) for s in strikes_raw):
            raise oc.error("must be a nonempty list of numbers", "order_check.strikes")
        if any(b < a for a, b in zip(strikes_raw, strikes_raw[1:])):
            raise oc.error("strikes must be ascending", "order_check.strikes")
        strikes = tuple(float(s) for s in strikes_raw)
    elif strikes_raw is not None:
        strike_count = _Reader(strikes_raw, "order_check.strikes", lines, ("count",)).integer(
            "count", DEFAULT_STRIKE_COUNT, minimum=1)
    order_check = OrderCheckSettings(
        lower=oc.string("lower"),
        upper=oc.string("upper"),
        relation=Relation(oc.string("relation", "assumption_II", tuple(r.value for r in Relation))),
        z=oc.number("z", DEFAULT_Z, minimum=0),
        strike_count=strike_count,
        strikes=strikes,
        probes=oc.integer("probes", DEFAULT_PROBES, minimum=100),
        radius=oc.number("radius", 10.0, minimum=0),
    )

    bc = _Reader(top.raw("bound_check"), "bound_check", lines, BOUND_KEYS)
    bound_check = BoundCheckSettings(
        lower=bc.string("lower"),
        mid=bc.string("mid"),
        upper=bc.string("upper"),
        relation=bc.string("relation", "bounding", tuple(BOUND_RELATIONS)),
        z=bc.number("z", DEFAULT_Z, minimum=0),
        strict_after=bc.number("strict_after", DEFAULT_STRICT_AFTER, minimum=0),
    )

    cv = _Reader(top.raw("convergence"), "convergence", lines, CONVERGENCE_KEYS)
    ladder_raw = cv.raw("ladder", list(DEFAULT_LADDER))
    if not isinstance(ladder_raw, list) or not all(isinstance(m, int) and not isinstance(m, bool) for m in ladder_raw):
        raise cv.error("must be a list of integers", "convergence.ladder")
    try:
        ladder = tuple(validate_ladder(ladder_raw))
    except ValueError as e:
        raise cv.error(str(e), "convergence.ladder") from None
    convergence = ConvergenceSettings(
        model=cv.string("model"),
        ladder=ladder,
        particles_N=cv.integer("particles_N", minimum=2),
        truncation=Truncation(cv.string("truncation", "regular", tuple(t.value for t in Truncation))),
        r_exponent=cv.number("r_exponent", 2.0, minimum=1),
        min_slope=cv.number("min_slope", DEFAULT_MIN_SLOPE),
    )

    out = _Reader(top.raw("outputs"), "outputs", lines, OUTPUT_KEYS)
    directory = overrides.get("out") or os.getenv("MCV_OUT_DIR") or out.string("directory", DEFAULT_OUT_DIR)
    steps_raw = out.raw("marginal_steps")
    marginal_steps = None
    if steps_raw is not None:
        if not isinstance(steps_raw, list) or not all(isinstance(m, int) and 0 <= m <= scheme.steps_M for m in steps_raw):
            raise out.error(f"must be a list of steps in 0..{scheme.steps_M}", "outputs.marginal_steps")
        marginal_steps = tuple(steps_raw)
    outputs = OutputSettings(
        directory=Path(directory),
        ensemble_particles=out.integer("ensemble_particles", DEFAULT_ENSEMBLE_PARTICLES, minimum=1),
        svg=out.boolean("svg", True),
        marginal_steps=marginal_steps,
    )

    config = ExperimentConfig(
        scheme=scheme,
        initial=initial,
        models=models,
        functionals=functionals,
        order_check=order_check,
        bound_check=bound_check,
        convergence=convergence,
        outputs=outputs,
        source=source,
        document=document or {},
        lines=lines,
    )

    # referenced models must resolve
    for path, ref in (
        ("order_check.lower", order_check.lower), ("order_check.upper", order_check.upper),
        ("bound_check.lower", bound_check.lower), ("bound_check.mid", bound_check.mid),
        ("bound_check.upper", bound_check.upper), ("convergence.model", convergence.model),
    ):
        if ref is not None:
            config.model(ref, path)
    return config


def load_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Load configuration from YAML (default config/config.yaml) and the environment."""
    load_dotenv()
    path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror or e}", str(path)) from None
    config = parse_config(text, source=path, overrides=overrides)
    logger.info(
        f"Loaded config {path}: N={config.scheme.particles_N} M={config.scheme.steps_M} "
        f"T={config.scheme.horizon_T:g} seed={config.scheme.master_seed}"
    )
    return config
