"""
Experiment runner behind the CLI subcommands.

Each command simulates what the config asks for, writes CSV/SVG artifacts
and a run.manifest into the output directory, and returns a CommandResult
whose exit code follows the failure classes: 0 success, 2 config,
3 numerical blow-up, 4 order violation, 5 oracle failure.
"""

from __future__ import annotations

import csv
import logging
import platform
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import scipy
import yaml

from . import __version__
from .coefficients import CoefficientSet, ModelPair, Relation, validate_assumption_II
from .config import ConfigError, ExperimentConfig
from .convergence import run_ladder
from .measures import (
    OrderVerdict,
    check_mcv,
    default_strike_grid,
    stop_loss_curve,
    paired_stop_loss_tolerance,
    stop_loss_tolerance,
    write_measure_csv,
)
from .noise import generate_noise
from .oracles import run_suite
from .paths import (
    FunctionalComparison,
    FunctionalKind,
    compare_curves,
    estimate_curve,
    paired_stderrs,
    spot_check_convexity,
)
from .plotting import write_svg
from .scheme import ParticleEnsemble, simulate, simulate_common, simulate_coupled

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_ORDER = 4
EXIT_ORACLE = 5

MANIFEST_NAME = "run.manifest"


@dataclass
class CommandResult:
    """Outcome of one subcommand."""

    command: str
    exit_code: int = EXIT_OK
    files: List[Path] = field(default_factory=list)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.exit_code == EXIT_OK


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


class ExperimentRunner:
    """Runs the experiments of one validated configuration."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.out_dir = Path(config.outputs.directory)

    # ------------------------------------------------------------------
    # helpers

    def _path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    def _h_checks(self, models: Dict[str, CoefficientSet], scheme=None) -> Dict[str, Any]:
        scheme = scheme or self.config.scheme
        checks = {}
        for name, model in models.items():
            max_h = scheme.max_step(model)
            checks[name] = {
                "h": scheme.step_h,
                "max_h": None if max_h == float("inf") else max_h,
                "satisfied": scheme.check_step_size(model),
                "override": scheme.allow_large_h,
            }
        return checks

    def write_manifest(self, result: CommandResult, models: Dict[str, CoefficientSet],
                       extra: Optional[Dict[str, Any]] = None) -> Path:
        """Config echo, seed, versions and the step-size check, as YAML."""
        scheme = self.config.scheme
        manifest = {
            "tool": "mcv-bounds",
            "version": __version__,
            "command": result.command,
            "exit_code": result.exit_code,
            "message": result.message,
            "config_source": str(self.config.source) if self.config.source else None,
            "seed": scheme.master_seed,
            "scheme": {
                "horizon_T": scheme.horizon_T,
                "steps_M": scheme.steps_M,
                "particles_N": scheme.particles_N,
                "p_exponent": scheme.p_exponent,
                "truncation": scheme.truncation.value,
                "allow_large_h": scheme.allow_large_h,
                "threads": scheme.threads,
            },
            "models": {name: model.label for name, model in models.items()},
            "step_size_check": self._h_checks(models),
            "versions": {
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "pyyaml": yaml.__version__,
            },
            "config": self.config.document,
            "files": sorted(p.name for p in result.files),
        }
        if extra:
            manifest.update(extra)
        path = self._path(MANIFEST_NAME)
        with open(path, "w") as f:
            yaml.safe_dump(manifest, f, sort_keys=False, default_flow_style=False)
        return path

    def _finish(self, result: CommandResult, models: Dict[str, CoefficientSet],
                extra: Optional[Dict[str, Any]] = None) -> CommandResult:
        result.files.append(self._path(MANIFEST_NAME))
        self.write_manifest(result, models, extra)
        return result

    def _write_curves(self, prefix: str, curves, title: str) -> List[Path]:
        files = []
        for curve in curves:
            files.append(curve.to_csv(self._path(f"{prefix}_{_slug(curve.functional)}_{_slug(curve.model_label)}.csv")))
        if self.config.outputs.svg and curves:
            files.append(write_svg(self._path(f"{prefix}_{_slug(curves[0].functional)}.svg"), curves, title,
                                   ylabel=curves[0].functional))
        return files

    # ------------------------------------------------------------------
    # commands

    def run_simulate(self) -> CommandResult:
        """Simulate every declared model on one shared noise grid; write ensembles and marginals."""
        cfg = self.config
        if not cfg.models:
            raise cfg.error("declare at least one model to simulate", "models")
        result = CommandResult("simulate")
        scheme = cfg.scheme
        models = {name: entry.model for name, entry in cfg.models.items()}
        for model in models.values():
            scheme.enforce_step_size(model)

        noise = generate_noise(scheme.master_seed, scheme.particles_N, scheme.steps_M, scheme.threads)
        steps = cfg.outputs.marginal_steps or (scheme.steps_M,)
        cap = cfg.outputs.ensemble_particles
        if cap is not None and cap < scheme.particles_N:
            logger.info(f"ensemble CSVs hold the first {cap} of {scheme.particles_N} particles (outputs.ensemble_particles)")
        for name, model in models.items():
            ens = simulate(model, cfg.initial_measure(name), scheme, noise)
            result.files.append(ens.to_csv(self._path(f"{_slug(name)}_ensemble.csv"),
                                           max_particles=cap))
            for m in steps:
                result.files.append(write_measure_csv(ens.marginal(m), self._path(f"{_slug(name)}_marginal_{m}.csv")))
            logger.info(f"{name}: E X_T = {ens.marginal(-1).mean:.6g}")

        result.message = f"simulated {len(models)} model(s)"
        written = scheme.particles_N if cap is None else min(cap, scheme.particles_N)
        return self._finish(result, models, {"ensemble_particles": written})

    def run_bound_check(self) -> CommandResult:
        """
        Coupled lower/mid/upper simulation; every functional curve must be
        ordered lower <= mid <= upper at every grid time up to z paired stderr,
        and strictly so (margin above z paired stderr) from strict_after on.
        """
        cfg = self.config
        bc = cfg.bound_check
        models = {
            "lower": cfg.model(bc.lower, "bound_check.lower"),
            "mid": cfg.model(bc.mid, "bound_check.mid"),
            "upper": cfg.model(bc.upper, "bound_check.upper"),
        }
        result = CommandResult("bound-check")
        initial = cfg.initial_measure(bc.mid)
        ensembles = simulate_common(list(models.values()), [initial] * 3, cfg.scheme)
        lower, mid, upper = ensembles

        rows = []
        failures: List[FunctionalComparison] = []
        loose: List[FunctionalComparison] = []
        # identical paths have nothing to separate
        same_paths = {name for name, a, b in (("lower<=mid", lower, mid), ("mid<=upper", mid, upper))
                      if np.array_equal(a.states, b.states)}
        for name in sorted(same_paths):
            logger.info(f"bound-check: {name} paths coincide, strictness not required")
        for f in cfg.functionals:
            if f.kind is FunctionalKind.USER_COMPOSITE:
                spot_check_convexity(f, mid, seed=cfg.scheme.master_seed)
            curves = [estimate_curve(ens, f) for ens in ensembles]
            result.files.extend(self._write_curves("bound", curves, f"{f.name}: {bc.relation} check"))
            for pair_name, a, b in (("lower<=mid", 0, 1), ("mid<=upper", 1, 2)):
                paired = paired_stderrs(ensembles[a], ensembles[b], f)
                enforce = bc.strict_after is not None and pair_name not in same_paths
                for c in compare_curves(curves[a], curves[b], bc.z, paired):
                    rows.append((f.name, pair_name, c))
                    if not c.ordered:
                        failures.append(c)
                    elif enforce and c.t >= bc.strict_after - 1e-12 and not c.strict:
                        loose.append(c)

        report = self._path("bound_report.csv")
        with open(report, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["functional", "pair", "t", "lower", "upper", "margin", "slack", "ordered", "strict"])
            for name, pair_name, c in rows:
                writer.writerow([name, pair_name, f"{c.t:.17g}", f"{c.lower.value:.17g}", f"{c.upper.value:.17g}",
                                 f"{c.margin:.17g}", f"{c.slack:.17g}", str(c.ordered).lower(), str(c.strict).lower()])
        result.files.append(report)

        if failures:
            worst = min(failures, key=lambda c: c.margin + c.slack)
            result.exit_code = EXIT_ORDER
            result.message = f"ordering violated at t={worst.t:g} (margin {worst.margin:.4g}, slack {worst.slack:.4g})"
            logger.error(f"bound-check: {result.message}")
        elif loose:
            worst = min(loose, key=lambda c: c.margin - c.slack)
            result.exit_code = EXIT_ORDER
            result.message = (f"{len(loose)} comparison(s) not strict from t={bc.strict_after:g} on; "
                              f"worst at t={worst.t:g} (margin {worst.margin:.4g}, slack {worst.slack:.4g})")
            logger.error(f"bound-check: {result.message}")
        else:
            result.message = f"{lower.model_label} <= {mid.model_label} <= {upper.model_label} at every grid time"
            logger.info(f"bound-check: {result.message}")
        return self._finish(result, models, {"relation": bc.relation, "z": bc.z, "strict_after": bc.strict_after})

    def order_verdicts(self, lower: ParticleEnsemble, upper: ParticleEnsemble) -> List[OrderVerdict]:
        """
        check_mcv on every pair of marginals with a per-strike tolerance of z
        stderr, paired particle by particle when both ensembles share noise.
        """
        oc = self.config.order_check
        fixed = self.config.strike_grid()
        verdicts = []
        for m in range(lower.config.steps_M + 1):
            mu, nu = lower.marginal(m), upper.marginal(m)
            strikes = fixed if fixed is not None else default_strike_grid(mu, nu, oc.strike_count)
            if lower.coupled_with(upper):
                tolerance = paired_stop_loss_tolerance(lower.states[:, m], upper.states[:, m], strikes, oc.z)
            else:
                tolerance = stop_loss_tolerance(mu, nu, strikes, oc.z)
            verdicts.append(check_mcv(mu, nu, strikes, tolerance))
        return verdicts

    def run_order_check(self) -> CommandResult:
        """Marginal (and functional) order between the coupled pair at every step."""
        cfg = self.config
        oc = cfg.order_check
        pair = cfg.order_pair()
        models = {"lower": pair.lower, "upper": pair.upper}
        result = CommandResult("order-check")

        init_lower = cfg.initial_measure(oc.lower)
        init_upper = cfg.initial_measure(oc.upper)
        strikes0 = cfg.strike_grid()
        if strikes0 is None:
            strikes0 = default_strike_grid(init_lower, init_upper, oc.strike_count)
        start = check_mcv(init_lower, init_upper, strikes0, 0.0)
        if not start.dominated:
            raise ConfigError(
                f"initial laws are not ordered (margin {start.worst_margin:.4g} at k={start.worst_strike:.4g})",
                "order_check", cfg.line_of("order_check"),
            )

        lower, upper = simulate_coupled(pair, init_lower, init_upper, cfg.scheme)
        verdicts = self.order_verdicts(lower, upper)
        times = cfg.scheme.times

        table = self._path("order_verdicts.csv")
        with open(table, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "t", "dominated", "worst_margin", "worst_strike", "tolerance_used", "mean_gap"])
            for m, v in enumerate(verdicts):
                writer.writerow([m, f"{times[m]:.17g}", str(v.dominated).lower(), f"{v.worst_margin:.17g}",
                                 f"{v.worst_strike:.17g}", f"{v.tolerance_used:.17g}", f"{v.mean_gap:.17g}"])
        result.files.append(table)

        terminal_strikes = cfg.strike_grid()
        if terminal_strikes is None:
            terminal_strikes = default_strike_grid(lower.marginal(-1), upper.marginal(-1), oc.strike_count)
        for label, ens in (("lower", lower), ("upper", upper)):
            curve = stop_loss_curve(ens.marginal(-1), terminal_strikes)
            result.files.append(curve.to_csv(self._path(f"order_stop_loss_{label}.csv")))

        functional_failures: List[FunctionalComparison] = []
        for f in cfg.functionals:
            curves = [estimate_curve(lower, f), estimate_curve(upper, f)]
            result.files.extend(self._write_curves("order", curves, f"{f.name}: {pair.lower.label} vs {pair.upper.label}"))
            paired = paired_stderrs(lower, upper, f)
            functional_failures.extend(c for c in compare_curves(curves[0], curves[1], oc.z, paired) if not c.ordered)

        violated = [(m, v) for m, v in enumerate(verdicts) if not v.dominated]
        direction = "X <= Y" if Relation(pair.claimed_relation) is Relation.ASSUMPTION_II else "Y <= X (symmetric setting)"
        if violated:
            m, v = min(violated, key=lambda mv: mv[1].worst_margin + mv[1].tolerance_used)
            result.exit_code = EXIT_ORDER
            result.message = (f"not dominated at step {m} (worst strike {v.worst_strike:.4g}, "
                              f"margin {v.worst_margin:.4g}, tolerance {v.tolerance_used:.4g})")
            logger.error(f"order-check: {result.message}")
        elif functional_failures:
            worst = min(functional_failures, key=lambda c: c.margin + c.slack)
            result.exit_code = EXIT_ORDER
            result.message = f"functional order violated at t={worst.t:g} (margin {worst.margin:.4g})"
            logger.error(f"order-check: {result.message}")
        else:
            result.message = f"{pair.lower.label} <=_mcv {pair.upper.label} at all {len(verdicts)} marginals ({direction})"
            logger.info(f"order-check: {result.message}")
        return self._finish(result, models, {"relation": Relation(pair.claimed_relation).value, "z": oc.z})

    def _validation_pairs(self) -> List[tuple]:
        cfg = self.config
        pairs = []
        if cfg.order_check.lower and cfg.order_check.upper:
            pairs.append(("order_check", cfg.order_pair()))
        bc = cfg.bound_check
        if bc.lower and bc.mid and bc.upper:
            low = cfg.model(bc.lower, "bound_check.lower")
            mid = cfg.model(bc.mid, "bound_check.mid")
            up = cfg.model(bc.upper, "bound_check.upper")
            if bc.relation == "bounding":
                # regular outer members on both sides
                pairs.append(("bound_lower", ModelPair(low, mid, Relation.ASSUMPTION_II)))
                pairs.append(("bound_upper", ModelPair(mid, up, Relation.ASSUMPTION_II_PRIME)))
            else:
                # the middle model is the regular one
                pairs.append(("bound_lower", ModelPair(low, mid, Relation.ASSUMPTION_II_PRIME)))
                pairs.append(("bound_upper", ModelPair(mid, up, Relation.ASSUMPTION_II)))
        if not pairs:
            raise ConfigError("no model pair to validate (set order_check or bound_check models)", "order_check")
        return pairs

    def run_validate(self) -> CommandResult:
        """Randomized probe of the ordering/convexity assumptions of the configured pairs."""
        cfg = self.config
        oc = cfg.order_check
        result = CommandResult("validate")
        models: Dict[str, CoefficientSet] = {}
        found = 0
        summary = {}
        for name, pair in self._validation_pairs():
            report = validate_assumption_II(
                pair, oc.probes, horizon=cfg.scheme.horizon_T, radius=oc.radius, seed=cfg.scheme.master_seed
            )
            result.files.append(report.to_csv(self._path(f"probe_{name}.csv")))
            models[f"{name}.lower"] = pair.lower
            models[f"{name}.upper"] = pair.upper
            summary[name] = {"relation": report.relation.value, "violations": report.counts()}
            found += len(report.violations)
        if found:
            result.exit_code = EXIT_ORDER
            result.message = f"{found} assumption violation(s) found"
            logger.error(f"validate: {result.message}")
        else:
            result.message = "no assumption violations found"
        return self._finish(result, models, {"probes": oc.probes, "probe_summary": summary})

    def run_oracle(self, suite: str = "all") -> CommandResult:
        result = CommandResult(f"oracle {suite}")
        try:
            report = run_suite(suite)
        except ValueError as e:
            raise ConfigError(str(e), "suite") from None
        text = self._path(f"oracle_{suite}.txt")
        text.write_text(report.to_text())
        result.files.extend([text, report.to_csv(self._path(f"oracle_{suite}.csv"))])
        failed = [r for r in report.rows if not r.passed]
        if failed:
            result.exit_code = EXIT_ORACLE
            result.message = f"{len(failed)} oracle check(s) failed, first: {failed[0].check} [{failed[0].input}]"
            logger.error(f"oracle: {result.message}")
        else:
            result.message = f"{len(report.rows)} oracle checks passed"
        return self._finish(result, {})

    def run_convergence(self) -> CommandResult:
        """Refinement ladder on one model; a low slope is reported, not fatal."""
        cfg = self.config
        cv = cfg.convergence
        model = cfg.model(cv.model, "convergence.model")
        scheme = cfg.scheme
        if cv.particles_N is not None:
            scheme = replace(scheme, particles_N=cv.particles_N)
        result = CommandResult("convergence")
        initial = cfg.initial_measure(cv.model, scheme.particles_N)
        report = run_ladder(model, initial, scheme, cv.ladder, cv.r_exponent, cv.truncation, cv.min_slope)
        result.files.append(report.to_csv(self._path("convergence.csv")))
        result.files.append(report.fit_to_csv(self._path("convergence_fit.csv")))
        if report.zero_error:
            result.message = "zero strong error on every level"
        else:
            result.message = f"strong slope {report.strong_slope:.3f} (threshold {cv.min_slope:g})"
        return self._finish(result, {"model": model}, {
            "ladder": list(cv.ladder),
            "strong_reference": report.strong_reference,
            "strong_slope": None if report.zero_error else float(report.strong_slope),
            "rate_ok": report.rate_ok,
        })
