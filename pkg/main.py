#!/usr/bin/env python3
"""
mcv-bounds - CLI Entry Point

Simulates McKean-Vlasov models with the truncated Euler particle scheme and
certifies monotone convex ordering between them.

Exit codes: 0 success, 2 configuration error, 3 numerical blow-up,
4 order violation, 5 oracle failure.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent))

from src.config import ConfigError, load_config
from src.experiments import EXIT_CONFIG, EXIT_NUMERIC, EXIT_ORACLE, ExperimentRunner
from src.oracles import SUITES, QuadratureError
from src.scheme import SchemeBlowUp, StepSizeError

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_FILE = "mcv_bounds.log"

logger = logging.getLogger("mcv_bounds")


def setup_logging(verbose: bool = False):
    """Configure logging."""
    level = logging.DEBUG if verbose else logging.INFO
    root_logger = logging.getLogger()
    for handler in [h for h in root_logger.handlers if getattr(h, "_mcv_bounds", False)]:
        root_logger.removeHandler(handler)
        handler.close()

    # Console handler
    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(logging.Formatter(LOG_FORMAT))

    # File handler
    log_dir = Path(os.getenv("MCV_LOG_DIR") or Path(__file__).parent / "logs")
    log_dir.mkdir(parents=True, exist_ok=True)
    file_handler = logging.FileHandler(log_dir / LOG_FILE)
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT))

    for handler in (console_handler, file_handler):
        handler._mcv_bounds = True
        root_logger.addHandler(handler)
    root_logger.setLevel(logging.DEBUG)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="Experiment YAML (default config/config.yaml)")
    common.add_argument("--seed", type=int, default=None, help="Override scheme.master_seed")
    common.add_argument("--threads", type=int, default=None, help="Worker threads for noise generation and stepping")
    common.add_argument("--allow-large-h", action="store_true", default=None,
                        help="Run even when h >= 1 / (2 lip_x_drift)")
    common.add_argument("--out", type=str, default=None, help="Output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="Enable verbose logging")

    parser = argparse.ArgumentParser(
        prog="mcv-bounds",
        description="Truncated Euler scheme for McKean-Vlasov SDEs and monotone convex order checks",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="Simulate every declared model and write ensembles")
    sub.add_parser("bound-check", parents=[common], help="Check lower <= mid <= upper on every functional")
    sub.add_parser("order-check", parents=[common], help="Certify marginal monotone convex order at every step")
    sub.add_parser("validate", parents=[common], help="Probe the ordering and convexity assumptions")
    oracle = sub.add_parser("oracle", parents=[common], help="Run the deterministic oracle suites")
    oracle.add_argument("suite", nargs="?", default="all", choices=SUITES + ("all",))
    sub.add_parser("convergence", parents=[common], help="Refinement ladder diagnostics")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    # Setup logging
    setup_logging(verbose=args.verbose)

    # Load environment
    load_dotenv()

    overrides = {
        "seed": args.seed,
        "threads": args.threads,
        "allow_large_h": args.allow_large_h,
        "out": args.out,
    }
    try:
        config = load_config(args.config, overrides)
        runner = ExperimentRunner(config)
        if args.command == "simulate":
            result = runner.run_simulate()
        elif args.command == "bound-check":
            result = runner.run_bound_check()
        elif args.command == "order-check":
            result = runner.run_order_check()
        elif args.command == "validate":
            result = runner.run_validate()
        elif args.command == "oracle":
            result = runner.run_oracle(args.suite)
        else:
            result = runner.run_convergence()
    except (ConfigError, StepSizeError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except SchemeBlowUp as e:
        logger.error(f"Numerical blow-up: {e}")
        return EXIT_NUMERIC
    except QuadratureError as e:
        logger.error(f"Oracle quadrature failed: {e}")
        return EXIT_ORACLE

    for path in result.files:
        logger.debug(f"wrote {path}")
    print(f"{result.command}: {result.message} (exit {result.exit_code}, {len(result.files)} files in {runner.out_dir})")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
