"""
Command-line front end.

    rotinv-bench [--config PATH] [--seed U64] [--out DIR] [--threads N]
                 [--quad-order N] [--tol FLOAT] [--log-level LEVEL] <command> [--resume]

Exit codes: 0 success, 1 numerical failure, 2 usage or configuration error.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from src.services.experiments import ExperimentConfig, run_command
from src.utils.errors import BenchError, BudgetExceededError, DomainError, NumericalFailure
from src.utils.observability import configure_logging, get_observability_manager

logger = logging.getLogger(__name__)

COMMANDS = {
    "fixed-point": "Solve the replica fixed point and report derived parameters",
    "state-evolution": "Tabulate the VAMP state evolution",
    "delta-table": "Cross-time overlap table of stationary VAMP",
    "simulate": "VAMP Monte Carlo over seeds against state evolution",
    "stationary": "Stationary VAMP: form equivalence and Gram-block limits",
    "oracle": "Exact-enumeration oracle sweep over small n",
    "gaussian-ref": "Gaussian-prior closed-form reference",
    "identities": "Closed-form identity residuals at the fixed point",
}

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2


def _shared_flags() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="JSON experiment config")
    shared.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="Master seed (unsigned 64-bit)")
    shared.add_argument("--out", type=str, default=argparse.SUPPRESS, help="Output directory")
    shared.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="Worker pool size")
    shared.add_argument("--quad-order", dest="quad_order", type=int, default=argparse.SUPPRESS,
                        help="Gauss-Hermite order")
    shared.add_argument("--tol", type=float, default=argparse.SUPPRESS, help="Fixed-point tolerance")
    shared.add_argument("--log-level", dest="log_level", type=str, default=argparse.SUPPRESS)
    return shared


def build_parser() -> argparse.ArgumentParser:
    shared = _shared_flags()
    parser = argparse.ArgumentParser(
        prog="rotinv-bench",
        description="Bayesian linear regression with rotationally-invariant designs: theory, VAMP and oracles.",
        parents=[shared],
    )
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.required = True
    for name, help_text in COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text, parents=[shared])
        if name == "simulate":
            sub.add_argument("--resume", action="store_true", help="Append only seeds missing from the output")
    return parser


def _read_config_file(path: Path) -> Dict[str, Any]:
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DomainError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
    except OSError as e:
        raise DomainError(f"cannot read config {path}: {e}") from e
    if not isinstance(data, dict):
        raise DomainError(f"{path}: top level must be a JSON object")
    return data


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Merge the config file with flag overrides; flags win."""
    data = _read_config_file(args.config) if getattr(args, "config", None) else {}
    for flag in ("seed", "out", "threads", "quad_order"):
        if hasattr(args, flag):
            data[flag] = getattr(args, flag)
    if hasattr(args, "tol"):
        solver = dict(data.get("solver") or {})
        solver["tol"] = args.tol
        data["solver"] = solver
    return ExperimentConfig.parse_obj(data)


def _format_validation_error(error: ValidationError) -> str:
    lines = ["invalid configuration:"]
    for item in error.errors():
        where = ".".join(str(part) for part in item["loc"])
        lines.append(f"  {where}: {item['msg']}")
    return "\n".join(lines)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    configure_logging(getattr(args, "log_level", None))

    try:
        config = load_config(args)
    except ValidationError as e:
        print(_format_validation_error(e), file=sys.stderr)
        return EXIT_USAGE
    except DomainError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    try:
        summary = run_command(args.command, config, resume=getattr(args, "resume", False))
    except BudgetExceededError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as e:
        logger.error(f"❌ {args.command} failed: {e}")
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DomainError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except BenchError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    finally:
        get_observability_manager().finish()

    results = summary.get("results", summary)
    print(json.dumps(results, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
