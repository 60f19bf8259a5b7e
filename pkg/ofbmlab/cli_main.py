"""
Command-line entrypoint for ofbmlab.

    ofbmlab <command> --config CONFIG [--out DIR] [--seed S] [--replicates R] [--threads K]

The configuration is a JSON document validated as ExperimentConfig; the flags
override the matching fields before validation.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from pydantic import ValidationError

from ofbmlab.experiments.router import COMMANDS, EXIT_INVALID, run
from ofbmlab.experiments.schemas import ExperimentConfig
from ofbmlab.utils.exceptions import ConfigError
from ofbmlab.utils.logger import logger


def load_config(path: Path, overrides: Optional[dict[str, Any]] = None) -> ExperimentConfig:
    """
    Read and validate an experiment configuration.

    Raises:
        ConfigError: when the file is missing, is not JSON, or fails validation.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"config file {path} does not exist") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration {path}: {e}") from e


def _parse_args(argv: Optional[Sequence[str]]) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="ofbmlab",
        description="Numerical laboratory for operator fractional Brownian motion limits of nonlinear functionals.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS), help="Experiment to run")
    parser.add_argument("--config", type=Path, required=True, help="JSON experiment configuration")
    parser.add_argument("--out", default=None, help="Output directory (overrides the config)")
    parser.add_argument("--seed", type=int, default=None, help="Master seed (overrides the config)")
    parser.add_argument("--replicates", type=int, default=None, help="Monte Carlo replicates (overrides the config)")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads for replicate loops")
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parse_args(argv)
    overrides = {"out": args.out, "seed": args.seed, "replicates": args.replicates}
    try:
        config = load_config(args.config, overrides)
    except ConfigError as e:
        logger.error(str(e))
        sys.stdout.write(json.dumps({"command": args.command, "passed": False, "error": str(e),
                                     "error_type": "ConfigError"}, indent=2, sort_keys=True) + "\n")
        return EXIT_INVALID
    if args.threads is not None and args.threads < 1:
        logger.error("--threads must be at least 1")
        return EXIT_INVALID
    return run(args.command, config, args.threads)


if __name__ == "__main__":
    raise SystemExit(main())
