"""
Command router for ofbmlab.

Maps subcommand names to ExperimentController methods, prints the result as a
JSON document on stdout and translates failures into process exit codes:

- 0: the command ran and its checks passed
- 1: a check failed or a library error was raised while running
- 2: the configuration or the model it describes is invalid
"""

import json
import sys
from typing import Callable, Optional

from pydantic import ValidationError

from ofbmlab.experiments.controller import CommandResult, ExperimentController
from ofbmlab.experiments.schemas import ExperimentConfig
from ofbmlab.models import to_jsonable
from ofbmlab.utils.exceptions import ConfigError, InputError, ModelDomainError, OfbmLabError
from ofbmlab.utils.logger import logger

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INVALID = 2

# subcommand -> controller method (looked up at call time)
COMMANDS: dict[str, Callable[[ExperimentController], CommandResult]] = {
    "simulate-ofbm": lambda c: c.simulate_ofbm(),
    "simulate-approx": lambda c: c.simulate_approx(),
    "hermite-rank": lambda c: c.hermite_rank(),
    "check-condition": lambda c: c.check_condition(),
    "tightness": lambda c: c.tightness(),
    "converge": lambda c: c.converge(),
    "verify": lambda c: c.verify(),
}

_INVALID = (ConfigError, ValidationError, ModelDomainError, InputError)


def _emit(document: dict) -> None:
    sys.stdout.write(json.dumps(document, indent=2, sort_keys=True, default=to_jsonable) + "\n")


def run(command: str, config: ExperimentConfig, threads: Optional[int] = None) -> int:
    """
    Run one subcommand and return its exit code.

    Args:
        command (str): Key of COMMANDS.
        config (ExperimentConfig): Validated configuration.
        threads (int, optional): Worker threads; settings.THREADS when omitted.
    """
    if command not in COMMANDS:
        logger.error(f"Unknown command {command!r}")
        _emit({"command": command, "passed": False, "error": f"unknown command {command!r}"})
        return EXIT_INVALID

    logger.info(f"Running {command}")
    try:
        controller = ExperimentController(config, threads)
        result = COMMANDS[command](controller)
    except _INVALID as e:
        logger.error(f"{command} rejected its input: {e}")
        _emit({"command": command, "passed": False, "error": str(e), "error_type": type(e).__name__})
        return EXIT_INVALID
    except OfbmLabError as e:
        logger.error(f"{command} failed: {e}")
        _emit({"command": command, "passed": False, "error": str(e), "error_type": type(e).__name__})
        return EXIT_FAILED

    _emit({
        "command": result.command,
        "passed": result.passed,
        "artifacts": result.artifacts,
        "payload": result.payload,
    })
    if result.summary:
        logger.info(f"{command} summary:\n{result.summary}")
    logger.info(f"{command} finished: {'PASS' if result.passed else 'FAIL'}")
    return EXIT_OK if result.passed else EXIT_FAILED
