"""
Logging configuration module for ofbmlab.

Sets up a console handler and a rotating file handler. Result files (CSV, JSON)
never go through logging, so log timestamps cannot leak into artifacts.
"""

import logging
import sys
from logging.handlers import RotatingFileHandler

from ofbmlab.utils.settings import settings


def setup_logging(level: int | str = settings.LOG_LEVEL):
    """
    Configure logging with console and file handlers.

    - Console handler: writes to stderr, leaving stdout to command results
    - Rotating file handler: ``ofbmlab.log`` in ``settings.LOG_DIR``
      (max 5MB per file, 3 backups)

    Args:
        level (int | str): Logging level, e.g. ``logging.DEBUG`` or ``"INFO"``.
    """
    log_dir = settings.LOG_DIR
    log_dir.mkdir(parents=True, exist_ok=True)

    console_handler = logging.StreamHandler(sys.stderr)
    file_handler = RotatingFileHandler(
        log_dir / "ofbmlab.log", maxBytes=5 * 1024 * 1024, backupCount=3, encoding="utf-8"
    )

    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[console_handler, file_handler],
    )


# Initialize logging when module is imported
setup_logging()

logger = logging.getLogger("OfbmLab")
