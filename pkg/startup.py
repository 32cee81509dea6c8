#!/usr/bin/env python3
"""
Startup script for the occreid pipeline

This script:
1. Checks the environment (.env, output directories)
2. Logs the resolved settings and version
3. Dispatches the remaining arguments to the CLI

Usage: python startup.py benchmark --config experiment.toml --train-first
"""

import logging
import os
import sys
from pathlib import Path

from app.core.config import settings
from app.core.version import version_string
from app.main import cli_main

# Configure logging
logging.basicConfig(level=settings.LOG_LEVEL.upper(), format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


def check_environment() -> bool:
    """Check that the output directories are usable"""
    if not os.path.exists(".env"):
        logger.info(".env file not found, using defaults and OCCREID_* variables")
    else:
        logger.info(".env file found")

    for label, directory in (("runs", settings.RUNS_DIR), ("checkpoints", settings.CHECKPOINT_DIR)):
        path = Path(directory)
        try:
            path.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            logger.error("Cannot create %s directory %s: %s", label, path, exc)
            return False
        if not os.access(path, os.W_OK):
            logger.error("%s directory %s is not writable", label, path)
            return False
        logger.info("%s directory: %s", label, path.resolve())
    return True


def main() -> int:
    logger.info("Starting occreid %s", version_string())
    logger.info("Settings: runs=%s checkpoints=%s seed=%d log_level=%s",
                settings.RUNS_DIR, settings.CHECKPOINT_DIR, settings.SEED, settings.LOG_LEVEL)

    if not check_environment():
        logger.error("Environment check failed")
        return 2

    return cli_main(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
