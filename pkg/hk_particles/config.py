# =============================================================================
# CONFIGURATION: process-level defaults
# =============================================================================
# Numerical parameters never come from the environment: they live in the
# frozen dataclasses of each module and in JSON run configs. The environment
# only decides where files go and how chatty the logs are.
#
#   HK_OUTPUT_DIR  default output directory for CLI commands  (default: out)
#   HK_LOG_LEVEL   logging level name                          (default: INFO)
#
# An optional .env file in the working directory is read first.
# =============================================================================

import logging
import os
from dataclasses import dataclass

from dotenv import find_dotenv, load_dotenv

DEFAULT_OUTPUT_DIR = "out"
DEFAULT_LOG_LEVEL = "INFO"

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


@dataclass(frozen=True)
class Settings:
    output_dir: str = DEFAULT_OUTPUT_DIR
    log_level: str = DEFAULT_LOG_LEVEL


def load_settings(dotenv_path=None):
    """Read HK_* variables (after loading .env, without overriding the real env)."""
    load_dotenv(dotenv_path or find_dotenv(usecwd=True), override=False)
    level = os.getenv("HK_LOG_LEVEL", DEFAULT_LOG_LEVEL).upper()
    if not isinstance(logging.getLevelName(level), int):
        level = DEFAULT_LOG_LEVEL
    return Settings(
        output_dir=os.getenv("HK_OUTPUT_DIR", DEFAULT_OUTPUT_DIR),
        log_level=level,
    )


def configure_logging(settings):
    logging.basicConfig(level=settings.log_level, format=LOG_FORMAT)
