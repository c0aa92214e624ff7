"""loads .env and configures logging"""

import logging
import os
from dotenv import load_dotenv

load_dotenv()

LOG_ENV = "XATTN_LOG"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def log_level() -> int:
    """level named by XATTN_LOG, INFO when unset or unknown"""
    name = (os.getenv(LOG_ENV) or "INFO").upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO


def setup_logging(level=None) -> int:
    """configures the root handler once; returns the level in effect"""
    level = log_level() if level is None else level
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)
    return level
