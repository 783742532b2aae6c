# src/common/logging_setup.py

import logging
import os
from typing import Optional

DEFAULT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging(level: Optional[str] = None, fmt: str = DEFAULT_FORMAT) -> None:
    """
    Configures the root logger once per process.
    The LOG_LEVEL environment variable wins over the level from config.yaml.
    """
    resolved = (os.getenv("LOG_LEVEL") or level or "INFO").upper()
    numeric_level = getattr(logging, resolved, None)
    if not isinstance(numeric_level, int):
        numeric_level = logging.INFO
    logging.basicConfig(level=numeric_level, format=fmt, force=True)
