"""Logging setup for solver runs."""
import json
import logging
import logging.handlers
import os
import sys
from datetime import datetime, timezone
from typing import Dict, Optional

PACKAGES = ("geometry", "mechanics", "solvers", "runner", "utils")

# per-Arnoldi-step and per-greedy-step messages; only shown in verbose mode
CHATTY = ("solvers.krylov", "solvers.rom")

TEXT_FORMAT = "%(asctime)s - %(levelname)-8s - [%(name)s:%(lineno)d] - %(message)s"


class JsonFormatter(logging.Formatter):
    """One JSON object per record, with the elapsed run time in seconds."""

    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "time": datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(),
            "elapsed": round(record.relativeCreated / 1000.0, 3),
            "level": record.levelname,
            "name": record.name,
            "lineno": record.lineno,
            "message": record.getMessage(),
        }
        if record.exc_info:
            payload["exc_info"] = self.formatException(record.exc_info)
        return json.dumps(payload, ensure_ascii=False)


def package_levels(log_level: str = "INFO", verbosity: str = "normal") -> Dict[str, int]:
    """
    Level of the root logger ("") and of each package logger.

    quiet shows warnings only and verbose shows everything. In normal mode the
    package loggers follow ``log_level`` but the chatty loggers never go below INFO.
    """
    if verbosity == "quiet":
        base = logging.WARNING
    elif verbosity == "verbose":
        base = logging.DEBUG
    else:
        base = logging.getLevelName(log_level.upper())
        if not isinstance(base, int):
            raise ValueError(f"Unknown log level '{log_level}'")
    levels = {"": base}
    levels.update({name: base for name in PACKAGES})
    if verbosity != "verbose":
        levels.update({name: max(base, logging.INFO) for name in CHATTY})
    return levels


def setup_logging(
    log_level: str = "INFO",
    verbosity: str = "normal",
    log_file: Optional[str] = None,
    log_json: bool = False,
    max_bytes: int = 10_485_760,  # 10MB
    backup_count: int = 5,
) -> None:
    """Configure the root handlers and the package logger levels.

    Args:
        log_level: DEBUG, INFO, WARNING or ERROR; ignored in quiet and verbose mode
        verbosity: quiet, normal or verbose
        log_file: Optional path to a rotating log file in addition to stdout.
        log_json: Emit one JSON object per record instead of plain text.
        max_bytes: Maximum size of each log file before rotation.
        backup_count: Number of rotated log files to keep.
    """
    formatter = JsonFormatter() if log_json else logging.Formatter(TEXT_FORMAT)

    root_logger = logging.getLogger()
    root_logger.handlers = []

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    if log_file:
        log_dir = os.path.dirname(log_file)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
        file_handler = logging.handlers.RotatingFileHandler(log_file, maxBytes=max_bytes, backupCount=backup_count)
        file_handler.setFormatter(formatter)
        root_logger.addHandler(file_handler)

    for name, level in package_levels(log_level, verbosity).items():
        logging.getLogger(name).setLevel(level)
