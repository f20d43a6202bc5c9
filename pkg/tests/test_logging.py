"""
Tests for logging setup.
"""
import json
import logging

import pytest

from utils.logging import CHATTY, PACKAGES, JsonFormatter, package_levels, setup_logging


def test_quiet_shows_warnings_only():
    levels = package_levels("DEBUG", "quiet")
    assert set(levels.values()) == {logging.WARNING}
    assert set(PACKAGES) <= set(levels)


def test_normal_keeps_chatty_loggers_at_info():
    levels = package_levels("debug", "normal")
    assert levels[""] == logging.DEBUG
    assert levels["solvers"] == logging.DEBUG
    for name in CHATTY:
        assert levels[name] == logging.INFO


def test_normal_follows_level_above_info():
    levels = package_levels("ERROR", "normal")
    assert levels["solvers.krylov"] == logging.ERROR
    assert levels["geometry"] == logging.ERROR


def test_verbose_shows_everything():
    levels = package_levels("WARNING", "verbose")
    assert set(levels.values()) == {logging.DEBUG}
    assert set(CHATTY) <= set(levels)


def test_unknown_level():
    with pytest.raises(ValueError):
        package_levels("LOUD")


def test_setup_logging_sets_package_levels_and_handler():
    setup_logging("INFO", "normal")
    root = logging.getLogger()
    assert len(root.handlers) == 1
    assert logging.getLogger("solvers").level == logging.INFO
    assert not logging.getLogger("solvers.krylov").isEnabledFor(logging.DEBUG)


def test_setup_logging_writes_file(tmp_path):
    path = tmp_path / "logs" / "run.log"
    setup_logging("INFO", log_file=str(path))
    logging.getLogger("solvers.newton").info("increment 1 converged")
    for handler in logging.getLogger().handlers:
        handler.flush()
    assert "increment 1 converged" in path.read_text()
    assert len(logging.getLogger().handlers) == 2


def test_json_formatter():
    record = logging.LogRecord("solvers.fetidp", logging.WARNING, __file__, 12, "cells %s", ([3],), None)
    payload = json.loads(JsonFormatter().format(record))
    assert payload["name"] == "solvers.fetidp"
    assert payload["level"] == "WARNING"
    assert payload["message"] == "cells [3]"
    assert payload["lineno"] == 12
    assert payload["elapsed"] >= 0.0
