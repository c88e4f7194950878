"""Unit tests for logging setup."""

import json
import logging

import pytest
import structlog

from services.logging import configure_logging

pytestmark = pytest.mark.unit


class TestConfigureLogging:
    """Test the structlog configuration."""

    def test_json_lines_on_stderr(self, capsys):
        configure_logging("info", "json")
        structlog.get_logger("tests.logging").info("Model built", nodes=5)
        captured = capsys.readouterr()
        assert captured.out == ""
        record = json.loads(captured.err.strip().splitlines()[-1])
        assert record["event"] == "Model built"
        assert record["nodes"] == 5
        assert record["level"] == "info"
        assert record["logger"] == "tests.logging"
        assert "timestamp" in record

    def test_level_filters(self, capsys):
        configure_logging("warning", "json")
        log = structlog.get_logger("tests.logging")
        log.info("Hidden")
        log.warning("Shown")
        err = capsys.readouterr().err
        assert "Hidden" not in err
        assert "Shown" in err
        assert logging.getLogger().level == logging.WARNING

    def test_console_renderer(self, capsys):
        configure_logging("info", "console")
        structlog.get_logger("tests.logging").info("Epoch completed", epoch=2)
        err = capsys.readouterr().err
        assert "Epoch completed" in err
        assert "epoch=2" in err

    def test_unknown_level_defaults_to_info(self):
        configure_logging("chatty", "json")
        assert logging.getLogger().level == logging.INFO
