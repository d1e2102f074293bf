"""Tests for logging setup."""

import logging

from rich.logging import RichHandler

from exacfs.log import LOG_ENV, get_log_level, setup_logging


def test_default_level(monkeypatch):
    monkeypatch.delenv(LOG_ENV, raising=False)
    assert get_log_level() == "info"
    assert setup_logging().level == logging.INFO


def test_level_from_environment(monkeypatch):
    monkeypatch.setenv(LOG_ENV, " DEBUG ")
    assert setup_logging().level == logging.DEBUG


def test_repeated_setup_keeps_one_handler(monkeypatch):
    monkeypatch.setenv(LOG_ENV, "error")
    setup_logging()
    logger = setup_logging()
    assert sum(isinstance(h, RichHandler) for h in logger.handlers) == 1
    assert logger.level == logging.ERROR
    assert not logger.propagate


def test_unknown_level_falls_back_to_info(monkeypatch):
    monkeypatch.setenv(LOG_ENV, "chatty")
    assert setup_logging().level == logging.INFO
