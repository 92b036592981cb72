import json
import logging

import numpy as np

from src.utils.logging import _RUN_CONTEXT, JsonFormatter, RunContextFilter, _level, bind_run, clear_run


def _record(message, args=None):
    return logging.LogRecord("lab", logging.INFO, __file__, 1, message, args, None)


def test_formatter_merges_run_fields_and_numpy_values():
    context = RunContextFilter()
    context.fields.update(command="solve", seed=3)
    record = _record("Penalty level solved", {"residual": np.float64(0.25), "active": np.array([1, 0])})
    assert context.filter(record)
    payload = json.loads(JsonFormatter().format(record))
    assert payload["command"] == "solve"
    assert payload["seed"] == 3
    assert payload["residual"] == 0.25
    assert payload["active"] == [1, 0]


def test_bound_fields_are_dropped_after_clear():
    bind_run(command="penalize")
    record = _record("busy")
    _RUN_CONTEXT.filter(record)
    assert json.loads(JsonFormatter().format(record))["command"] == "penalize"
    clear_run()
    record = _record("idle")
    _RUN_CONTEXT.filter(record)
    assert "command" not in json.loads(JsonFormatter().format(record))


def test_level_comes_from_environment(monkeypatch):
    monkeypatch.setenv("RBSPDE_LAB_LOG_LEVEL", "warning")
    assert _level(None) == logging.WARNING
    monkeypatch.setenv("RBSPDE_LAB_LOG_LEVEL", "chatty")
    assert _level(None) == logging.INFO
    assert _level(logging.DEBUG) == logging.DEBUG
