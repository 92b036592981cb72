"""JSON-lines logging with the current run (command, spec hash, seed) stamped on every record."""
from __future__ import annotations

import json
import logging
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np


LEVEL_ENV = "RBSPDE_LAB_LOG_LEVEL"
RUN_LOG_NAME = "run.log"


class RunContextFilter(logging.Filter):
    """Attaches the bound run fields to each record as ``record.run``."""

    def __init__(self) -> None:
        super().__init__()
        self.fields: Dict[str, Any] = {}

    def filter(self, record: logging.LogRecord) -> bool:
        record.run = dict(self.fields)
        return True


_RUN_CONTEXT = RunContextFilter()


class JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        payload: Dict[str, Any] = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        payload.update(getattr(record, "run", {}))
        if record.args and isinstance(record.args, dict):
            payload.update(record.args)
        if record.exc_info:
            payload["exc_info"] = self.formatException(record.exc_info)
        return json.dumps(payload, default=_jsonable)


def _jsonable(value: Any) -> Any:
    # numpy scalars and arrays show up in solver diagnostics
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)


def _level(level: Optional[int]) -> int:
    if level is not None:
        return level
    name = os.getenv(LEVEL_ENV, "INFO").strip().upper()
    resolved = logging.getLevelName(name)
    return resolved if isinstance(resolved, int) else logging.INFO


def _handler(handler: logging.Handler) -> logging.Handler:
    handler.setFormatter(JsonFormatter())
    handler.addFilter(_RUN_CONTEXT)
    return handler


def configure_logging(log_dir: str | Path = "logs", level: Optional[int] = None) -> None:
    """Stream and file handlers on the root logger; the level defaults to $RBSPDE_LAB_LOG_LEVEL or INFO."""
    log_path = Path(log_dir)
    log_path.mkdir(parents=True, exist_ok=True)

    root = logging.getLogger()
    root.setLevel(_level(level))
    root.handlers.clear()
    root.addHandler(_handler(logging.StreamHandler()))
    root.addHandler(_handler(logging.FileHandler(log_path / "rbspde_lab.log")))


def bind_run(**fields: Any) -> None:
    _RUN_CONTEXT.fields.update(fields)


def clear_run() -> None:
    _RUN_CONTEXT.fields.clear()


def attach_run_log(out_dir: str | Path) -> logging.Handler:
    """Copy every record of the current run into ``out_dir/run.log``; detach with :func:`detach_run_log`."""
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    handler = _handler(logging.FileHandler(path / RUN_LOG_NAME, mode="w"))
    logging.getLogger().addHandler(handler)
    return handler


def detach_run_log(handler: logging.Handler) -> None:
    logging.getLogger().removeHandler(handler)
    handler.close()


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)
