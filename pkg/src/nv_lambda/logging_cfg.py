# nv-lambda/src/nv_lambda/logging_cfg.py
from __future__ import annotations

import json
import logging
from logging.handlers import RotatingFileHandler
from typing import Any, Dict, Optional

from . import config

_run_context: Dict[str, Optional[str]] = {"run_id": None, "config_sha256": None}


def bind_run_context(run_id: Optional[str], config_sha256: Optional[str] = None) -> None:
    _run_context["run_id"] = run_id
    _run_context["config_sha256"] = config_sha256


class RunContextFilter(logging.Filter):
    def filter(self, record: logging.LogRecord) -> bool:
        record.run_id = _run_context["run_id"]
        record.config_sha256 = _run_context["config_sha256"]
        return True


def init_logging() -> None:
    logger = logging.getLogger()
    if logger.handlers:
        return
    level = getattr(logging, config.settings.LOG_LEVEL.upper(), logging.INFO)
    logger.setLevel(level)
    file_handler = RotatingFileHandler(config.settings.LOG_FILE, maxBytes=5_000_000, backupCount=3, encoding="utf-8")
    file_handler.setFormatter(JsonFormatter())
    file_handler.addFilter(RunContextFilter())
    logger.addHandler(file_handler)
    # stderr minimal human readable
    stream = logging.StreamHandler()
    stream.setFormatter(logging.Formatter("[%(levelname)s] %(name)s: %(message)s"))
    logger.addHandler(stream)
    # scipy integration/optimizer warnings end up in the run log
    logging.captureWarnings(True)


class JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        payload: Dict[str, Any] = {
            "level": record.levelname,
            "name": record.name,
            "msg": record.getMessage(),
            "time": self.formatTime(record, "%Y-%m-%dT%H:%M:%S"),
        }
        run_id = getattr(record, "run_id", None)
        if run_id:
            payload["run_id"] = run_id
            payload["config_sha256"] = getattr(record, "config_sha256", None)
        if record.exc_info:
            payload["exc"] = self.formatException(record.exc_info)
        return json.dumps(payload, ensure_ascii=False)


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)
