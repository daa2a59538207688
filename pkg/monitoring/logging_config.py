"""
Logging setup shared by the CLI and scripts.

Reads the ``logging`` section of config/monitoring.yml and routes stdlib
loggers through structlog's ProcessorFormatter: JSON lines for the
``structured`` format, coloured key/value lines for ``console``.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import structlog
import yaml

DEFAULT_MONITORING_CONFIG = Path(__file__).resolve().parent.parent / "config" / "monitoring.yml"

_DEFAULTS = {"level": "INFO", "format": "console", "output": "stream", "log_file": "logs/nlseg.log"}


def load_logging_settings(config_path: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """The ``logging`` section of the monitoring config merged over defaults."""
    path = Path(config_path) if config_path else DEFAULT_MONITORING_CONFIG
    settings = dict(_DEFAULTS)
    if path.exists():
        with open(path, "r") as f:
            data = yaml.safe_load(f) or {}
        settings.update(data.get("logging") or {})
    return settings


def configure_logging(
    level: Optional[str] = None,
    fmt: Optional[str] = None,
    config_path: Optional[Union[str, Path]] = None,
) -> Dict[str, Any]:
    """Install the root handler; explicit arguments override the config file."""
    settings = load_logging_settings(config_path)
    if level:
        settings["level"] = level
    if fmt:
        settings["format"] = fmt

    shared = [
        structlog.stdlib.add_log_level,
        structlog.stdlib.add_logger_name,
        structlog.processors.TimeStamper(fmt="iso"),
    ]
    if settings["format"] == "structured":
        renderer = structlog.processors.JSONRenderer(sort_keys=True)
    else:
        renderer = structlog.dev.ConsoleRenderer(colors=settings["output"] == "stream")
    formatter = structlog.stdlib.ProcessorFormatter(
        foreign_pre_chain=shared,
        processors=[structlog.stdlib.ProcessorFormatter.remove_processors_meta, renderer],
    )

    if settings["output"] == "file":
        log_file = Path(settings["log_file"])
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(log_file)
    else:
        handler = logging.StreamHandler()
    handler.setFormatter(formatter)

    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(str(settings["level"]).upper())
    return settings
