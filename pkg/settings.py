"""
Environment-backed configuration and logging setup.

Values come from CATENC_* variables, optionally loaded from a .env file in the
working directory. See .env.example for the full list.
"""

import logging
import os
import sys
from dataclasses import dataclass
from typing import Optional

from dotenv import load_dotenv

from errors import ConfigurationError

load_dotenv()

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


@dataclass(frozen=True)
class Settings:
    log_level: str = "INFO"
    threads: int = 1
    seed: int = 0
    mnl_reg: Optional[float] = None  # None: each command keeps its own default
    report_format: str = "csv"


def _env(name: str, default: str) -> str:
    return os.getenv(f"CATENC_{name}", default)


def load_settings() -> Settings:
    """Read settings from the environment (after .env has been loaded)"""
    try:
        settings = Settings(
            log_level=_env("LOG_LEVEL", "INFO").upper(),
            threads=int(_env("THREADS", "1")),
            seed=int(_env("SEED", "0")),
            mnl_reg=float(os.environ["CATENC_MNL_REG"]) if "CATENC_MNL_REG" in os.environ else None,
            report_format=_env("FORMAT", "csv").lower(),
        )
    except ValueError as e:
        raise ConfigurationError(f"invalid CATENC_* environment value: {e}") from e

    if settings.threads < 1:
        raise ConfigurationError("CATENC_THREADS must be >= 1")
    if settings.mnl_reg is not None and settings.mnl_reg < 0:
        raise ConfigurationError("CATENC_MNL_REG must be >= 0")
    if settings.report_format not in ("csv", "json"):
        raise ConfigurationError("CATENC_FORMAT must be csv or json")
    if not isinstance(logging.getLevelName(settings.log_level), int):
        raise ConfigurationError(f"unknown log level {settings.log_level!r}")
    return settings


def configure_logging(level: str = "INFO") -> None:
    """Send all diagnostics to stderr"""
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )
