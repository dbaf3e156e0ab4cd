"""Process-wide settings read from the environment (and an optional .env file)."""
import logging
import os
from dataclasses import dataclass

from dotenv import load_dotenv

from errors import ConfigError

DEFAULT_HORIZON_CAP = 2 ** 26
DEFAULT_COIN_BLOCK = 512
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

_ENV_PREFIX = "CONTENTION_LAB_"


@dataclass(frozen=True)
class Settings:
    """Knobs that are not part of an experiment config."""

    horizon_cap: int = DEFAULT_HORIZON_CAP
    coin_block: int = DEFAULT_COIN_BLOCK
    log_level: str = "WARNING"


def _read_int(name, default, minimum):
    raw = os.environ.get(_ENV_PREFIX + name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw.strip())
    except ValueError:
        raise ConfigError(f"{_ENV_PREFIX}{name} must be an integer, got {raw!r}")
    if value < minimum:
        raise ConfigError(f"{_ENV_PREFIX}{name} must be >= {minimum}, got {value}")
    return value


def load_settings(dotenv_path=None):
    """Load settings, letting a .env file fill in unset variables."""
    load_dotenv(dotenv_path=dotenv_path, override=False)
    level = os.environ.get(_ENV_PREFIX + "LOG_LEVEL", "WARNING").strip().upper() or "WARNING"
    if not isinstance(logging.getLevelName(level), int):
        raise ConfigError(f"{_ENV_PREFIX}LOG_LEVEL is not a logging level: {level!r}")
    return Settings(
        horizon_cap=_read_int("HORIZON_CAP", DEFAULT_HORIZON_CAP, 1),
        coin_block=_read_int("COIN_BLOCK", DEFAULT_COIN_BLOCK, 1),
        log_level=level,
    )


def configure_logging(level="WARNING"):
    """Install a single stream handler on the root logger."""
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(level)
