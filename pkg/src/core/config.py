"""Environment-driven defaults shared by the estimators, simulations and CLI."""

from __future__ import annotations

import logging
import math
import os

from dotenv import load_dotenv

LOGGER = logging.getLogger(__name__)

load_dotenv()


def _get_env_int(name: str, default: int, *, minimum: int = 0) -> int:
    """Parse an integer environment variable with validation."""

    raw_value = os.getenv(name)
    if raw_value is None:
        return default

    try:
        value = int(raw_value)
    except ValueError:
        LOGGER.warning("Invalid value for %s=%s; using default %s", name, raw_value, default)
        return default

    if value < minimum:
        LOGGER.warning(
            "Value for %s=%s below %s; using default %s", name, raw_value, minimum, default
        )
        return default

    return value


def _get_env_float(
    name: str,
    default: float,
    *,
    lower: float | None = None,
    upper: float | None = None,
) -> float:
    """Parse a float environment variable that must sit strictly inside (lower, upper)."""

    raw_value = os.getenv(name)
    if raw_value is None:
        return default

    try:
        value = float(raw_value)
    except ValueError:
        LOGGER.warning("Invalid value for %s=%s; using default %s", name, raw_value, default)
        return default

    out_of_range = (
        not math.isfinite(value)
        or (lower is not None and value <= lower)
        or (upper is not None and value >= upper)
    )
    if out_of_range:
        LOGGER.warning("Out-of-range value for %s=%s; using default %s", name, raw_value, default)
        return default

    return value


def _get_env_bool(name: str, default: bool) -> bool:
    raw_value = os.getenv(name)
    if raw_value is None:
        return default
    return raw_value.strip().lower() not in {"0", "false", "no", "off", ""}


DEFAULT_GRID_SIZE = _get_env_int("ETSI_GRID_SIZE", 100, minimum=2)
DEFAULT_ALPHA = _get_env_float("ETSI_ALPHA", 0.05, lower=0.0, upper=1.0)
DEFAULT_GCV_ITERATIONS = _get_env_int("ETSI_GCV_ITERATIONS", 100, minimum=1)
DEFAULT_HOLDOUT = _get_env_float("ETSI_GCV_HOLDOUT", 0.5, lower=0.0, upper=1.0)
DEFAULT_SEED = _get_env_int("ETSI_SEED", 20240917)
DEFAULT_THREADS = _get_env_int("ETSI_THREADS", 1, minimum=1)
DEFAULT_LOG_LEVEL = os.getenv("ETSI_LOG_LEVEL", "INFO").upper()
LEDGER_ENABLED = _get_env_bool("ETSI_LEDGER_ENABLED", True)


__all__ = [
    "DEFAULT_ALPHA",
    "DEFAULT_GCV_ITERATIONS",
    "DEFAULT_GRID_SIZE",
    "DEFAULT_HOLDOUT",
    "DEFAULT_LOG_LEVEL",
    "DEFAULT_SEED",
    "DEFAULT_THREADS",
    "LEDGER_ENABLED",
]
