"""Process-level runtime knobs."""
from __future__ import annotations

import os

from .errors import InvalidParameterError

_ENV_VAR = "PASDF_THREADS"


def worker_count() -> int:
    """Worker cap for parallel neighbour queries.

    Controlled by the ``PASDF_THREADS`` environment variable; defaults to 1.
    Results never depend on this value, only wall-clock time does.
    """
    raw = os.environ.get(_ENV_VAR)
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise InvalidParameterError(f"{_ENV_VAR} must be an integer, got {raw!r}") from exc
    if value < 1:
        raise InvalidParameterError(f"{_ENV_VAR} must be >= 1, got {value}")
    return value
