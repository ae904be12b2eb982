"""Small shared helpers."""

import os


def thread_cap(default=4):
    """Parallelism cap; the LORITA_THREADS env var overrides the default.

    Results never depend on the cap: parallel sections reduce their
    results in fixed index order.
    """
    raw = os.environ.get("LORITA_THREADS")
    if raw is None:
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"LORITA_THREADS must be an integer, got {raw!r}")
    return max(1, value)
