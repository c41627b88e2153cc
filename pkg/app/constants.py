"""
Runtime configuration read from the environment.

Environment reads are functions so that a changed variable is seen by the next call.
"""

import os
from typing import Optional

MODEL_FORMAT_VERSION = 1
RNG_ID = "numpy.PCG64"
INIT_LOW = -1.0
INIT_HIGH = 1.0

DEFAULT_BLOCK_SIZE = 16
DEFAULT_SEEDS = 5
DEFAULT_SPLIT = 0.8

RELEASE_PROFILE = "release"


def workers_cap() -> Optional[int]:
    """Upper bound on worker threads from RELM_WORKERS, or None when unset."""
    raw = os.getenv("RELM_WORKERS")
    if raw is None or raw.strip() == "":
        return None
    value = int(raw)
    return value if value > 0 else None


def profile() -> str:
    return os.getenv("RELM_PROFILE", "debug").strip().lower()


def default_watts() -> float:
    return float(os.getenv("RELM_WATTS", "30"))


def chunks_per_worker() -> int:
    return max(1, int(os.getenv("RELM_CHUNKS_PER_WORKER", "4")))
