"""Seed derivation shared by every stochastic step.

All randomness comes from one master seed. Sub-tasks get their own 64-bit
seed by hashing ``"<master>/<task>"`` with SHA-256 and keeping the first
eight bytes (big-endian). Generators are numpy ``PCG64`` streams, and
shuffles use ``Generator.permutation`` (Fisher-Yates).
"""

from __future__ import annotations

import hashlib
import os

import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(seed: int, task: str) -> int:
    digest = hashlib.sha256(f"{int(seed) & MASK64}/{task}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def rng(seed: int, task: str | None = None) -> np.random.Generator:
    s = int(seed) & MASK64 if task is None else derive_seed(seed, task)
    return np.random.Generator(np.random.PCG64(s))


def thread_cap(default: int = 1) -> int:
    """Worker count from ``INCIDENTLAB_THREADS`` (results never depend on it)."""
    raw = os.environ.get("INCIDENTLAB_THREADS")
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        return default
    return max(1, value)
