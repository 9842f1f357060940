"""Deterministic seeding and provenance helpers shared across the pipeline."""
from __future__ import annotations

import hashlib
import json
from typing import Any

import numpy as np

TOOL_VERSION = "0.1.0"


def stable_digest(*parts: Any) -> bytes:
    """SHA-256 over the string forms of *parts*, platform independent."""
    payload = "\x1f".join(repr(p) for p in parts).encode("utf-8")
    return hashlib.sha256(payload).digest()


def derive_rng(*parts: Any) -> np.random.Generator:
    """Seeded generator derived from an arbitrary key tuple.

    Distinct key tuples get statistically independent streams; the same
    tuple always yields the same stream, on every platform.
    """
    digest = stable_digest(*parts)
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence(words))


def config_hash(config: dict) -> str:
    """Short stable hash of a JSON-serializable config mapping."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]
