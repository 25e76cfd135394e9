"""Deterministic random streams.

Randomness is organized around a single 64-bit seed from which independent
named streams are derived.  Each stream is a numpy ``Generator`` backed by the
Philox 4x64 counter-based bit generator, keyed with the first 128 bits of
``SHA-256(seed || role)``.  Counter-based generation makes every stream
reproducible bit-for-bit across platforms and independent of how many values
other streams have consumed.  Conventional roles: ``"noise"``, ``"time"``,
``"rotation"``, ``"init"``, ``"batch"``, ``"sample/<chain>"``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = ["RandomSource"]


def _stream_key(seed: int, role: str) -> int:
    digest = hashlib.sha256(f"{seed}:{role}".encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


@dataclass
class RandomSource:
    """Root of all randomness: a seed plus a counter for anonymous splits."""

    seed: int
    _splits: int = field(default=0, repr=False)

    def stream(self, role: str) -> np.random.Generator:
        """Independent generator for a named role; same (seed, role) -> same stream."""
        return np.random.Generator(np.random.Philox(key=_stream_key(self.seed, role)))

    def split(self) -> "RandomSource":
        """Child source with its own seed, derived from the split counter."""
        self._splits += 1
        return RandomSource(_stream_key(self.seed, f"split:{self._splits}") % (2**63))
