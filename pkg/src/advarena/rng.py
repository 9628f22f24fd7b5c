"""Deterministic, splittable randomness.

All arena randomness flows from one master seed through named streams.
Streams are identified by (seed, stream_id) pairs fed to a counter-based
Philox generator, so any stream can be reconstructed independently of
every other and parallel evaluations never share state.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

__all__ = ["RngKey"]

_MASK64 = (1 << 64) - 1


def _mix(stream_id: int, label) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(stream_id.to_bytes(8, "little"))
    h.update(repr(label).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RngKey:
    """Handle for one named random stream.

    Identical (seed, stream_id) pairs produce identical draw sequences on
    every platform; `child` derives disjoint sub-streams from hashable
    labels without consuming any randomness.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK64)

    def child(self, *labels) -> "RngKey":
        sid = self.stream_id
        for label in labels:
            sid = _mix(sid, label)
        return RngKey(self.seed, sid)

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))
