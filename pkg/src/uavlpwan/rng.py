"""Seeded random substreams keyed by (seed, entity, purpose)."""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, replace


def derive_seed(seed: int, entity: str | int, purpose: str, position: int | None = None) -> int:
    key = f"{seed}|{entity}|{purpose}" if position is None else f"{seed}|{entity}|{purpose}|{position}"
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "big")


@dataclass(frozen=True)
class RngStream:
    """Counter-based stream: the value at ``position`` depends on nothing else.

    Immutable, so state machines can carry one and stay pure; ``advance``
    returns the stream at the next position.
    """

    seed: int
    entity: str
    purpose: str
    position: int = 0

    def uniform(self) -> float:
        return derive_seed(self.seed, self.entity, self.purpose, self.position) / 2**64

    def advance(self) -> RngStream:
        return replace(self, position=self.position + 1)

    def generator(self) -> random.Random:
        """A conventional stateful generator seeded from this substream."""
        return random.Random(derive_seed(self.seed, self.entity, self.purpose))


def substream(seed: int, entity: str | int, purpose: str) -> RngStream:
    return RngStream(seed, str(entity), purpose)
