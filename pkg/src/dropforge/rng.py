"""Deterministic, splittable random number streams.

Every stochastic operation in the toolkit draws from an ``RngStream``.  A
stream is a value object: the same ``(base_seed, stream_id, route)`` always
produces the identical sequence of draws, on any platform, so batch work can
be parallelized by handing each item its own child stream without the result
depending on scheduling order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RngStream:
    """A named, reproducible random stream (counter-based Philox underneath)."""

    base_seed: int
    stream_id: int = 0
    route: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not 0 <= self.base_seed < 2**64:
            raise ValueError(f"base_seed must be a 64-bit unsigned integer, got {self.base_seed}")
        if not 0 <= self.stream_id < 2**64:
            raise ValueError(f"stream_id must be a 64-bit unsigned integer, got {self.stream_id}")

    def child(self, index: int) -> "RngStream":
        """Derive an independent sub-stream; distinct indices never collide."""
        return RngStream(self.base_seed, self.stream_id, self.route + (index,))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream's sequence."""
        seq = np.random.SeedSequence(entropy=self.base_seed, spawn_key=(self.stream_id, *self.route))
        return np.random.Generator(np.random.Philox(seq))
