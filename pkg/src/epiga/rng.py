"""Seeded random streams, one independent substream per concern.

Each stream is a Philox counter-based generator keyed by the run seed and a
stable hash of the concern name, so draws in one concern never shift the
draws of another.
"""

from __future__ import annotations

import zlib

import numpy as np

CONCERNS = ("init", "selection", "crossover", "mutation", "diffusion", "network", "plain_ga")


def substream(seed: int, name: str) -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))


class Streams:
    """Lazily created named substreams for one run."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = substream(self.seed, name)
        return self._streams[name]

    def __getattr__(self, name: str) -> np.random.Generator:
        if name.startswith("_"):
            raise AttributeError(name)
        return self[name]
