# src/core/rng.py

import hashlib
from typing import Any, Dict

import numpy as np

STREAM_NAMES = ("init", "dropout", "gumbel", "shuffle", "split", "synth")


def stream_key(name: str) -> int:
    """Stable 64-bit integer for a stream name (independent of PYTHONHASHSEED)."""
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def derive_generator(seed: int, name: str, *extra: int) -> np.random.Generator:
    """A fresh generator that is a pure function of (seed, stream name, extra ints)."""
    return np.random.default_rng([int(seed), stream_key(name), *[int(e) for e in extra]])


class Rng:
    """
    Seeded source of independent named streams (init, dropout, gumbel, shuffle, ...).
    The same seed and stream name always yield the same sequence, whatever order
    the streams are first requested in.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: Dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = derive_generator(self.seed, name)
        return self._streams[name]

    def state(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "streams": {name: gen.bit_generator.state for name, gen in sorted(self._streams.items())},
        }

    @classmethod
    def from_state(cls, state: Dict[str, Any]) -> "Rng":
        rng = cls(state["seed"])
        for name, bit_state in state.get("streams", {}).items():
            gen = rng.stream(name)
            gen.bit_generator.state = bit_state
        return rng
