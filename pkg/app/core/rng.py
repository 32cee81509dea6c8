"""
Seeded random streams.

All randomness derives from one 64-bit run seed. Each consumer asks for a
named sub-stream ("synth/identity/7", "train/detector/shuffle", ...) whose
generator depends only on (seed, name), never on call order elsewhere.
"""
import hashlib
from typing import Any, Dict

import numpy as np


def _name_key(name: str) -> list:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


class RngStreams:
    def __init__(self, seed: int):
        if not 0 <= seed < 2 ** 64:
            raise ValueError(f"seed must fit in 64 bits, got {seed}")
        self.seed = int(seed)

    def stream(self, name: str) -> np.random.Generator:
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=_name_key(name))
        return np.random.Generator(np.random.PCG64(sequence))

    def __repr__(self) -> str:
        return f"RngStreams(seed={self.seed})"


def generator_state(rng: np.random.Generator) -> Dict[str, Any]:
    return rng.bit_generator.state


def restore_generator(state: Dict[str, Any]) -> np.random.Generator:
    bit_gen = np.random.PCG64()
    bit_gen.state = state
    return np.random.Generator(bit_gen)
