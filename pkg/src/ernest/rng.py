"""Seeded random streams.

Every random draw in the pipeline comes from a stream keyed by
``(master_seed, role, index)`` so that results never depend on the order in
which independent jobs run.
"""

from dataclasses import dataclass

import numpy as np

ROLES = {"embedder": 1, "dsae": 2, "split": 3, "synth": 4, "classifier": 5}

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    role: str
    index: int = 0

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown rng role {self.role!r}")
        if self.index < 0:
            raise ValueError("stream index must be non-negative")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(
            [self.master_seed & _MASK64, ROLES[self.role], self.index]
        )
        return np.random.Generator(np.random.PCG64(seq))


def rng_stream(master_seed: int, role: str, index: int = 0) -> np.random.Generator:
    """Fresh generator whose state is a pure function of its three keys."""
    return RngStream(int(master_seed), role, int(index)).generator()
