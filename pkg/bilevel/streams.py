"""Deterministic random substreams.

Every batch a run draws (inner step S_t, D_F, D_G, each Neumann batch B_j)
comes from its own generator keyed by (run seed, run label, outer iteration,
role, index), so sample sets are mutually independent and a run replays
identically no matter how runs are scheduled.
"""

import zlib

import numpy as np
from typing_extensions import Self

from bilevel.errors import require

INNER = 'inner'
UPPER = 'upper'
HESSIAN = 'hessian'
JVP = 'jvp'

ROLE_ID = {INNER: 1, UPPER: 2, HESSIAN: 3, JVP: 4}


class Streams:
    """Factory for the substreams of one run at one outer iteration."""

    def __init__(self, seed: int, label: str = '', k: int = 0) -> None:
        require(int(seed) >= 0, f'seed must be non-negative, got {seed}')
        require(k >= 0, f'iteration must be non-negative, got {k}')
        self.seed = int(seed)
        self.label = label
        self.k = k
        # crc32 rather than hash() since str hashes are salted per process
        self.label_key = zlib.crc32(label.encode('utf-8'))

    def __repr__(self) -> str:
        return f'Streams(seed={self.seed}, label={self.label!r}, k={self.k})'

    def at(self, k: int) -> Self:
        """Returns the streams for outer iteration k of the same run."""
        return type(self)(self.seed, self.label, k)

    def generator(self, role: str, index: int = 0) -> np.random.Generator:
        """Returns a fresh generator for (role, index) at this iteration."""
        require(role in ROLE_ID, f'unknown stream role {role!r}')
        seq = np.random.SeedSequence(
            [self.seed, self.label_key, self.k, ROLE_ID[role], index])
        return np.random.default_rng(seq)


def stream_for(rng, role: str, index: int = 0) -> np.random.Generator:
    """Returns the generator to draw from for (role, index).

       rng may be a Streams (a keyed substream is derived) or a plain
       Generator (which is used as is, sequentially).
    """
    if isinstance(rng, np.random.Generator):
        return rng
    return rng.generator(role, index)
