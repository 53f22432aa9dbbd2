"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, domain, index)``; the
position inside a stream plays the role of the step/coordinate counter.
Streams for different indices never overlap, so replicas can be generated in
any order or in parallel with bit-identical results.
"""

from __future__ import annotations

import numpy as np

# Domain tags keep sde paths and matrix draws with equal (seed, index) apart.
SDE = 1
HERMITIAN = 2
SKEW = 3
IMPORTANCE = 4
MISC = 5

_MASK64 = (1 << 64) - 1


def stream(seed: int, index: int = 0, domain: int = MISC) -> np.random.Generator:
    if index < 0 or index >= (1 << 48):
        raise ValueError("stream index out of range")
    if not 0 <= domain < (1 << 16):
        raise ValueError("domain tag out of range")
    key = np.array([int(seed) & _MASK64, (domain << 48) | index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
