"""Named seed derivation.

Every random draw in the pipeline descends from one root seed through a
named path (stage, establishment, iteration, tree, ...), so partial
re-runs agree with full runs and independent streams never collide.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive(root_seed: int, *path: int | str) -> int:
    """64-bit sub-seed for ``root_seed`` and a named derivation path."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root_seed) & _MASK64).encode())
    for part in path:
        h.update(b"/")
        h.update(str(part).encode())
    return int.from_bytes(h.digest(), "little")


def rng(root_seed: int, *path: int | str) -> np.random.Generator:
    """NumPy generator seeded from the derived sub-seed."""
    return np.random.default_rng(derive(root_seed, *path))
