"""Deterministic seed derivation and stream construction.

All randomness in the package flows from explicit integer seeds through
`make_stream`; replicate seeds are derived from a base seed with
`derive_seed`, a stateless hash so that replicate r of experiment e is the
same stream no matter which process computes it or in which order.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK63 = (1 << 63) - 1


def derive_seed(base: int, experiment_id: str, replicate: int) -> int:
    """Collision-resistant mix of (base seed, experiment id, replicate index)."""
    payload = f"{int(base)}|{experiment_id}|{int(replicate)}".encode()
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "little") & _MASK63


def make_stream(seed: int) -> np.random.Generator:
    """Fresh PCG64 generator; identical seeds give bit-identical streams."""
    return np.random.default_rng(int(seed))
