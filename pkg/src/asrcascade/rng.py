"""Deterministic random stream derivation.

Every random choice in the package flows from one 64-bit root seed. Child
streams are derived with a splitmix64 hash of the root seed and a stream
label, so adding a new consumer never perturbs existing streams and any
subcommand can be reproduced in isolation from (seed, label).
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 scramble step on a 64-bit integer."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def derive_seed(root_seed: int, label: str) -> int:
    """Derive a child seed from a root seed and a stream label."""
    h = splitmix64(root_seed & _MASK64)
    for byte in label.encode("utf-8"):
        h = splitmix64(h ^ byte)
    return h


def stream(root_seed: int, label: str) -> np.random.Generator:
    """Named child generator; stable in (root_seed, label)."""
    return np.random.default_rng(derive_seed(root_seed, label))
