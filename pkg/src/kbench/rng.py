"""Deterministic randomness for input materialization and trial seeding.

Two needs, two tools:

- Input tensors are generated with numpy's Philox counter-based generator,
  keyed by sha256 over (seed, input name).  Philox output is specified by its
  algorithm, not by platform, so the same (seed, name) yields the same tensor
  on any machine — and sibling inputs ("A" vs "B") decorrelate through the
  hash rather than through consecutive seeds.

- Per-trial seeds for stochastic validation come from a splitmix64 stream,
  which is trivially portable (64-bit integer arithmetic only) and cheap to
  reimplement in other languages, so out-of-process plugins can reproduce the
  exact stream.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_key(seed: int, name: str) -> int:
    """64-bit Philox key from a seed and a label, via sha256."""
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def input_generator(seed: int, name: str) -> np.random.Generator:
    """Counter-based generator for materializing one named input."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, name)))


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: (next_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, (z ^ (z >> 31)) & _MASK64


def trial_seeds(seed: int, count: int) -> list[int]:
    """The first ``count`` outputs of the splitmix64 stream seeded at ``seed``."""
    state = seed & _MASK64
    out = []
    for _ in range(count):
        state, value = splitmix64(state)
        out.append(value)
    return out
