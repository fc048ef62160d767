"""Stateless 64-bit seed derivation so workers never share RNG state."""

from __future__ import annotations

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(x: int) -> int:
    """splitmix64 finalizer: a bijective avalanche mix on 64-bit integers."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(master: int, *path: int | str) -> int:
    """Seed for ``path`` under ``master``; e.g. ``derive_seed(m, index)`` per instance and
    ``derive_seed(s, "noise", "VP")`` per stage. Strings are folded in by their UTF-8 bytes."""
    state = mix64((master & MASK64) + GOLDEN)
    for part in path:
        if isinstance(part, str):
            for b in part.encode("utf-8"):
                state = mix64(state ^ (b + GOLDEN))
            state = mix64(state + GOLDEN)
        else:
            state = mix64(state ^ ((int(part) & MASK64) + GOLDEN))
    return state
