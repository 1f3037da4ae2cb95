"""Shared plumbing: error types, seed derivation, chunked dispatch."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


class BayesmemError(Exception):
    """Base class for library errors."""


class DataFormatError(BayesmemError):
    """Unreadable or corrupt on-disk data (shard or bank file)."""


class ValidationError(BayesmemError, ValueError):
    """Invalid argument, configuration, or precondition violation."""


_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    # Fixed-constant integer mixer; stable across platforms and runs,
    # unlike hash() which is salted for str inputs.
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(*parts: int) -> int:
    """Deterministically mix integer parts into one 63-bit seed.

    Used wherever a sub-seed must depend on (run seed, class id, ...) but
    stay stable across schedule reorderings and platforms.
    """
    state = 0x243F6A8885A308D3  # fixed starting constant
    for p in parts:
        state = _splitmix64(state ^ (int(p) & _MASK64))
    return state >> 1  # keep it a valid numpy seed (non-negative int64)


def resolve_threads(threads: int | None) -> int:
    """Resolve an effective thread cap: explicit arg, else BAYESMEM_THREADS, else 1."""
    if threads is not None:
        if threads < 1:
            raise ValidationError(f"threads must be >= 1, got {threads}")
        return threads
    env = os.environ.get("BAYESMEM_THREADS", "").strip()
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"BAYESMEM_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ValidationError(f"BAYESMEM_THREADS must be >= 1, got {n}")
        return n
    return 1


def run_chunked(fn, n_items: int, chunk: int, threads: int):
    """Apply fn(start, stop) over fixed-size chunks of range(n_items).

    Chunk boundaries depend only on `chunk`, never on `threads`, and every
    chunk is independent, so results are identical for any thread count.
    Return values are collected in chunk order.
    """
    bounds = [(s, min(s + chunk, n_items)) for s in range(0, n_items, chunk)]
    if threads <= 1 or len(bounds) <= 1:
        return [fn(s, e) for s, e in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, s, e) for s, e in bounds]
        return [f.result() for f in futures]
