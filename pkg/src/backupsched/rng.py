"""Seeded random streams.

Every stream is a Philox (counter-based) generator keyed by the run seed plus
a stream name, so streams are independent and adding a new consumer never
shifts the numbers another one sees.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    key = [int(seed), zlib.crc32(name.encode()), *map(int, extra)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def get_state(gen: np.random.Generator) -> dict:
    """JSON-friendly copy of a generator's state."""
    return _to_jsonable(gen.bit_generator.state)


def set_state(gen: np.random.Generator, state: dict) -> None:
    bg = gen.bit_generator
    current = bg.state
    bg.state = _from_jsonable(state, current)


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return {"__array__": obj.tolist(), "dtype": str(obj.dtype)}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _from_jsonable(obj, like):
    if isinstance(obj, dict) and "__array__" in obj:
        return np.array(obj["__array__"], dtype=obj["dtype"])
    if isinstance(obj, dict):
        return {k: _from_jsonable(v, like.get(k) if isinstance(like, dict) else None) for k, v in obj.items()}
    return obj
