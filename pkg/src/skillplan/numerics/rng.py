"""Seeded counter-based generators (Philox) with named sub-streams."""
from __future__ import annotations

import numpy as np


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for ``seed`` and an optional integer stream path.

    Distinct stream paths give statistically independent generators, so callers
    can split randomness by purpose without sharing a cursor.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(s) for s in stream]])
    return np.random.Generator(np.random.Philox(ss))


def split(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derive ``n`` child generators from ``rng`` (advances ``rng``)."""
    keys = rng.integers(0, 2**63 - 1, size=n)
    return [np.random.Generator(np.random.Philox(np.random.SeedSequence(int(k)))) for k in keys]


def rng_state(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return {k: (v.tolist() if isinstance(v, np.ndarray) else
                {kk: (vv.tolist() if isinstance(vv, np.ndarray) else vv) for kk, vv in v.items()}
                if isinstance(v, dict) else v)
            for k, v in state.items()}


def restore_rng(state: dict) -> np.random.Generator:
    bg = np.random.Philox()
    st = dict(state)
    st["state"] = {k: np.array(v, dtype=np.uint64) for k, v in state["state"].items()}
    st["buffer"] = np.array(state["buffer"], dtype=np.uint64)
    bg.state = st
    return np.random.Generator(bg)
