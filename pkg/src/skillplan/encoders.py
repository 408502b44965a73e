"""Frozen observation and instruction encoders.

Neither encoder owns trainable parameters: their tables are regenerated from a
seed and never enter a ParamStore.
"""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .numerics import ConfigError, make_rng

UNKNOWN = "<unk>"

_OBS_STREAM = 101
_LANG_STREAM = 202


def tokenize(text: str) -> list[str]:
    return text.lower().split()


class ObservationEncoder:
    """e = tanh(P @ raw) with a fixed Gaussian projection, P ~ N(0, 1/raw_dim)."""

    def __init__(self, raw_dim: int, embed_dim: int, seed: int):
        self.raw_dim = raw_dim
        self.embed_dim = embed_dim
        self.seed = seed
        rng = make_rng(seed, _OBS_STREAM)
        self.projection = rng.normal(0.0, 1.0 / np.sqrt(raw_dim), size=(embed_dim, raw_dim))
        self.projection.setflags(write=False)

    def __call__(self, raw_obs) -> np.ndarray:
        return encode_observation(raw_obs, self)


def encode_observation(raw_obs, encoder: ObservationEncoder) -> np.ndarray:
    """Embed one raw observation, or a stack of them along leading axes."""
    raw = np.asarray(raw_obs, dtype=np.float64)
    if raw.shape[-1] != encoder.raw_dim:
        raise ConfigError(f"observation width {raw.shape[-1]} != encoder raw_dim {encoder.raw_dim}")
    return np.tanh(raw @ encoder.projection.T)


class Vocabulary:
    """Token index plus a seeded embedding table; index 0 is reserved for unknown tokens.

    Row 0 is all zeros, so an unknown word adds nothing to the pooled direction.
    """

    def __init__(self, tokens: Iterable[str], lang_dim: int, seed: int):
        words = sorted({t.lower() for t in tokens} - {UNKNOWN})
        self.tokens = [UNKNOWN] + words
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.lang_dim = lang_dim
        self.seed = seed
        rng = make_rng(seed, _LANG_STREAM)
        table = rng.normal(0.0, 1.0, size=(len(self.tokens), lang_dim))
        table[0] = 0.0
        table.setflags(write=False)
        self.table = table

    def __len__(self) -> int:
        return len(self.tokens)

    def lookup(self, token: str) -> int:
        return self.index.get(token.lower(), 0)

    def save(self, path: str | Path) -> None:
        lines = [f"seed {self.seed}", f"lang_dim {self.lang_dim}"] + self.tokens[1:]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text().splitlines()
        seed = int(lines[0].split()[1])
        lang_dim = int(lines[1].split()[1])
        return cls([ln for ln in lines[2:] if ln], lang_dim, seed)


def encode_instruction(tokens: Sequence[str], vocab: Vocabulary) -> np.ndarray:
    """Mean of the per-token embedding rows (order-free)."""
    if len(tokens) == 0:
        raise ValueError("instruction has no tokens")
    # sorted rows make the pooled sum exactly order-independent
    rows = sorted(vocab.lookup(t) for t in tokens)
    return vocab.table[rows].mean(axis=0)
