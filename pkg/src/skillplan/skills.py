"""Skill predictor, EMA vector-quantised skill codebook, and the skill embedding MLP."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import (
    ContractError,
    ParamStore,
    Tensor,
    affine,
    concat,
    mish,
    softmax,
    straight_through,
)

EMA_EPS = 1e-5
RESEED_COUNT = 1e-3


def _dense(store: ParamStore, name: str, fan_in: int, fan_out: int,
           rng: np.random.Generator, zero: bool = False, bias: bool = True) -> None:
    w = np.zeros((fan_in, fan_out)) if zero else rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out))
    store.add(f"{name}.w", w)
    if bias:
        store.add(f"{name}.b", np.zeros(fan_out))


def _apply(store: ParamStore, name: str, x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if f"{name}.b" not in store:
        return x @ store[f"{name}.w"]
    return affine(x, store[f"{name}.w"], store[f"{name}.b"])


# -- skill predictor ------------------------------------------------------------

def init_predictor(store: ParamStore, obs_dim: int, lang_dim: int, code_dim: int,
                   rng: np.random.Generator, dim: int = 128,
                   prefix: str = "skill.predictor", zero_out: bool = False) -> None:
    """One attention block over [instruction token, observation token]."""
    _dense(store, f"{prefix}.lang_in", lang_dim, dim, rng)
    _dense(store, f"{prefix}.obs_in", obs_dim, dim, rng)
    for part in ("q", "k", "v", "o"):
        # a key bias shifts every logit of a query equally, so softmax ignores it
        _dense(store, f"{prefix}.attn.{part}", dim, dim, rng, bias=part != "k")
    _dense(store, f"{prefix}.ff1", dim, 2 * dim, rng)
    _dense(store, f"{prefix}.ff2", 2 * dim, dim, rng)
    _dense(store, f"{prefix}.out", dim, code_dim, rng, zero=zero_out)


def predict_skill(s, l, store: ParamStore, heads: int = 4,
                  prefix: str = "skill.predictor") -> Tensor:
    """Latent skill z~ for observation embeddings ``s`` [B, obs] and instructions ``l`` [B, lang]."""
    s = s if isinstance(s, Tensor) else Tensor(np.atleast_2d(s))
    l = l if isinstance(l, Tensor) else Tensor(np.atleast_2d(l))
    tl = _apply(store, f"{prefix}.lang_in", l)
    ts = _apply(store, f"{prefix}.obs_in", s)
    B, D = tl.shape
    dh = D // heads
    x = concat([tl.reshape(B, 1, D), ts.reshape(B, 1, D)], axis=1)

    def split_heads(t: Tensor) -> Tensor:
        return t.reshape(B, 2, heads, dh).transpose(0, 2, 1, 3)

    q = split_heads(_apply(store, f"{prefix}.attn.q", x))
    k = split_heads(_apply(store, f"{prefix}.attn.k", x))
    v = split_heads(_apply(store, f"{prefix}.attn.v", x))
    att = softmax((q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh)), axis=-1)
    mixed = (att @ v).transpose(0, 2, 1, 3).reshape(B, 2, D)
    x = x + _apply(store, f"{prefix}.attn.o", mixed)
    x = x + _apply(store, f"{prefix}.ff2", mish(_apply(store, f"{prefix}.ff1", x)))
    return _apply(store, f"{prefix}.out", x.mean(axis=1))


# -- skill embedding (conditioning MLP) -------------------------------------------

def init_skill_embed(store: ParamStore, code_dim: int, cond_dim: int, rng: np.random.Generator,
                     hidden: int = 64, prefix: str = "skill.embed", zero_out: bool = False) -> None:
    _dense(store, f"{prefix}.l1", code_dim, hidden, rng)
    _dense(store, f"{prefix}.l2", hidden, cond_dim, rng, zero=zero_out)


def skill_embed(z, store: ParamStore, prefix: str = "skill.embed") -> Tensor:
    z = z if isinstance(z, Tensor) else Tensor(np.atleast_2d(z))
    return _apply(store, f"{prefix}.l2", mish(_apply(store, f"{prefix}.l1", z)))


# -- codebook --------------------------------------------------------------------

@dataclass
class SkillCodebook:
    codes: np.ndarray
    ema_counts: np.ndarray
    ema_sums: np.ndarray
    decay: float = 0.99
    staleness: np.ndarray | None = None

    def __post_init__(self):
        if self.staleness is None:
            self.staleness = np.zeros(len(self.codes))

    @classmethod
    def create(cls, size: int, code_dim: int, rng: np.random.Generator,
               decay: float = 0.99) -> "SkillCodebook":
        codes = rng.normal(0.0, 1.0 / np.sqrt(code_dim), size=(size, code_dim))
        counts = np.full(size, RESEED_COUNT)
        return cls(codes, counts, counts[:, None] * codes, decay)

    @property
    def size(self) -> int:
        return len(self.codes)

    def copy(self) -> "SkillCodebook":
        return SkillCodebook(self.codes.copy(), self.ema_counts.copy(), self.ema_sums.copy(),
                             self.decay, self.staleness.copy())

    def arrays(self, prefix: str = "codebook.") -> dict[str, np.ndarray]:
        return {f"{prefix}codes": self.codes, f"{prefix}ema_counts": self.ema_counts,
                f"{prefix}ema_sums": self.ema_sums, f"{prefix}staleness": self.staleness,
                f"{prefix}decay": np.array([self.decay])}

    @classmethod
    def from_arrays(cls, arrays, prefix: str = "codebook.") -> "SkillCodebook":
        return cls(np.array(arrays[f"{prefix}codes"]), np.array(arrays[f"{prefix}ema_counts"]),
                   np.array(arrays[f"{prefix}ema_sums"]), float(arrays[f"{prefix}decay"][0]),
                   np.array(arrays[f"{prefix}staleness"]))


def quantize(z_tilde, book: SkillCodebook) -> tuple[np.ndarray, np.ndarray]:
    """Nearest code per row (ties go to the lowest index). Accepts [d] or [B, d]."""
    if book.size == 0:
        raise ContractError("empty codebook")
    z = np.asarray(z_tilde.data if isinstance(z_tilde, Tensor) else z_tilde, dtype=np.float64)
    single = z.ndim == 1
    z2 = np.atleast_2d(z)
    d2 = ((z2[:, None, :] - book.codes[None, :, :]) ** 2).sum(axis=-1)
    idx = np.argmin(d2, axis=1)
    q = book.codes[idx]
    if single:
        return idx[0], q[0]
    return idx, q


def vq_loss(z_tilde: Tensor, z: np.ndarray) -> Tensor:
    """Batch mean of ||q(z~) - z~||^2; the codes are constants here."""
    diff = z_tilde - Tensor(np.asarray(z, dtype=np.float64))
    sq = diff * diff
    if sq.ndim == 1:
        return sq.sum()
    return sq.sum(axis=-1).mean()


def quantize_st(z_tilde: Tensor, book: SkillCodebook) -> tuple[np.ndarray, Tensor, Tensor]:
    """Quantise with a straight-through path; returns (indices, forwarded codes, vq loss)."""
    idx, z = quantize(z_tilde, book)
    return idx, straight_through(z_tilde, z), vq_loss(z_tilde, z)


def ema_update(book: SkillCodebook, batch_latents, batch_indices) -> SkillCodebook:
    """Move each code toward the running mean of the latents assigned to it (in place)."""
    lat = np.atleast_2d(np.asarray(batch_latents, dtype=np.float64))
    idx = np.asarray(batch_indices, dtype=np.int64).reshape(-1)
    if len(idx) != len(lat):
        raise ContractError("one index per latent required")
    if idx.size and (idx.min() < 0 or idx.max() >= book.size):
        raise ContractError(f"code index out of range [0, {book.size})")
    g = book.decay
    onehot = np.zeros((len(idx), book.size))
    onehot[np.arange(len(idx)), idx] = 1.0
    n = onehot.sum(axis=0)
    book.ema_counts = g * book.ema_counts + (1.0 - g) * n
    book.ema_sums = g * book.ema_sums + (1.0 - g) * (onehot.T @ lat)
    book.codes = book.ema_sums / np.maximum(book.ema_counts, EMA_EPS)[:, None]
    book.staleness = np.where(n > 0, 0.0, book.staleness + 1.0)
    return book


def reseed_dead_codes(book: SkillCodebook, recent_latents, staleness_threshold: int,
                      rng: np.random.Generator) -> SkillCodebook:
    """Reset codes unused for ``staleness_threshold`` updates to random recent latents."""
    lat = np.atleast_2d(np.asarray(recent_latents, dtype=np.float64))
    if len(lat) == 0:
        raise ContractError("need at least one recent latent to reseed from")
    dead = np.flatnonzero(book.staleness >= staleness_threshold)
    if dead.size == 0:
        return book
    picks = rng.choice(len(lat), size=dead.size, replace=dead.size > len(lat))
    book.codes = book.codes.copy()
    book.codes[dead] = lat[picks]
    book.ema_counts = book.ema_counts.copy()
    book.ema_counts[dead] = RESEED_COUNT
    book.ema_sums = book.ema_sums.copy()
    book.ema_sums[dead] = RESEED_COUNT * book.codes[dead]
    book.staleness = book.staleness.copy()
    book.staleness[dead] = 0.0
    return book

