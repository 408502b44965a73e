"""Inverse dynamics: (s_t, s_{t+1}, raw observation) -> action."""
from __future__ import annotations

import numpy as np

from .numerics import ConfigError, ParamStore, Tensor, affine, concat, mish


class InverseDynamics:
    """Two affine layers with a Mish between; the only task-swappable module."""

    def __init__(self, store: ParamStore, obs_dim: int, raw_dim: int, action_dim: int,
                 rng: np.random.Generator, hidden: int = 128, family: str = "toyworld",
                 zero_out: bool = False):
        self.store = store
        self.obs_dim = obs_dim
        self.raw_dim = raw_dim
        self.action_dim = action_dim
        self.prefix = f"invdyn.{family}"
        fin = 2 * obs_dim + raw_dim
        store.add(f"{self.prefix}.l1.w", rng.normal(0.0, 1.0 / np.sqrt(fin), (fin, hidden)))
        store.add(f"{self.prefix}.l1.b", np.zeros(hidden))
        w2 = np.zeros((hidden, action_dim)) if zero_out else rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, action_dim))
        store.add(f"{self.prefix}.l2.w", w2)
        store.add(f"{self.prefix}.l2.b", np.zeros(action_dim))

    def forward(self, s_t, s_next, raw_obs) -> Tensor:
        parts = [np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (s_t, s_next, raw_obs)]
        widths = (self.obs_dim, self.obs_dim, self.raw_dim)
        for arr, w in zip(parts, widths):
            if arr.shape[-1] != w:
                raise ConfigError(f"inverse dynamics input width {arr.shape[-1]} != {w}")
        x = concat([Tensor(p) for p in parts], axis=-1)
        p = self.prefix
        h = mish(affine(x, self.store[f"{p}.l1.w"], self.store[f"{p}.l1.b"]))
        return affine(h, self.store[f"{p}.l2.w"], self.store[f"{p}.l2.b"])


def infer_action(s_t, s_next, raw_obs, model: InverseDynamics) -> np.ndarray:
    """Decoded action clipped to the [-1, 1] action box. Batched inputs give [B, action_dim]."""
    single = np.ndim(s_t) == 1
    a = np.clip(model.forward(s_t, s_next, raw_obs).data, -1.0, 1.0)
    return a[0] if single else a


def inv_loss(s_t, s_next, raw_obs, a_true, model: InverseDynamics) -> Tensor:
    """Element-mean squared error between decoded and demonstrated actions (no clipping)."""
    a_true = np.atleast_2d(np.asarray(a_true, dtype=np.float64))
    if len(a_true) == 0:
        raise ValueError("empty transition batch")
    err = model.forward(s_t, s_next, raw_obs) - Tensor(a_true)
    return (err * err).mean()
