"""Skill-conditioned trajectory diffusion over observation embeddings.

Plans are [batch, plan_len, obs_dim] arrays. The noise model is a temporal U-Net
with six residual blocks; every block adds a timestep projection and a
condition projection after its first convolution. A learned vector stands in for
the empty condition used by classifier-free guidance.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .numerics import (
    ConfigError,
    ContractError,
    ParamStore,
    Tensor,
    TrainingError,
    affine,
    avg_pool_time,
    concat,
    conv1d_temporal,
    group_norm,
    mish,
    no_grad,
    upsample_time,
    where,
)


@dataclass
class DiffusionSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def N(self) -> int:
        return len(self.betas)

    def posterior(self, i: int) -> tuple[float, float, float]:
        """(coef on x0, coef on x_i, variance) of q(x_{i-1} | x_i, x0)."""
        ab = self.alpha_bars[i]
        ab_prev = self.alpha_bars[i - 1] if i > 0 else 1.0
        beta = self.betas[i]
        c0 = beta * np.sqrt(ab_prev) / (1.0 - ab)
        ct = (1.0 - ab_prev) * np.sqrt(self.alphas[i]) / (1.0 - ab)
        var = beta * (1.0 - ab_prev) / (1.0 - ab)
        return c0, ct, var


def make_schedule(N: int, beta_start: float, beta_end: float) -> DiffusionSchedule:
    if N < 2:
        raise ConfigError(f"need at least 2 diffusion steps, got {N}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, N)
    alphas = 1.0 - betas
    return DiffusionSchedule(betas, alphas, np.cumprod(alphas))


def forward_noise(tau0, i, eps, sched: DiffusionSchedule) -> np.ndarray:
    """Closed-form q(tau^i | tau^0). ``i`` may be a scalar or one index per batch row."""
    i_arr = np.asarray(i)
    if np.any(i_arr < 0) or np.any(i_arr >= sched.N):
        raise ContractError(f"diffusion step out of range [0, {sched.N})")
    ab = sched.alpha_bars[i_arr]
    tau0 = np.asarray(tau0, dtype=np.float64)
    if ab.ndim:
        ab = ab.reshape(ab.shape + (1,) * (tau0.ndim - ab.ndim))
    return np.sqrt(ab) * tau0 + np.sqrt(1.0 - ab) * np.asarray(eps)


def cfg_epsilon(eps_null, eps_cond, omega: float):
    """Guided noise estimate: eps_null + omega * (eps_cond - eps_null)."""
    eps_null = np.asarray(eps_null, dtype=np.float64)
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    if eps_null.shape != eps_cond.shape:
        raise ContractError(f"cfg_epsilon shapes differ: {eps_null.shape} vs {eps_cond.shape}")
    return eps_null + omega * (eps_cond - eps_null)


def cfg_epsilon_convex(eps_null, eps_cond, omega: float):
    """The same estimate written as (1 - omega) * eps_null + omega * eps_cond."""
    return (1.0 - omega) * np.asarray(eps_null) + omega * np.asarray(eps_cond)


# -- noise model -------------------------------------------------------------------

def timestep_features(i, dim: int) -> np.ndarray:
    i = np.atleast_1d(np.asarray(i, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = i[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


class TemporalUNet:
    """Noise model eps_theta(tau^i, cond, i) with parameters under ``prefix`` in ``store``."""

    BLOCKS = ("down1", "down2", "mid1", "mid2", "up1", "up2")

    def __init__(self, store: ParamStore, obs_dim: int, cond_dim: int, rng: np.random.Generator,
                 channels: int = 32, kernel: int = 5, groups: int = 8, time_dim: int = 32,
                 prefix: str = "diffuser"):
        if kernel % 2 == 0:
            raise ConfigError("U-Net kernel width must be odd")
        self.store = store
        self.obs_dim = obs_dim
        self.cond_dim = cond_dim
        self.kernel = kernel
        self.groups = groups
        self.time_dim = time_dim
        self.prefix = prefix
        C = channels
        widths = {"down1": (obs_dim, C), "down2": (C, 2 * C), "mid1": (2 * C, 2 * C),
                  "mid2": (2 * C, 2 * C), "up1": (4 * C, C), "up2": (2 * C, C)}
        self.widths = widths
        p = prefix
        store.add(f"{p}.null_cond", rng.normal(0.0, 1.0, cond_dim))
        self._dense(f"{p}.time1", time_dim, 2 * time_dim, rng)
        self._dense(f"{p}.time2", 2 * time_dim, time_dim, rng)
        for name, (cin, cout) in widths.items():
            b = f"{p}.{name}"
            self._conv(f"{b}.conv1", cin, cout, kernel, rng)
            self._conv(f"{b}.conv2", cout, cout, kernel, rng)
            for k in ("gn1", "gn2"):
                store.add(f"{b}.{k}.gain", np.ones(cout))
                store.add(f"{b}.{k}.bias", np.zeros(cout))
            self._dense(f"{b}.time", time_dim, cout, rng)
            self._dense(f"{b}.cond", cond_dim, cout, rng)
            if cin != cout:
                self._conv(f"{b}.res", cin, cout, 1, rng)
        self._conv(f"{p}.final", C, obs_dim, 1, rng)

    def _dense(self, name, fin, fout, rng):
        self.store.add(f"{name}.w", rng.normal(0.0, 1.0 / np.sqrt(fin), (fin, fout)))
        self.store.add(f"{name}.b", np.zeros(fout))

    def _conv(self, name, cin, cout, k, rng):
        self.store.add(f"{name}.w", rng.normal(0.0, 1.0 / np.sqrt(cin * k), (cout, cin, k)))
        self.store.add(f"{name}.b", np.zeros(cout))

    @property
    def null_cond(self) -> Tensor:
        return self.store[f"{self.prefix}.null_cond"]

    def _lin(self, name, x):
        return affine(x, self.store[f"{name}.w"], self.store[f"{name}.b"])

    def _cv(self, name, x):
        return conv1d_temporal(x, self.store[f"{name}.w"], self.store[f"{name}.b"])

    def _gn(self, name, x):
        return group_norm(x, self.groups, self.store[f"{name}.gain"], self.store[f"{name}.bias"])

    def _block(self, name, x, t_emb, c_emb):
        b = f"{self.prefix}.{name}"
        h = mish(self._gn(f"{b}.gn1", self._cv(f"{b}.conv1", x)))
        inject = self._lin(f"{b}.time", t_emb) + self._lin(f"{b}.cond", c_emb)
        h = h + inject.reshape(inject.shape[0], inject.shape[1], 1)
        h = mish(self._gn(f"{b}.gn2", self._cv(f"{b}.conv2", h)))
        res = self._cv(f"{b}.res", x) if f"{b}.res.w" in self.store else x
        return h + res

    def __call__(self, tau_i, cond, i) -> Tensor:
        """Predict the noise in ``tau_i`` [B, L, D]; ``cond`` [B, cond_dim] or None for the null condition."""
        x = tau_i if isinstance(tau_i, Tensor) else Tensor(np.asarray(tau_i, dtype=np.float64))
        if x.ndim != 3 or x.shape[2] != self.obs_dim:
            raise ContractError(f"expected plans [B, L, {self.obs_dim}], got {x.shape}")
        B, L, _ = x.shape
        if L % 4:
            raise ConfigError(f"plan length must be divisible by 4, got {L}")
        steps = np.broadcast_to(np.asarray(i), (B,))
        if cond is None:
            cond = self.null_cond.reshape(1, self.cond_dim) + Tensor(np.zeros((B, self.cond_dim)))
        elif not isinstance(cond, Tensor):
            cond = Tensor(np.broadcast_to(np.asarray(cond, dtype=np.float64), (B, self.cond_dim)))
        p = self.prefix
        t_emb = self._lin(f"{p}.time2", mish(self._lin(f"{p}.time1",
                                                      Tensor(timestep_features(steps, self.time_dim)))))
        h = x.transpose(0, 2, 1)
        h1 = self._block("down1", h, t_emb, cond)
        h2 = self._block("down2", avg_pool_time(h1), t_emb, cond)
        m = self._block("mid1", avg_pool_time(h2), t_emb, cond)
        m = self._block("mid2", m, t_emb, cond)
        u = self._block("up1", concat([upsample_time(m), h2], axis=1), t_emb, cond)
        u = self._block("up2", concat([upsample_time(u), h1], axis=1), t_emb, cond)
        out = self._cv(f"{p}.final", u).transpose(0, 2, 1)
        if not np.all(np.isfinite(out.data)):
            raise TrainingError("noise model produced non-finite activations")
        return out


NoiseFn = Callable[[object, object, object], Tensor]


def predict_noise(tau_i, cond, i, model: NoiseFn) -> Tensor:
    """Noise estimate for one plan [L, D] or a batch [B, L, D]; ``cond=None`` is the null condition."""
    if np.ndim(tau_i.data if isinstance(tau_i, Tensor) else tau_i) == 2:
        x = tau_i if isinstance(tau_i, Tensor) else Tensor(np.asarray(tau_i, dtype=np.float64))
        out = model(x.reshape(1, *x.shape), cond, i)
        return out.reshape(*x.shape)
    return model(tau_i, cond, i)


def apply_dropout(cond: Tensor, null: Tensor, drop: np.ndarray) -> Tensor:
    """Swap in the null condition on rows where ``drop`` is true."""
    return where(np.asarray(drop)[:, None], null.reshape(1, -1), cond)


def diff_loss(tau0, cond: Tensor, sched: DiffusionSchedule, model: NoiseFn, beta_dropout: float,
              rng: np.random.Generator, mask: np.ndarray | None = None,
              null: Tensor | None = None, anchor: bool = True) -> Tensor:
    """Condition-dropout denoising loss, averaged over unmasked plan entries.

    With ``anchor`` the first plan row is fed clean (as the sampler does) and
    excluded from the loss.
    """
    if not 0.0 <= beta_dropout <= 1.0:
        raise ContractError("beta_dropout must lie in [0, 1]")
    tau0 = np.asarray(tau0, dtype=np.float64)
    B, L, D = tau0.shape
    i = rng.integers(0, sched.N, size=B)
    eps = rng.standard_normal(tau0.shape)
    drop = rng.random(B) < beta_dropout
    x_i = forward_noise(tau0, i, eps, sched)
    w = np.ones((B, L)) if mask is None else np.asarray(mask, dtype=np.float64).copy()
    if anchor:
        x_i[:, 0] = tau0[:, 0]
        w[:, 0] = 0.0
    if null is None:
        null = getattr(model, "null_cond", None)
    if null is None:
        raise ContractError("diff_loss needs a null condition")
    used = apply_dropout(cond, null, drop)
    pred = model(x_i, used, i)
    err = Tensor(eps) - pred
    weights = Tensor(w[:, :, None] / (w.sum() * D))
    return (err * err * weights).sum()


def sample_plan(current_obs_embed, cond, sched: DiffusionSchedule, model: NoiseFn, omega: float,
                rng: np.random.Generator, plan_len: int) -> np.ndarray:
    """Guided ancestral sampling with the first row clamped to ``current_obs_embed``.

    ``current_obs_embed`` is [D] or [B, D]; ``cond`` is the matching [cond_dim] /
    [B, cond_dim] conditioning or None for the unguided sampler, which never
    evaluates the conditional branch.
    """
    s0 = np.asarray(current_obs_embed, dtype=np.float64)
    single = s0.ndim == 1
    s0 = np.atleast_2d(s0)
    B, D = s0.shape
    if cond is not None:
        cond = np.broadcast_to(np.asarray(cond.data if isinstance(cond, Tensor) else cond,
                                          dtype=np.float64), (B, np.shape(cond)[-1]))
    x = rng.standard_normal((B, plan_len, D))
    x[:, 0] = s0
    with no_grad():
        for i in reversed(range(sched.N)):
            eps_null = model(x, None, i).data
            if cond is None:
                eps = eps_null
            else:
                eps = cfg_epsilon(eps_null, model(x, cond, i).data, omega)
            ab = sched.alpha_bars[i]
            x0 = np.clip((x - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab), -1.0, 1.0)
            c0, ct, var = sched.posterior(i)
            x = c0 * x0 + ct * x
            if i > 0:
                x = x + np.sqrt(var) * rng.standard_normal(x.shape)
            x[:, 0] = s0
    return x[0] if single else x
