"""Finite-difference checks for every differentiable building block, at small sizes."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .diffusion import TemporalUNet, diff_loss, make_schedule
from .invdyn import InverseDynamics, inv_loss
from .numerics import (ParamStore, Tensor, affine, conv1d_temporal, finite_difference_check,
                       group_norm, make_rng, mish)
from .skills import init_predictor, init_skill_embed, predict_skill, skill_embed

TOLERANCE = 1e-4
STEP = 1e-5


def _leaf(rng, *shape) -> Tensor:
    return Tensor(rng.normal(0.0, 1.0, shape), requires_grad=True)


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    # a random projection gives every output coordinate a distinct, non-trivial gradient
    return (out * Tensor(w)).sum()


def _check_affine(rng):
    x, W, b = _leaf(rng, 3, 4), _leaf(rng, 4, 5), _leaf(rng, 5)
    w = rng.normal(size=(3, 5))
    return finite_difference_check(lambda: _weighted(affine(x, W, b), w), [x, W, b], STEP)


def _check_conv(rng):
    x, k, b = _leaf(rng, 2, 3, 7), _leaf(rng, 4, 3, 5), _leaf(rng, 4)
    w = rng.normal(size=(2, 4, 7))
    return finite_difference_check(lambda: _weighted(conv1d_temporal(x, k, b), w), [x, k, b], STEP)


def _check_group_norm(rng):
    x, g, b = _leaf(rng, 2, 4, 6), _leaf(rng, 4), _leaf(rng, 4)
    w = rng.normal(size=(2, 4, 6))
    return finite_difference_check(lambda: _weighted(group_norm(x, 2, g, b), w), [x, g, b], STEP)


def _check_mish(rng):
    x = _leaf(rng, 3, 5)
    w = rng.normal(size=(3, 5))
    return finite_difference_check(lambda: _weighted(mish(x), w), [x], STEP)


def _check_predictor(rng):
    store = ParamStore()
    init_predictor(store, 6, 5, 3, rng, dim=8)
    s, l = _leaf(rng, 2, 6), _leaf(rng, 2, 5)
    w = rng.normal(size=(2, 3))
    params = [s, l] + [store[n] for n in store]
    return finite_difference_check(lambda: _weighted(predict_skill(s, l, store, heads=2), w),
                                   params, STEP, coords=6, rng=rng)


def _check_skill_embed(rng):
    store = ParamStore()
    init_skill_embed(store, 3, 4, rng, hidden=6)
    z = _leaf(rng, 2, 3)
    w = rng.normal(size=(2, 4))
    return finite_difference_check(lambda: _weighted(skill_embed(z, store), w),
                                   [z] + [store[n] for n in store], STEP)


def _check_noise_model(rng):
    store = ParamStore()
    unet = TemporalUNet(store, 3, 4, rng, channels=4, kernel=3, groups=2, time_dim=4)
    sched = make_schedule(10, 1e-3, 0.3)
    tau0 = rng.uniform(-1.0, 1.0, (2, 8, 3))
    cond = _leaf(rng, 2, 4)
    loss_seed = int(rng.integers(1 << 30))

    def loss():
        return diff_loss(tau0, cond, sched, unet, 0.5, make_rng(loss_seed))
    return finite_difference_check(loss, [cond] + [store[n] for n in store], STEP, coords=4, rng=rng)


def _check_invdyn(rng):
    store = ParamStore()
    model = InverseDynamics(store, 3, 4, 2, rng, hidden=6)
    s, sn, raw = rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), rng.normal(size=(5, 4))
    a = rng.uniform(-1, 1, (5, 2))
    return finite_difference_check(lambda: inv_loss(s, sn, raw, a, model), [store[n] for n in store], STEP)


CHECKS: dict[str, Callable[[np.random.Generator], float]] = {
    "affine": _check_affine,
    "conv1d_temporal": _check_conv,
    "group_norm": _check_group_norm,
    "mish": _check_mish,
    "skill_predictor": _check_predictor,
    "skill_embed": _check_skill_embed,
    "noise_model": _check_noise_model,
    "inverse_dynamics": _check_invdyn,
}


def gradient_suite(seed: int) -> dict[str, float]:
    """Max relative error per building block for one seed."""
    return {name: fn(make_rng(seed, 606, i)) for i, (name, fn) in enumerate(CHECKS.items())}
