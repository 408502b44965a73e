"""Two-optimizer training over per-trajectory skill blocks."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agent import (CONFIG_FILE, MODEL_FILE, VOCAB_FILE, Agent, build_agent, decode_json,
                    encode_json)
from .config import Config
from .diffusion import diff_loss
from .encoders import Vocabulary
from .invdyn import inv_loss
from .numerics import (TrainingError, adam_step, load_tensors, make_rng, restore_rng, rng_state,
                       save_tensors)
from .skills import ema_update, reseed_dead_codes
from .toyworld import Dataset, read_dataset

METRICS_HEADER = "step,l_vq,l_diff,l_inv,codebook_util"
METRICS_FILE = "metrics.csv"
UTIL_WINDOW = 100
_TRAIN_STREAM = 303


class InputError(ValueError):
    """The training input (dataset) is missing, unreadable or empty."""


@dataclass
class TrainArrays:
    """Dataset pre-encoded once: embeddings never change because the encoders are frozen."""
    emb: np.ndarray      # [N, T + 1, obs_dim]
    raw: np.ndarray      # [N, T + 1, raw_dim]
    actions: np.ndarray  # [N, T, action_dim]
    lang: np.ndarray     # [N, lang_dim]

    @property
    def T(self) -> int:
        return self.actions.shape[1]

    def __len__(self) -> int:
        return len(self.actions)


def encode_dataset(ds: Dataset, agent: Agent) -> TrainArrays:
    raw = np.stack([t.observations for t in ds.trajectories])
    return TrainArrays(agent.embed_obs(raw), raw, np.stack([t.actions for t in ds.trajectories]),
                       np.stack([agent.embed_instruction(t.instruction) for t in ds.trajectories]))


def block_starts(T: int, H: int) -> list[int]:
    """First timestep of each skill block: k*H for k = 0 .. T // H."""
    return [k * H for k in range(T // H + 1)]


def skill_windows(emb: np.ndarray, T: int, H: int, plan_len: int):
    """Plan windows for every trajectory and block.

    Returns ``(starts, windows [B*K, plan_len, D], mask [B*K, plan_len])``; rows
    past the trajectory end repeat the last state and are masked out.
    """
    starts = block_starts(T, H)
    B, _, D = emb.shape
    win = np.empty((B, len(starts), plan_len, D))
    mask = np.zeros((B, len(starts), plan_len))
    for k, t0 in enumerate(starts):
        n = min(plan_len, T + 1 - t0)
        win[:, k, :n] = emb[:, t0:t0 + n]
        win[:, k, n:] = emb[:, T:T + 1]
        mask[:, k, :n] = 1.0
    return starts, win.reshape(B * len(starts), plan_len, D), mask.reshape(B * len(starts), plan_len)


@dataclass
class TrainState:
    step: int
    rng: np.random.Generator
    last_used: np.ndarray  # last step each code was selected (-inf if never)


def new_state(agent: Agent, seed: int) -> TrainState:
    size = agent.config.planner.skill_set_size
    return TrainState(0, make_rng(seed, _TRAIN_STREAM), np.full(size, -np.inf))


def codebook_utilization(state: TrainState) -> float:
    """Fraction of codes selected at least once in the last ``UTIL_WINDOW`` steps."""
    return float(np.mean(state.last_used > state.step - UTIL_WINDOW))


def _check(name: str, value: float, step: int) -> float:
    if not np.isfinite(value):
        raise TrainingError(f"non-finite {name} at step {step}")
    return value


def train_step(agent: Agent, data: TrainArrays, state: TrainState) -> dict[str, float]:
    """One optimisation step; mutates the agent and ``state`` and returns the losses."""
    pc, tc = agent.config.planner, agent.config.train
    rng = state.rng
    n = len(data)
    batch = rng.choice(n, size=tc.batch_size, replace=n < tc.batch_size)
    T = data.T
    emb = data.emb[batch]
    starts, windows, mask = skill_windows(emb, T, pc.horizon, pc.plan_len)
    K = len(starts)
    s_now = emb[:, starts].reshape(-1, emb.shape[-1])
    lang = np.repeat(data.lang[batch], K, axis=0)

    # optimizer A: skill predictor + planner on L_VQ + lambda * L_diff
    cond, idx, z_tilde, l_vq = agent.condition(s_now, lang)
    l_diff = diff_loss(windows, cond, agent.schedule, agent.unet, pc.cond_dropout, rng, mask=mask)
    total = l_diff * tc.loss_weight
    if l_vq is not None:
        total = total + l_vq
    vq_value = _check("l_vq", l_vq.item(), state.step) if l_vq is not None else 0.0
    _check("l_diff", l_diff.item(), state.step)
    total.backward()
    if agent.codebook is not None:
        # one EMA update per batch, after the forward pass and before the optimizer step
        ema_update(agent.codebook, z_tilde.data, idx)
        reseed_dead_codes(agent.codebook, z_tilde.data, pc.staleness_threshold, rng)
        state.last_used[np.unique(idx)] = state.step
        if state.step % tc.skill_update_period == 0:
            adam_step(agent.skill, tc.lr_skill)
        else:
            agent.skill.zero_grad()
    adam_step(agent.planner, tc.lr_diffuser)

    # optimizer B: inverse dynamics on every transition in the batch
    D = emb.shape[-1]
    l_inv = inv_loss(emb[:, :-1].reshape(-1, D), emb[:, 1:].reshape(-1, D),
                     data.raw[batch, :-1].reshape(-1, data.raw.shape[-1]),
                     data.actions[batch].reshape(-1, data.actions.shape[-1]), agent.invdyn)
    _check("l_inv", l_inv.item(), state.step)
    l_inv.backward()
    adam_step(agent.invdyn_store, tc.lr_invdyn)

    metrics = {"step": state.step, "l_vq": vq_value, "l_diff": l_diff.item(), "l_inv": l_inv.item(),
               "codebook_util": codebook_utilization(state) if agent.codebook is not None else 0.0}
    state.step += 1
    return metrics


def metrics_line(m: dict) -> str:
    return f"{m['step']},{m['l_vq']!r},{m['l_diff']!r},{m['l_inv']!r},{m['codebook_util']!r}"


# -- checkpoints ------------------------------------------------------------------------

def checkpoint_arrays(agent: Agent, state: TrainState) -> dict[str, np.ndarray]:
    out = agent.arrays()
    out.update(agent.skill.optimizer_arrays("opt.skill."))
    out.update(agent.planner.optimizer_arrays("opt.planner."))
    out.update(agent.invdyn_store.optimizer_arrays("opt.invdyn."))
    out["train.step"] = np.array([float(state.step)])
    out["train.last_used"] = state.last_used
    out["train.rng"] = encode_json(rng_state(state.rng))
    return out


def restore_checkpoint(agent: Agent, path: str | Path) -> TrainState:
    arrays = load_tensors(path)
    agent.load_arrays(arrays)
    agent.skill.load_optimizer_arrays(arrays, "opt.skill.")
    agent.planner.load_optimizer_arrays(arrays, "opt.planner.")
    agent.invdyn_store.load_optimizer_arrays(arrays, "opt.invdyn.")
    return TrainState(int(arrays["train.step"][0]), restore_rng(decode_json(arrays["train.rng"])),
                      np.array(arrays["train.last_used"]))


def load_training_data(path: str | Path) -> Dataset:
    try:
        ds = read_dataset(path)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read dataset {path}: {exc}") from exc
    if len(ds) == 0:
        raise InputError(f"dataset {path} holds no trajectories")
    return ds


def run_training(dataset_path: str | Path, config: Config, out_dir: str | Path,
                 resume: str | Path | None = None, log=None) -> Agent:
    """Train from a dataset file, writing checkpoints, vocabulary, config and metrics to ``out_dir``.

    With ``resume`` the run continues from a checkpoint written by an earlier call
    and appends to its metrics log.
    """
    config.validate()
    ds = load_training_data(dataset_path)
    tc = config.train
    vocab = Vocabulary([tok for t in ds.trajectories for tok in t.instruction],
                       config.planner.lang_dim, config.planner.encoder_seed)
    agent = build_agent(config, vocab, tc.seed)
    data = encode_dataset(ds, agent)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / METRICS_FILE
    if resume is None:
        state = new_state(agent, tc.seed)
        metrics_path.write_text(METRICS_HEADER + "\n")
    else:
        state = restore_checkpoint(agent, resume)
        # drop log rows written after the checkpoint so a resumed run replays them exactly
        kept = [ln for ln in metrics_path.read_text().splitlines()[1:] if int(ln.split(",")[0]) < state.step]
        metrics_path.write_text("\n".join([METRICS_HEADER, *kept]) + "\n")
    (out / CONFIG_FILE).write_text(config.to_text())
    vocab.save(out / VOCAB_FILE)
    with metrics_path.open("a") as fh:
        while state.step < tc.steps:
            m = train_step(agent, data, state)
            fh.write(metrics_line(m) + "\n")
            if log is not None:
                log(m)
            if tc.checkpoint_every and state.step % tc.checkpoint_every == 0:
                fh.flush()
                save_tensors(out / f"checkpoint_{state.step:06d}.skdf", checkpoint_arrays(agent, state))
    save_tensors(out / MODEL_FILE, agent.arrays())
    return agent


def config_with(config: Config, **overrides) -> Config:
    """Copy of ``config`` with planner/train fields replaced by keyword."""
    planner = {k: v for k, v in overrides.items() if k in {f.name for f in dataclasses.fields(config.planner)}}
    train = {k: v for k, v in overrides.items() if k not in planner}
    return Config(dataclasses.replace(config.planner, **planner),
                  dataclasses.replace(config.train, **train)).validate()
