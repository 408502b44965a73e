"""The assembled planner: frozen encoders, skill abstraction, noise model and inverse dynamics.

Trainable weights live in three separate stores so the two optimizers can never
touch each other's parameters:

* ``skill``   skill predictor (slow learning rate, thinned updates)
* ``planner`` skill embedding (or the flat condition map) plus the noise model
* ``invdyn``  inverse dynamics
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Config, load_config
from .diffusion import DiffusionSchedule, TemporalUNet, make_schedule
from .encoders import ObservationEncoder, Vocabulary, encode_instruction, encode_observation
from .invdyn import InverseDynamics
from .numerics import (ConfigError, ParamStore, Tensor, affine, concat, load_tensors, make_rng,
                       mish, save_tensors)
from .skills import (SkillCodebook, init_predictor, init_skill_embed, predict_skill, quantize,
                     quantize_st, skill_embed)

FLAT_PREFIX = "flat.cond"


@dataclass
class Agent:
    config: Config
    obs_encoder: ObservationEncoder
    vocab: Vocabulary
    skill: ParamStore
    planner: ParamStore
    invdyn_store: ParamStore
    codebook: SkillCodebook | None
    schedule: DiffusionSchedule
    unet: TemporalUNet
    invdyn: InverseDynamics

    @property
    def flat(self) -> bool:
        return self.config.planner.flat

    def num_parameters(self) -> int:
        """Trainable values plus codebook entries."""
        n = self.skill.num_values() + self.planner.num_values() + self.invdyn_store.num_values()
        return n + (self.codebook.codes.size if self.codebook is not None else 0)

    # -- encoders ---------------------------------------------------------------
    def embed_obs(self, raw) -> np.ndarray:
        return encode_observation(raw, self.obs_encoder)

    def embed_instruction(self, tokens) -> np.ndarray:
        return encode_instruction(tokens, self.vocab)

    # -- conditioning -----------------------------------------------------------
    def condition(self, s_emb, l_emb):
        """Diffuser condition for (observation embedding, instruction embedding) rows.

        Returns ``(cond, indices, latents, vq_loss)``; the flat variant has no
        codebook and returns ``None`` for the last three.
        """
        s = Tensor(np.atleast_2d(s_emb))
        l = Tensor(np.atleast_2d(l_emb))
        if self.flat:
            h = mish(affine(concat([l, s], axis=-1), self.planner[f"{FLAT_PREFIX}.l1.w"],
                            self.planner[f"{FLAT_PREFIX}.l1.b"]))
            cond = affine(h, self.planner[f"{FLAT_PREFIX}.l2.w"], self.planner[f"{FLAT_PREFIX}.l2.b"])
            return cond, None, None, None
        pc = self.config.planner
        z_tilde = predict_skill(s, l, self.skill, heads=pc.predictor_heads)
        idx, z, loss = quantize_st(z_tilde, self.codebook)
        return skill_embed(z, self.planner), idx, z_tilde, loss

    def skill_index(self, s_emb, l_emb) -> np.ndarray:
        """Codebook index chosen for each (observation, instruction) row."""
        if self.flat:
            raise ConfigError("the flat variant has no skill codebook")
        z_tilde = predict_skill(np.atleast_2d(s_emb), np.atleast_2d(l_emb), self.skill,
                                heads=self.config.planner.predictor_heads)
        return quantize(z_tilde.data, self.codebook)[0]

    # -- persistence ------------------------------------------------------------
    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for store in (self.skill, self.planner, self.invdyn_store):
            out.update(store.arrays())
        if self.codebook is not None:
            out.update(self.codebook.arrays())
        return out

    def load_arrays(self, arrays) -> None:
        for store in (self.skill, self.planner, self.invdyn_store):
            store.load_arrays(arrays)
        if self.codebook is not None:
            self.codebook = SkillCodebook.from_arrays(arrays)


def flat_hidden_width(pc) -> int:
    """Hidden width that gives the flat condition map the same trainable budget as
    skill predictor + skill embedding (independent of the codebook size)."""
    store = ParamStore()
    rng = make_rng(0)
    init_predictor(store, pc.obs_embed_dim, pc.lang_dim, pc.code_dim, rng, dim=pc.predictor_dim)
    init_skill_embed(store, pc.code_dim, pc.cond_dim, rng, hidden=pc.embed_hidden)
    budget = store.num_values()
    fin = pc.obs_embed_dim + pc.lang_dim
    # fin*h + h + h*cond + cond = budget
    return max(1, round((budget - pc.cond_dim) / (fin + 1 + pc.cond_dim)))


def build_agent(config: Config, vocab: Vocabulary, seed: int) -> Agent:
    pc = config.planner
    pc.validate()
    if vocab.lang_dim != pc.lang_dim:
        raise ConfigError(f"vocabulary dim {vocab.lang_dim} != lang_dim {pc.lang_dim}")
    rng = make_rng(seed, 11)
    skill, planner, inv = ParamStore(), ParamStore(), ParamStore()
    codebook = None
    if pc.flat:
        h = flat_hidden_width(pc)
        fin = pc.obs_embed_dim + pc.lang_dim
        planner.add(f"{FLAT_PREFIX}.l1.w", rng.normal(0.0, 1.0 / np.sqrt(fin), (fin, h)))
        planner.add(f"{FLAT_PREFIX}.l1.b", np.zeros(h))
        planner.add(f"{FLAT_PREFIX}.l2.w", rng.normal(0.0, 1.0 / np.sqrt(h), (h, pc.cond_dim)))
        planner.add(f"{FLAT_PREFIX}.l2.b", np.zeros(pc.cond_dim))
    else:
        init_predictor(skill, pc.obs_embed_dim, pc.lang_dim, pc.code_dim, rng, dim=pc.predictor_dim)
        init_skill_embed(planner, pc.code_dim, pc.cond_dim, rng, hidden=pc.embed_hidden)
        codebook = SkillCodebook.create(pc.skill_set_size, pc.code_dim, rng, decay=pc.ema_decay)
    unet = TemporalUNet(planner, pc.obs_embed_dim, pc.cond_dim, rng, channels=pc.unet_channels,
                        kernel=pc.unet_kernel, groups=pc.unet_groups, time_dim=pc.time_embed_dim)
    invdyn = InverseDynamics(inv, pc.obs_embed_dim, pc.raw_dim, pc.action_dim, rng,
                             hidden=pc.invdyn_hidden)
    return Agent(config, ObservationEncoder(pc.raw_dim, pc.obs_embed_dim, pc.encoder_seed), vocab,
                 skill, planner, inv, codebook,
                 make_schedule(pc.denoise_steps, pc.beta_start, pc.beta_end), unet, invdyn)


# -- run directory layout -------------------------------------------------------------

CONFIG_FILE = "config.txt"
VOCAB_FILE = "vocab.txt"
MODEL_FILE = "model.skdf"


def encode_json(obj) -> np.ndarray:
    """Pack a JSON document into a float array so it can ride inside a tensor file."""
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode("utf-8"), dtype=np.uint8).astype(np.float64)


def decode_json(arr) -> object:
    return json.loads(np.asarray(arr).astype(np.uint8).tobytes().decode("utf-8"))


def load_agent(checkpoint: str | Path, config: Config | None = None) -> Agent:
    """Rebuild an agent from a checkpoint file and the config/vocab stored beside it."""
    checkpoint = Path(checkpoint)
    if not checkpoint.is_file():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    run_dir = checkpoint.parent
    if config is None:
        config = load_config(run_dir / CONFIG_FILE if (run_dir / CONFIG_FILE).is_file() else None)
    vocab_path = run_dir / VOCAB_FILE
    if not vocab_path.is_file():
        raise FileNotFoundError(f"vocabulary file missing next to checkpoint: {vocab_path}")
    vocab = Vocabulary.load(vocab_path)
    arrays = load_tensors(checkpoint)
    agent = build_agent(config, vocab, seed=0)
    try:
        agent.load_arrays(arrays)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"checkpoint does not match config: {exc}") from exc
    return agent


def save_model(agent: Agent, path: str | Path) -> None:
    save_tensors(path, agent.arrays())
