"""Closed-loop execution: pick a skill every H steps, denoise a plan, decode actions."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .agent import Agent
from .diffusion import sample_plan
from .invdyn import infer_action
from .numerics import no_grad


class Policy(Protocol):
    def skill(self, s_emb: np.ndarray, l_emb: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...
    def plan(self, s_emb: np.ndarray, cond: np.ndarray, rng: np.random.Generator) -> np.ndarray: ...
    def act(self, s_emb: np.ndarray, next_emb: np.ndarray, raw: np.ndarray) -> np.ndarray: ...
    def embed_obs(self, raw: np.ndarray) -> np.ndarray: ...
    def embed_instruction(self, tokens: Sequence[str]) -> np.ndarray: ...


class AgentPolicy:
    """Adapts a trained agent to the rollout loop; all methods are batched over episodes."""

    def __init__(self, agent: Agent, guidance_scale: float | None = None):
        self.agent = agent
        pc = agent.config.planner
        self.omega = pc.guidance_scale if guidance_scale is None else guidance_scale
        self.plan_len = pc.plan_len

    def embed_obs(self, raw):
        return self.agent.embed_obs(raw)

    def embed_instruction(self, tokens):
        return self.agent.embed_instruction(tokens)

    def skill(self, s_emb, l_emb):
        with no_grad():
            cond, idx, _, _ = self.agent.condition(s_emb, l_emb)
        if idx is None:
            idx = np.full(len(cond.data), -1)
        return np.asarray(idx), cond.data

    def plan(self, s_emb, cond, rng):
        return sample_plan(s_emb, cond, self.agent.schedule, self.agent.unet, self.omega, rng,
                           self.plan_len)

    def act(self, s_emb, next_emb, raw):
        with no_grad():
            return infer_action(s_emb, next_emb, raw, self.agent.invdyn)


@dataclass
class EpisodeResult:
    task: str
    instruction: list[str]
    success: bool
    observations: np.ndarray   # [steps + 1, raw_dim], agent-visible
    actions: np.ndarray        # [steps, action_dim]
    skills: np.ndarray         # [steps] code index in force at each step (-1: no codebook)
    error: str | None = None

    @property
    def steps(self) -> int:
        return len(self.actions)

    def to_record(self) -> str:
        """One JSON line; floats are written with full precision."""
        return json.dumps({
            "task": self.task, "instruction": self.instruction, "success": bool(self.success),
            "steps": self.steps, "action_dim": self.actions.shape[1], "skills": [int(k) for k in self.skills],
            "actions": self.actions.tolist(), "observations": self.observations.tolist(),
            "error": self.error,
        }, separators=(",", ":"))

    @classmethod
    def from_record(cls, line: str) -> "EpisodeResult":
        d = json.loads(line)
        acts = np.array(d["actions"], dtype=np.float64).reshape(d["steps"], d["action_dim"])
        return cls(d["task"], d["instruction"], d["success"], np.array(d["observations"], dtype=np.float64),
                   acts, np.array(d["skills"], dtype=np.int64), d["error"])


def rollout_batch(envs: Sequence, instructions: Sequence[Sequence[str]], policy: Policy,
                  horizon: int, episode_len: int, rng: np.random.Generator) -> list[EpisodeResult]:
    """Run one episode per environment in lock-step so plans are denoised as a batch.

    Success is success-once: any step that satisfies the task predicate counts.
    An environment that raises is marked failed with its diagnostic and stops.
    """
    n = len(envs)
    if len(instructions) != n:
        raise ValueError("one instruction per environment required")
    raw = np.stack([env.reset() for env in envs])
    lang = np.stack([policy.embed_instruction(tok) for tok in instructions])
    obs = [[raw[b]] for b in range(n)]
    acts: list[list[np.ndarray]] = [[] for _ in range(n)]
    skills: list[list[int]] = [[] for _ in range(n)]
    errors: list[str | None] = [None] * n
    alive = np.ones(n, dtype=bool)
    a_dim = getattr(envs[0], "action_dim", 0) if n else 0
    for t0 in range(0, episode_len, horizon):
        live = np.flatnonzero(alive)
        if live.size == 0:
            break
        s_now = policy.embed_obs(raw[live])
        idx, cond = policy.skill(s_now, lang[live])
        plan = policy.plan(s_now, cond, rng)
        for t in range(min(horizon, episode_len - t0)):
            s_emb = policy.embed_obs(raw[live])
            a = np.clip(policy.act(s_emb, plan[:, t + 1], raw[live]), -1.0, 1.0)
            a_dim = a.shape[-1]
            for j, b in enumerate(live):
                if not alive[b]:
                    continue
                try:
                    raw[b] = envs[b].step(a[j])
                except Exception as exc:  # environment fault ends this episode only
                    errors[b] = f"{type(exc).__name__}: {exc}"
                    alive[b] = False
                    continue
                acts[b].append(a[j])
                skills[b].append(int(idx[j]))
                obs[b].append(raw[b].copy())
            live_mask = alive[live]
            if not live_mask.all():
                live, plan, idx = live[live_mask], plan[live_mask], idx[live_mask]
    out = []
    for b, env in enumerate(envs):
        out.append(EpisodeResult(env.task.name, list(instructions[b]),
                                 bool(env.succeeded) and errors[b] is None,
                                 np.array(obs[b]), np.array(acts[b]).reshape(len(acts[b]), a_dim),
                                 np.array(skills[b], dtype=np.int64), errors[b]))
    return out


def rollout_episode(env, instruction: Sequence[str], agent: Agent | Policy, rng: np.random.Generator,
                    episode_len: int | None = None, horizon: int | None = None) -> EpisodeResult:
    """Single closed-loop episode; horizon and length default to the agent's config."""
    policy = AgentPolicy(agent) if isinstance(agent, Agent) else agent
    if isinstance(agent, Agent):
        episode_len = agent.config.train.episode_len if episode_len is None else episode_len
        horizon = agent.config.planner.horizon if horizon is None else horizon
    if episode_len is None or horizon is None:
        raise ValueError("episode_len and horizon are required for a bare policy")
    return rollout_batch([env], [instruction], policy, horizon, episode_len, rng)[0]
