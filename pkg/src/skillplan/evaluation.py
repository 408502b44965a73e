"""Success-rate tables, the random baseline and the word/skill frequency report."""
from __future__ import annotations

import io
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .agent import Agent
from .numerics import make_rng
from .rollout import AgentPolicy, rollout_batch
from .toyworld import ACTION_DIM, FAMILIES, TASKS, Dataset, ToyWorld, sample_instruction

EVAL_HEADER = "task,family,seed,episodes,successes,success_rate"
ALL = "all"
_ENV_STREAM = 404
_PLAN_STREAM = 505


def _rate(wins: int, n: int) -> float:
    return wins / n if n else 0.0


def _row(task: str, family: str, seed, n: int, wins: int) -> str:
    return f"{task},{family},{seed},{n},{wins},{_rate(wins, n)!r}"


def run_cells(agent: Agent, episodes_per_cell: int, seed: int,
              families: Sequence[str] = FAMILIES) -> dict[tuple[str, str], list[bool]]:
    """Success flags for every (task, family) cell under one seed, rolled out as one batch."""
    envs, instr, keys = [], [], []
    for task in TASKS:
        for fam in families:
            env_rng = make_rng(seed, _ENV_STREAM, task.task_id, FAMILIES.index(fam))
            for _ in range(episodes_per_cell):
                envs.append(ToyWorld(task, env_rng, agent.config.train.obs_noise))
                instr.append(sample_instruction(task, fam, env_rng))
                keys.append((task.name, fam))
    out: dict[tuple[str, str], list[bool]] = {(t.name, f): [] for t in TASKS for f in families}
    if not envs:
        return out
    pc = agent.config.planner
    results = rollout_batch(envs, instr, AgentPolicy(agent), pc.horizon, agent.config.train.episode_len,
                            make_rng(seed, _PLAN_STREAM))
    for key, res in zip(keys, results):
        out[key].append(res.success)
    return out


def evaluate(agent: Agent, episodes_per_cell: int, seeds: Iterable[int],
             families: Sequence[str] = FAMILIES) -> str:
    """CSV text: one row per (task, family, seed) cell, then per-family and overall aggregates."""
    seeds = list(seeds)
    cells = {s: run_cells(agent, episodes_per_cell, s, families) for s in seeds}
    buf = io.StringIO()
    buf.write(EVAL_HEADER + "\n")
    if episodes_per_cell == 0:
        return buf.getvalue()
    for task in TASKS:
        for fam in families:
            for s in seeds:
                flags = cells[s][(task.name, fam)]
                buf.write(_row(task.name, fam, s, len(flags), sum(flags)) + "\n")
    for fam in families:
        flags = [f for s in seeds for t in TASKS for f in cells[s][(t.name, fam)]]
        buf.write(_row(ALL, fam, ALL, len(flags), sum(flags)) + "\n")
    flags = [f for s in seeds for c in cells[s].values() for f in c]
    buf.write(_row(ALL, ALL, ALL, len(flags), sum(flags)) + "\n")
    return buf.getvalue()


def parse_eval_csv(text: str) -> list[dict]:
    lines = text.strip().splitlines()
    if not lines or lines[0] != EVAL_HEADER:
        raise ValueError("not an evaluation CSV")
    rows = []
    for ln in lines[1:]:
        task, fam, seed, n, wins, rate = ln.split(",")
        rows.append({"task": task, "family": fam, "seed": seed, "episodes": int(n),
                     "successes": int(wins), "success_rate": float(rate)})
    return rows


def family_rate(rows: list[dict], family: str) -> float:
    for r in rows:
        if r["task"] == ALL and r["family"] == family and r["seed"] == ALL:
            return r["success_rate"]
    raise KeyError(family)


def random_policy_rate(episodes_per_task: int, episode_len: int, rng: np.random.Generator,
                       obs_noise: float = 0.1) -> float:
    """Success of uniformly random actions, pooled over the six tasks."""
    wins = n = 0
    for task in TASKS:
        for _ in range(episodes_per_task):
            env = ToyWorld(task, rng, obs_noise)
            env.reset()
            for _ in range(episode_len):
                env.step(rng.uniform(-1.0, 1.0, ACTION_DIM))
            wins += env.succeeded
            n += 1
    return _rate(wins, n)


# -- word / skill frequency report ----------------------------------------------------------

def skill_word_matrix(agent: Agent, dataset: Dataset) -> tuple[list[str], np.ndarray]:
    """Counts M[word, skill] over every skill block of every trajectory in ``dataset``.

    A block contributes each word of its instruction once per occurrence to the
    column of the code predicted for that block.
    """
    pc = agent.config.planner
    starts = list(range(0, dataset.episode_len + 1, pc.horizon))
    s = np.concatenate([agent.embed_obs(t.observations[starts]) for t in dataset.trajectories])
    l = np.concatenate([np.repeat(agent.embed_instruction(t.instruction)[None], len(starts), axis=0)
                        for t in dataset.trajectories])
    idx = agent.skill_index(s, l) if len(s) else np.zeros(0, dtype=int)
    words = sorted({w for t in dataset.trajectories for w in t.instruction})
    row = {w: i for i, w in enumerate(words)}
    M = np.zeros((len(words), pc.skill_set_size))
    k = 0
    for t in dataset.trajectories:
        counts = Counter(t.instruction)
        for _ in starts:
            for w, c in counts.items():
                M[row[w], idx[k]] += c
            k += 1
    return words, M


def column_normalize(M: np.ndarray) -> np.ndarray:
    """Each column divided by its sum; columns with no mass stay zero."""
    tot = M.sum(axis=0)
    return np.divide(M, tot, out=np.zeros_like(M, dtype=np.float64), where=tot > 0)


def top_words(words: Sequence[str], norm: np.ndarray, k: int = 5) -> list[list[tuple[str, float]]]:
    """Per skill, up to ``k`` words with positive frequency, most frequent first (ties by word)."""
    out = []
    for j in range(norm.shape[1]):
        col = norm[:, j]
        order = sorted((i for i in range(len(words)) if col[i] > 0), key=lambda i: (-col[i], words[i]))
        out.append([(words[i], float(col[i])) for i in order[:k]])
    return out


def dominant_columns(norm: np.ndarray, threshold: float = 0.5) -> int:
    """Number of skill columns whose most frequent word exceeds ``threshold``."""
    if norm.size == 0:
        return 0
    return int(np.sum(norm.max(axis=0) > threshold))


def skill_heatmap(agent: Agent, dataset: Dataset, out_path: str | Path) -> dict:
    """Write the column-normalised matrix CSV and a ranked word list beside it."""
    words, M = skill_word_matrix(agent, dataset)
    norm = column_normalize(M)
    out_path = Path(out_path)
    lines = ["word," + ",".join(f"skill_{j}" for j in range(norm.shape[1]))]
    lines += [w + "," + ",".join(repr(float(v)) for v in norm[i]) for i, w in enumerate(words)]
    out_path.write_text("\n".join(lines) + "\n")
    ranked = top_words(words, norm)
    rank_path = out_path.with_name(out_path.stem + "_top_words.txt")
    rank_path.write_text("".join(
        f"skill_{j}: " + " ".join(f"{w}:{v:.3f}" for w, v in lst) + "\n" for j, lst in enumerate(ranked)))
    return {"words": words, "counts": M, "normalized": norm, "top_words": ranked,
            "dominant_columns": dominant_columns(norm), "ranked_path": rank_path}


def parameter_count(agent: Agent) -> int:
    return agent.num_parameters()
