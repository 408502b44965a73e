"""A small multi-task tabletop world with scripted pseudo-experts.

State (8 scalars): gripper xy, drawer opening, faucet angle, black mug xy, white
mug xy. The agent only ever sees ``observe``: a fixed linear mixing of the state
into 16 numbers plus Gaussian noise.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .numerics import ContractError, make_rng

STATE_DIM = 8
RAW_DIM = 16
ACTION_DIM = 4
STEP_SCALE = 0.1

HANDLE = np.array([-0.9, 0.85])
FAUCET = np.array([0.9, 0.8])
BLACK_HOME = np.array([-0.9, -0.75])
WHITE_HOME = np.array([0.9, 0.1])
HANDLE_RADIUS = 0.15
FAUCET_RADIUS = 0.15
MUG_RADIUS = 0.1

# success thresholds and reset ranges
DRAWER_CLOSED = 0.1
DRAWER_OPEN = 0.9
FAUCET_TURNED = 0.6
MUG_SHIFT = 0.85
GRIPPER_START = 0.1
MUG_JITTER = 0.05
DRAWER_START = {0: (0.85, 1.0), 1: (0.0, 0.1), None: (0.0, 1.0)}
FAUCET_START = {2: (0.15, 0.4), 3: (-0.4, -0.15), None: (-0.4, 0.4)}

_MIX_SEED = 1234

GX, GY, DRAWER, FAUCET_ANGLE, BX, BY, WX, WY = range(8)

FAMILIES = ("seen", "unseen-noun", "unseen-verb", "unseen-noun+verb", "human-provided")


@dataclass
class WorldState:
    gripper: np.ndarray
    drawer_amount: float
    faucet_angle: float
    mug_black: np.ndarray
    mug_white: np.ndarray

    def vector(self) -> np.ndarray:
        return np.array([*self.gripper, self.drawer_amount, self.faucet_angle,
                         *self.mug_black, *self.mug_white])

    @classmethod
    def from_vector(cls, v) -> "WorldState":
        v = np.asarray(v, dtype=np.float64)
        return cls(v[0:2].copy(), float(v[2]), float(v[3]), v[4:6].copy(), v[6:8].copy())

    def copy(self) -> "WorldState":
        return WorldState.from_vector(self.vector())


# -- tasks ------------------------------------------------------------------------

@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    name: str
    verb: str
    noun: str
    modifier: str
    direction: str
    success: Callable[[WorldState, WorldState], bool]
    human: tuple[str, ...]


TASKS: tuple[TaskSpec, ...] = (
    TaskSpec(0, "close drawer", "close", "drawer", "", "",
             lambda s0, s: s.drawer_amount < DRAWER_CLOSED,
             ("please make the drawer fully closed", "push the drawer shut")),
    TaskSpec(1, "open drawer", "open", "drawer", "", "",
             lambda s0, s: s.drawer_amount > DRAWER_OPEN,
             ("please pull the drawer out", "can you open up the drawer")),
    TaskSpec(2, "turn faucet left", "turn", "faucet", "", "left",
             lambda s0, s: s.faucet_angle < -FAUCET_TURNED,
             ("rotate the faucet to the left", "please turn the tap towards the left")),
    TaskSpec(3, "turn faucet right", "turn", "faucet", "", "right",
             lambda s0, s: s.faucet_angle > FAUCET_TURNED,
             ("rotate the faucet to the right", "please turn the tap towards the right")),
    TaskSpec(4, "move black mug right", "move", "mug", "black", "right",
             lambda s0, s: s.mug_black[0] >= s0.mug_black[0] + MUG_SHIFT,
             ("push the black mug to the right", "slide the dark cup rightwards")),
    TaskSpec(5, "move white mug down", "move", "mug", "white", "down",
             lambda s0, s: s.mug_white[1] <= s0.mug_white[1] - MUG_SHIFT,
             ("push the white mug down", "slide the white cup towards the bottom")),
)

TASK_BY_NAME = {t.name: t for t in TASKS}

SEEN_VERBS = {"close": ("close",), "open": ("open",), "turn": ("turn",), "move": ("move",)}
UNSEEN_VERBS = {"close": ("shut", "slam"), "open": ("pull", "unlatch"),
                "turn": ("rotate", "twist"), "move": ("push", "shift")}
SEEN_NOUNS = {"drawer": ("drawer",), "faucet": ("faucet",), "mug": ("mug",)}
UNSEEN_NOUNS = {"drawer": ("container", "cabinet"), "faucet": ("tap", "spigot"),
                "mug": ("cup", "glass")}


def get_task(task) -> TaskSpec:
    if isinstance(task, TaskSpec):
        return task
    if isinstance(task, (int, np.integer)):
        return TASKS[int(task)]
    return TASK_BY_NAME[task]


def instruction_forms(task, family: str) -> list[list[str]]:
    """Every surface form a task can take within one rephrasal family."""
    task = get_task(task)
    if family == "human-provided":
        return [h.split() for h in task.human]
    verbs = UNSEEN_VERBS if family in ("unseen-verb", "unseen-noun+verb") else SEEN_VERBS
    nouns = UNSEEN_NOUNS if family in ("unseen-noun", "unseen-noun+verb") else SEEN_NOUNS
    if family not in FAMILIES:
        raise ValueError(f"unknown rephrasal family {family!r}")
    forms = []
    for verb in verbs[task.verb]:
        for noun in nouns[task.noun]:
            for article in ((), ("the",)) if family == "seen" else ((),):
                words = [verb, *article]
                if task.modifier:
                    words.append(task.modifier)
                words.append(noun)
                if task.direction:
                    words.append(task.direction)
                forms.append(words)
    return forms


def sample_instruction(task, family: str, rng: np.random.Generator) -> list[str]:
    forms = instruction_forms(task, family)
    return list(forms[int(rng.integers(len(forms)))])


# -- dynamics ---------------------------------------------------------------------

def _clip_state(v: np.ndarray) -> np.ndarray:
    v = v.copy()
    v[[GX, GY, BX, BY, WX, WY]] = np.clip(v[[GX, GY, BX, BY, WX, WY]], -1.0, 1.0)
    v[DRAWER] = np.clip(v[DRAWER], 0.0, 1.0)
    v[FAUCET_ANGLE] = np.clip(v[FAUCET_ANGLE], -1.0, 1.0)
    return v


def step(state: WorldState, action) -> WorldState:
    a = np.asarray(action, dtype=np.float64)
    if a.shape != (ACTION_DIM,) or not np.all(np.isfinite(a)):
        raise ContractError(f"action must be a finite {ACTION_DIM}-vector, got {action!r}")
    v = state.vector()
    g = v[0:2].copy()
    move = STEP_SCALE * a[0:2]
    if np.linalg.norm(g - HANDLE) <= HANDLE_RADIUS:
        v[DRAWER] += STEP_SCALE * a[2]
    if np.linalg.norm(g - FAUCET) <= FAUCET_RADIUS:
        v[FAUCET_ANGLE] += STEP_SCALE * a[3]
    if np.linalg.norm(g - v[4:6]) <= MUG_RADIUS:
        v[4:6] += move
    if np.linalg.norm(g - v[6:8]) <= MUG_RADIUS:
        v[6:8] += move
    v[0:2] += move
    return WorldState.from_vector(_clip_state(v))


def _task_ranges(task_id: int) -> tuple[tuple[float, float], tuple[float, float]]:
    return DRAWER_START.get(task_id, DRAWER_START[None]), FAUCET_START.get(task_id, FAUCET_START[None])


def reset(task, rng: np.random.Generator) -> WorldState:
    """Random start whose target degree of freedom does not yet satisfy the task."""
    task = get_task(task)
    drawer_rng, faucet_rng = _task_ranges(task.task_id)
    while True:
        gripper = rng.uniform(-GRIPPER_START, GRIPPER_START, size=2)
        state = WorldState(
            gripper=gripper,
            drawer_amount=float(rng.uniform(*drawer_rng)),
            faucet_angle=float(rng.uniform(*faucet_rng)),
            mug_black=BLACK_HOME + rng.uniform(-MUG_JITTER, MUG_JITTER, size=2),
            mug_white=WHITE_HOME + rng.uniform(-MUG_JITTER, MUG_JITTER, size=2),
        )
        far = (np.linalg.norm(gripper - state.mug_black) > 0.2
               and np.linalg.norm(gripper - state.mug_white) > 0.2)
        if far and not task.success(state, state):
            return state


def mixing_matrix() -> np.ndarray:
    m = make_rng(_MIX_SEED).normal(0.0, 1.0, size=(RAW_DIM, STATE_DIM))
    m.setflags(write=False)
    return m


_MIX = mixing_matrix()


def observe(state: WorldState, rng: np.random.Generator | None = None, noise: float = 0.1) -> np.ndarray:
    """Raw observation; pass ``rng=None`` (or ``noise=0``) for the noiseless view."""
    obs = _MIX @ state.vector()
    if rng is not None and noise > 0:
        obs = obs + rng.normal(0.0, noise, size=RAW_DIM)
    return obs


def scripted_expert(task, state: WorldState, rng: np.random.Generator | None,
                    noise_scale: float) -> np.ndarray:
    """Reach the task's object, then actuate it; Gaussian action noise, clipped."""
    task = get_task(task)
    g = state.gripper
    a = np.zeros(ACTION_DIM)

    def toward(target):
        return np.clip(10.0 * (target - g), -1.0, 1.0)

    tid = task.task_id
    if tid in (0, 1):
        a[0:2] = toward(HANDLE)
        if np.linalg.norm(g - HANDLE) <= HANDLE_RADIUS - 0.02:
            a[2] = -1.0 if tid == 0 else 1.0
    elif tid in (2, 3):
        a[0:2] = toward(FAUCET)
        if np.linalg.norm(g - FAUCET) <= FAUCET_RADIUS - 0.02:
            a[3] = -1.0 if tid == 2 else 1.0
    else:
        mug = state.mug_black if tid == 4 else state.mug_white
        if np.linalg.norm(g - mug) <= MUG_RADIUS:
            a[0:2] = (1.0, 0.0) if tid == 4 else (0.0, -1.0)
        else:
            a[0:2] = toward(mug)
    if noise_scale > 0 and rng is not None:
        a = a + rng.normal(0.0, noise_scale, size=ACTION_DIM)
    return np.clip(a, -1.0, 1.0)


class ToyWorld:
    """Episode wrapper: hides the state and tracks success-once."""

    action_dim = ACTION_DIM

    def __init__(self, task, rng: np.random.Generator, obs_noise: float = 0.1):
        self.task = get_task(task)
        self._rng = rng
        self.obs_noise = obs_noise
        self._state: WorldState | None = None
        self._initial: WorldState | None = None
        self.succeeded = False
        self.steps = 0

    def reset(self) -> np.ndarray:
        self._state = reset(self.task, self._rng)
        self._initial = self._state.copy()
        self.succeeded = False
        self.steps = 0
        return self.observe()

    def observe(self) -> np.ndarray:
        return observe(self._state, self._rng, self.obs_noise)

    def step(self, action) -> np.ndarray:
        self._state = step(self._state, action)
        self.steps += 1
        if self.task.success(self._initial, self._state):
            self.succeeded = True
        return self.observe()

    def expert_action(self, noise_scale: float) -> np.ndarray:
        return scripted_expert(self.task, self._state, self._rng, noise_scale)


def expert_success_rate(task, episodes: int, episode_len: int, noise_scale: float,
                        rng: np.random.Generator) -> float:
    wins = 0
    for _ in range(episodes):
        s0 = s = reset(task, rng)
        for _ in range(episode_len):
            s = step(s, scripted_expert(task, s, rng, noise_scale))
            if get_task(task).success(s0, s):
                wins += 1
                break
    return wins / max(episodes, 1)


# -- dataset ----------------------------------------------------------------------

DATA_MAGIC = b"SKDD"
DATA_VERSION = 1


@dataclass
class Trajectory:
    instruction: list[str]
    observations: np.ndarray  # [T + 1, raw_dim]
    actions: np.ndarray       # [T, action_dim]
    task_id: int


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    episode_len: int
    raw_dim: int = RAW_DIM
    action_dim: int = ACTION_DIM

    def __len__(self) -> int:
        return len(self.trajectories)


def generate_dataset(num_trajectories: int, episode_len: int, noise_scale: float,
                     out_path: str | Path | None, rng: np.random.Generator,
                     families: Sequence[str] = ("seen",), obs_noise: float = 0.1
                     ) -> tuple[Dataset, float]:
    """Balanced pseudo-expert demonstrations; returns the dataset and its success fraction."""
    trajs = []
    wins = 0
    for n in range(num_trajectories):
        task = TASKS[n % len(TASKS)]
        family = families[(n // len(TASKS)) % len(families)]
        env = ToyWorld(task, rng, obs_noise)
        obs = [env.reset()]
        acts = []
        for _ in range(episode_len):
            a = env.expert_action(noise_scale)
            acts.append(a)
            obs.append(env.step(a))
        wins += env.succeeded
        trajs.append(Trajectory(sample_instruction(task, family, rng), np.array(obs),
                                np.array(acts).reshape(episode_len, ACTION_DIM), task.task_id))
    ds = Dataset(trajs, episode_len)
    if out_path is not None:
        write_dataset(ds, out_path)
    return ds, wins / max(num_trajectories, 1)


def write_dataset(ds: Dataset, path: str | Path) -> None:
    buf = bytearray(DATA_MAGIC)
    buf += struct.pack("<5I", DATA_VERSION, len(ds), ds.episode_len, ds.raw_dim, ds.action_dim)
    for tr in ds.trajectories:
        buf += struct.pack("<I", len(tr.instruction))
        for tok in tr.instruction:
            raw = tok.encode("utf-8")
            buf += struct.pack("<I", len(raw)) + raw
        buf += np.asarray(tr.observations, dtype="<f8").tobytes()
        buf += np.asarray(tr.actions, dtype="<f8").tobytes()
        buf += struct.pack("<B", tr.task_id)
    Path(path).write_bytes(bytes(buf))


def read_dataset(path: str | Path) -> Dataset:
    blob = Path(path).read_bytes()
    if blob[:4] != DATA_MAGIC:
        raise ValueError(f"{path}: not an SKDD dataset file")
    try:
        version, n, T, raw_dim, action_dim = struct.unpack_from("<5I", blob, 4)
        if version != DATA_VERSION:
            raise ValueError(f"{path}: unsupported dataset version {version}")
        pos = 24
        trajs = []
        for _ in range(n):
            (ntok,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            toks = []
            for _ in range(ntok):
                (ln,) = struct.unpack_from("<I", blob, pos)
                pos += 4
                toks.append(blob[pos:pos + ln].decode("utf-8"))
                pos += ln
            nobs = (T + 1) * raw_dim
            obs = np.frombuffer(blob, "<f8", nobs, pos).reshape(T + 1, raw_dim).astype(np.float64)
            pos += 8 * nobs
            nact = T * action_dim
            act = np.frombuffer(blob, "<f8", nact, pos).reshape(T, action_dim).astype(np.float64)
            pos += 8 * nact
            (tid,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            trajs.append(Trajectory(toks, obs, act, tid))
    except struct.error as exc:
        raise ValueError(f"{path}: truncated dataset file") from exc
    return Dataset(trajs, T, raw_dim, action_dim)
