"""Replay storage: the agent's ring buffer, the expert buffer, the
initial-state buffer, and durable trajectory files.

Expert and agent transitions live in separate buffer instances and nothing
here ever moves data between them; the discriminator's class labels depend
on that separation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, ParseError, SchemaError


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float  # synthetic reward cache; learning re-evaluates it
    next_state: np.ndarray
    terminated: bool
    truncated: bool


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform i.i.d. sampling."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ContractError("capacity must be at least 1")
        self.capacity = int(capacity)
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self._states = np.zeros((capacity, obs_dim))
        self._actions = np.zeros((capacity, act_dim))
        self._rewards = np.zeros(capacity)
        self._next_states = np.zeros((capacity, obs_dim))
        self._terminated = np.zeros(capacity, dtype=bool)
        self._truncated = np.zeros(capacity, dtype=bool)
        self._cursor = 0
        self.size = 0

    def push(self, t: Transition) -> None:
        state = np.asarray(t.state, dtype=np.float64).reshape(-1)
        action = np.asarray(t.action, dtype=np.float64).reshape(-1)
        next_state = np.asarray(t.next_state, dtype=np.float64).reshape(-1)
        if state.shape != (self.obs_dim,) or next_state.shape != (self.obs_dim,):
            raise DimensionError(
                f"state dims {state.shape}/{next_state.shape} vs buffer obs_dim {self.obs_dim}"
            )
        if action.shape != (self.act_dim,):
            raise DimensionError(f"action dim {action.shape} vs buffer act_dim {self.act_dim}")
        i = self._cursor
        self._states[i] = state
        self._actions[i] = action
        self._rewards[i] = t.reward
        self._next_states[i] = next_state
        self._terminated[i] = t.terminated
        self._truncated[i] = t.truncated
        self._cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        if self.size < 1:
            raise ContractError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=n)
        return Batch(
            self._states[idx].copy(),
            self._actions[idx].copy(),
            self._rewards[idx].copy(),
            self._next_states[idx].copy(),
            self._terminated[idx].copy(),
            self._truncated[idx].copy(),
        )

    def all_transitions(self) -> Batch:
        """Insertion-ordered snapshot (oldest first), for audits."""
        if self.size < self.capacity:
            order = np.arange(self.size)
        else:
            order = np.concatenate(
                [np.arange(self._cursor, self.capacity), np.arange(self._cursor)]
            )
        return Batch(
            self._states[order].copy(),
            self._actions[order].copy(),
            self._rewards[order].copy(),
            self._next_states[order].copy(),
            self._terminated[order].copy(),
            self._truncated[order].copy(),
        )


class InitialStateBuffer:
    """Initial observations with the first action taken from each reset."""

    def __init__(self, obs_dim: int, act_dim: int):
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self._obs: list[np.ndarray] = []
        self._acts: list[np.ndarray] = []

    def push(self, obs, first_action) -> None:
        obs = np.asarray(obs, dtype=np.float64).reshape(-1)
        act = np.asarray(first_action, dtype=np.float64).reshape(-1)
        if obs.shape != (self.obs_dim,):
            raise DimensionError(f"obs dim {obs.shape} vs {self.obs_dim}")
        if act.shape != (self.act_dim,):
            raise DimensionError(f"action dim {act.shape} vs {self.act_dim}")
        self._obs.append(obs)
        self._acts.append(act)

    def __len__(self) -> int:
        return len(self._obs)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        if not self._obs:
            raise ContractError("initial-state buffer is empty")
        idx = rng.integers(0, len(self._obs), size=n)
        obs = np.stack(self._obs)
        acts = np.stack(self._acts)
        return obs[idx], acts[idx]


# -- trajectory files -----------------------------------------------------------


@dataclass
class Episode:
    observations: np.ndarray  # (L+1, obs_dim)
    actions: np.ndarray  # (L, act_dim)
    rewards: np.ndarray  # (L,) ground-truth rewards
    terminated: bool

    def __post_init__(self):
        self.observations = np.atleast_2d(np.asarray(self.observations, dtype=np.float64))
        self.actions = np.atleast_2d(np.asarray(self.actions, dtype=np.float64))
        self.rewards = np.asarray(self.rewards, dtype=np.float64).reshape(-1)
        steps = self.actions.shape[0]
        if self.observations.shape[0] != steps + 1:
            raise DimensionError(
                f"{self.observations.shape[0]} observations for {steps} actions"
            )
        if self.rewards.shape[0] != steps:
            raise DimensionError(f"{self.rewards.shape[0]} rewards for {steps} actions")

    def __len__(self) -> int:
        return self.actions.shape[0]

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())


def _fmt_array(values: np.ndarray) -> str:
    # 17 significant decimal digits round-trip float64 exactly
    return "[" + ",".join(format(v, ".17g") for v in np.asarray(values).reshape(-1)) + "]"


def _episode_record(ep: Episode) -> str:
    return (
        '{"observations":' + _fmt_array(ep.observations)
        + ',"actions":' + _fmt_array(ep.actions)
        + ',"rewards":' + _fmt_array(ep.rewards)
        + ',"terminated":' + ("true" if ep.terminated else "false") + "}"
    )


def save_trajectories(path, episodes: list[Episode], env_id: str) -> None:
    if not episodes:
        raise ContractError("refusing to save an empty trajectory set")
    obs_dim = episodes[0].observations.shape[1]
    act_dim = episodes[0].actions.shape[1]
    for i, ep in enumerate(episodes):
        if ep.observations.shape[1] != obs_dim or ep.actions.shape[1] != act_dim:
            raise DimensionError(f"episode {i} dims disagree with episode 0")
    header = json.dumps(
        {"format_version": 1, "obs_dim": obs_dim, "act_dim": act_dim, "env_id": env_id},
        separators=(",", ":"),
    )
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for ep in episodes:
            fh.write(_episode_record(ep) + "\n")


def load_trajectories(path) -> tuple[list[Episode], dict]:
    """Parses and validates the whole file before returning anything."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("line 1: empty trajectory file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"line 1: bad header: {exc}") from exc
    for key in ("format_version", "obs_dim", "act_dim", "env_id"):
        if key not in header:
            raise SchemaError(f"header missing {key!r}")
    if header["format_version"] != 1:
        raise SchemaError(f"unsupported format_version {header['format_version']!r}")
    obs_dim, act_dim = int(header["obs_dim"]), int(header["act_dim"])
    episodes: list[Episode] = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
            obs = np.asarray(rec["observations"], dtype=np.float64)
            acts = np.asarray(rec["actions"], dtype=np.float64)
            rews = np.asarray(rec["rewards"], dtype=np.float64)
            terminated = bool(rec["terminated"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"line {lineno}: bad episode record: {exc}") from exc
        steps = rews.size
        if acts.size != steps * act_dim or obs.size != (steps + 1) * obs_dim:
            raise SchemaError(
                f"line {lineno}: array lengths do not match header dims "
                f"(obs_dim={obs_dim}, act_dim={act_dim}, steps={steps})"
            )
        episodes.append(
            Episode(obs.reshape(steps + 1, obs_dim), acts.reshape(steps, act_dim),
                    rews, terminated)
        )
    if not episodes:
        raise ParseError("line 2: file has a header but no episodes")
    return episodes, header
