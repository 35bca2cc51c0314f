"""Desk-scale environments.

PointMaze-Left/Right: a point mass in the arena [-1, 1]^2 must travel from
(0, -0.8) to (0, 0.8) around a horizontal barrier at y = 0 attached to one
wall. Line-1d is the same task on a line, cheap enough for unit tests.
TabularMDP gives exact occupancy measures for the identity oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, DomainError, ParseError
from .divergence import check_dist


@dataclass
class StepResult:
    next_obs: np.ndarray
    reward: float
    terminated: bool
    truncated: bool

    @property
    def done(self) -> bool:
        return self.terminated or self.truncated


@dataclass(frozen=True)
class PointMazeConfig:
    barrier_side: str = "left"  # "left", "right", or "none"
    start: tuple[float, float] = (0.0, -0.8)
    goal: tuple[float, float] = (0.0, 0.8)
    goal_radius: float = 0.1
    barrier_halfwidth: float = 0.6  # barrier length is 2x this, hugging one wall
    max_speed: float = 0.1
    dt: float = 1.0
    horizon: int = 100
    reset_noise: float = 0.05
    goal_band: float = 0.0  # > 0 draws goal x uniformly from +/- this band

    def __post_init__(self):
        if self.goal_radius <= 0:
            raise ContractError("goal radius must be positive")
        if self.horizon < 1:
            raise ContractError("horizon must be at least 1")
        if self.barrier_side not in ("left", "right", "none"):
            raise ContractError(f"unknown barrier side {self.barrier_side!r}")

    def barrier_segment(self) -> tuple[np.ndarray, np.ndarray] | None:
        length = 2.0 * self.barrier_halfwidth
        if self.barrier_side == "left":
            return np.array([-1.0, 0.0]), np.array([-1.0 + length, 0.0])
        if self.barrier_side == "right":
            return np.array([1.0 - length, 0.0]), np.array([1.0, 0.0])
        return None


def _segments_intersect(p, q, a, b) -> float | None:
    """Fraction t in [0, 1] along p->q where it first meets segment a->b,
    or None. Touching counts as a hit."""
    r = q - p
    s = b - a
    denom = r[0] * s[1] - r[1] * s[0]
    qp = a - p
    if abs(denom) < 1e-15:
        return None  # parallel; the mover can never be exactly on the line
    t = (qp[0] * s[1] - qp[1] * s[0]) / denom
    u = (qp[0] * r[1] - qp[1] * r[0]) / denom
    if -1e-12 <= t <= 1.0 + 1e-12 and -1e-12 <= u <= 1.0 + 1e-12:
        return min(max(t, 0.0), 1.0)
    return None


class PointMazeEnv:
    obs_dim = 2
    act_dim = 2

    def __init__(self, config: PointMazeConfig | None = None):
        self.config = config or PointMazeConfig()
        self._pos: np.ndarray | None = None
        self._goal = np.asarray(self.config.goal, dtype=np.float64)
        self._t = 0
        self._done = True

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def reset(self, seed: int | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
        if rng is None:
            rng = np.random.default_rng(seed)
        cfg = self.config
        noise = rng.uniform(-cfg.reset_noise, cfg.reset_noise, size=2)
        self._pos = np.asarray(cfg.start, dtype=np.float64) + noise
        self._goal = np.asarray(cfg.goal, dtype=np.float64).copy()
        if cfg.goal_band > 0.0:
            self._goal[0] += rng.uniform(-cfg.goal_band, cfg.goal_band)
        self._t = 0
        self._done = False
        return self._pos.copy()

    def step(self, action) -> StepResult:
        if self._done:
            raise ContractError("step() on a finished episode; call reset()")
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.shape != (2,):
            raise DimensionError(f"action must have 2 entries, got {action.shape}")
        cfg = self.config
        speed = float(np.linalg.norm(action))
        vel = action * (cfg.max_speed / speed) if speed > cfg.max_speed else action
        # clamp to the arena first: the barrier test must see the wall-slid
        # path, or a clamp could teleport through the wall-attached endpoint
        target = np.clip(self._pos + vel * cfg.dt, -1.0, 1.0)
        seg = cfg.barrier_segment()
        if seg is not None:
            t_hit = _segments_intersect(self._pos, target, seg[0], seg[1])
            if t_hit is not None:
                # stop just short of the barrier, on the near side
                target = self._pos + (target - self._pos) * max(t_hit - 1e-9, 0.0)
        self._pos = target
        self._t += 1
        dist = float(np.linalg.norm(self._pos - self._goal))
        terminated = dist <= cfg.goal_radius
        truncated = (not terminated) and self._t >= cfg.horizon
        self._done = terminated or truncated
        return StepResult(self._pos.copy(), -dist, terminated, truncated)


class Line1DEnv:
    """PointMaze flattened to a line; no barrier, fast for tests."""

    obs_dim = 1
    act_dim = 1

    def __init__(self, start=-0.8, goal=0.8, goal_radius=0.1, max_speed=0.1,
                 horizon=60, reset_noise=0.05):
        self.start = float(start)
        self.goal = float(goal)
        self.goal_radius = float(goal_radius)
        self.max_speed = float(max_speed)
        self.horizon = int(horizon)
        self.reset_noise = float(reset_noise)
        self._x = 0.0
        self._t = 0
        self._done = True

    def reset(self, seed: int | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
        if rng is None:
            rng = np.random.default_rng(seed)
        self._x = self.start + rng.uniform(-self.reset_noise, self.reset_noise)
        self._t = 0
        self._done = False
        return np.array([self._x])

    def step(self, action) -> StepResult:
        if self._done:
            raise ContractError("step() on a finished episode; call reset()")
        a = float(np.asarray(action).reshape(-1)[0])
        a = max(-self.max_speed, min(self.max_speed, a))
        self._x = max(-1.0, min(1.0, self._x + a))
        self._t += 1
        dist = abs(self._x - self.goal)
        terminated = dist <= self.goal_radius
        truncated = (not terminated) and self._t >= self.horizon
        self._done = terminated or truncated
        return StepResult(np.array([self._x]), -dist, terminated, truncated)

    def optimal_return(self, start: float | None = None) -> float:
        """Return of the full-speed greedy controller from a given start."""
        x = self.start if start is None else float(start)
        total = 0.0
        for _ in range(self.horizon):
            step = max(-self.max_speed, min(self.max_speed, self.goal - x))
            x += step
            dist = abs(x - self.goal)
            total -= dist
            if dist <= self.goal_radius:
                break
        return total


class AbsorbingWrapper:
    """Appends an absorbing-state indicator dimension.

    Real observations get indicator 0. When the inner episode terminates
    before the horizon, the wrapper reports the absorbing observation
    (zeros with indicator 1) and keeps charging absorbing-to-absorbing
    transitions with reward 0 until the horizon. Truncation at the horizon
    never enters the absorbing state. The wrapper never reports terminated;
    value at termination is learned through the absorbing state instead.
    """

    def __init__(self, env):
        self.env = env
        self.obs_dim = env.obs_dim + 1
        self.act_dim = env.act_dim
        self.horizon = env.horizon
        self._absorbing_obs = np.zeros(self.obs_dim)
        self._absorbing_obs[-1] = 1.0
        self._in_absorbing = False
        self._t = 0
        self._done = True
        self.last_terminated = False  # underlying termination, for metrics

    def absorbing_obs(self) -> np.ndarray:
        return self._absorbing_obs.copy()

    @staticmethod
    def wrap_obs(obs: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(obs, dtype=np.float64), [0.0]])

    def reset(self, seed: int | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
        obs = self.env.reset(seed=seed, rng=rng)
        self._in_absorbing = False
        self._t = 0
        self._done = False
        self.last_terminated = False
        return self.wrap_obs(obs)

    def step(self, action) -> StepResult:
        if self._done:
            raise ContractError("step() on a finished episode; call reset()")
        self._t += 1
        at_horizon = self._t >= self.horizon
        if self._in_absorbing:
            self._done = at_horizon
            return StepResult(self.absorbing_obs(), 0.0, False, at_horizon)
        res = self.env.step(action)
        if res.terminated:
            self.last_terminated = True
            self._in_absorbing = True
            self._done = at_horizon
            return StepResult(self.absorbing_obs(), res.reward, False, at_horizon)
        self._done = res.truncated or at_horizon
        return StepResult(self.wrap_obs(res.next_obs), res.reward, False,
                          res.truncated or at_horizon)


def wrap_absorbing(env) -> AbsorbingWrapper:
    return AbsorbingWrapper(env)


# -- tabular MDPs ---------------------------------------------------------------


class TabularMDP:
    """Exact finite MDP: transition tensor, reward table, initial state
    distribution and discount. Capped at 64 states x 8 actions; everything
    downstream relies on exact linear solves."""

    MAX_STATES = 64
    MAX_ACTIONS = 8

    def __init__(self, transitions, rewards, rho0, gamma: float):
        self.P = np.asarray(transitions, dtype=np.float64)
        self.r = np.asarray(rewards, dtype=np.float64)
        self.rho0 = check_dist(rho0)
        self.gamma = float(gamma)
        n_s, n_a, n_s2 = self.P.shape
        if n_s != n_s2:
            raise DimensionError(f"transition tensor {self.P.shape} is not square in states")
        if self.r.shape != (n_s, n_a):
            raise DimensionError(f"reward table {self.r.shape} vs {n_s} states, {n_a} actions")
        if self.rho0.shape != (n_s,):
            raise DimensionError("initial distribution length mismatch")
        if n_s > self.MAX_STATES or n_a > self.MAX_ACTIONS:
            raise ContractError(f"tabular MDPs capped at {self.MAX_STATES}x{self.MAX_ACTIONS}")
        if not 0.0 < self.gamma < 1.0:
            raise ContractError(f"gamma must lie in (0, 1), got {gamma}")
        sums = self.P.sum(axis=2)
        if np.max(np.abs(sums - 1.0)) > 1e-12:
            raise DomainError("transition rows must sum to 1")

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    def policy_matrix(self, policy) -> np.ndarray:
        """State-to-state chain P_pi[s, s'] under a stochastic policy."""
        pi = self._check_policy(policy)
        return np.einsum("sa,sax->sx", pi, self.P)

    def _check_policy(self, policy) -> np.ndarray:
        pi = np.asarray(policy, dtype=np.float64)
        if pi.shape != (self.n_states, self.n_actions):
            raise DimensionError(f"policy shape {pi.shape} vs MDP {self.n_states}x{self.n_actions}")
        if np.max(np.abs(pi.sum(axis=1) - 1.0)) > 1e-10:
            raise DomainError("policy rows must sum to 1")
        return pi

    def q_values(self, policy, rewards=None) -> np.ndarray:
        """Exact Q^pi by solving (I - gamma P pi) Q = r over state-actions."""
        pi = self._check_policy(policy)
        r = self.r if rewards is None else np.asarray(rewards, dtype=np.float64)
        n_sa = self.n_states * self.n_actions
        # M[(s,a), (s',a')] = P[s,a,s'] pi[s',a']
        m = np.einsum("sax,xb->saxb", self.P, pi).reshape(n_sa, n_sa)
        q = np.linalg.solve(np.eye(n_sa) - self.gamma * m, r.reshape(-1))
        return q.reshape(self.n_states, self.n_actions)

    def bellman_operator(self, policy, q, rewards=None) -> np.ndarray:
        """(B^pi Q)(s,a) = r(s,a) + gamma sum_{s'} P sum_{a'} pi Q(s',a')."""
        pi = self._check_policy(policy)
        q = np.asarray(q, dtype=np.float64)
        r = self.r if rewards is None else np.asarray(rewards, dtype=np.float64)
        v_next = (pi * q).sum(axis=1)
        return r + self.gamma * np.einsum("sax,x->sa", self.P, v_next)


def occupancy(mdp: TabularMDP, policy) -> np.ndarray:
    """Normalized discounted state-action occupancy, by exact linear solve
    of d = (1-gamma) rho0 + gamma P_pi^T d. Sums to 1."""
    pi = mdp._check_policy(policy)
    p_pi = mdp.policy_matrix(pi)
    n = mdp.n_states
    d = np.linalg.solve(np.eye(n) - mdp.gamma * p_pi.T, (1.0 - mdp.gamma) * mdp.rho0)
    rho = d[:, None] * pi
    total = rho.sum()
    if abs(total - 1.0) > 1e-10:
        raise DomainError(f"occupancy sums to {total!r}; the linear solve is off")
    return rho


def occupancy_by_power_series(mdp: TabularMDP, policy, tol: float = 1e-14,
                              max_terms: int = 1_000_000) -> np.ndarray:
    """Independent check of occupancy(): truncated sum over time of
    (1-gamma) gamma^t Pr(s_t)."""
    pi = mdp._check_policy(policy)
    p_pi = mdp.policy_matrix(pi)
    d = np.zeros(mdp.n_states)
    dist = mdp.rho0.copy()
    weight = 1.0 - mdp.gamma
    for _ in range(max_terms):
        d += weight * dist
        weight *= mdp.gamma
        if weight / (1.0 - mdp.gamma) < tol:
            break
        dist = p_pi.T @ dist
    return d[:, None] * pi


def random_tabular_mdp(rng: np.random.Generator, n_states: int, n_actions: int,
                       gamma: float) -> TabularMDP:
    transitions = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    rewards = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    rho0 = rng.dirichlet(np.ones(n_states))
    return TabularMDP(transitions, rewards, rho0, gamma)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int) -> np.ndarray:
    return rng.dirichlet(np.ones(n_actions), size=n_states)


def load_tabular(path) -> TabularMDP:
    """Text format: `tabular-v1`, then `n_states N`, `n_actions M`,
    `gamma G`, `rho0 p...`, then one `P s a probs...` line per state-action
    and one `R s a value` line per state-action."""
    with open(path) as fh:
        lines = fh.read().splitlines()

    def fail(idx, msg):
        raise ParseError(f"line {idx + 1}: {msg}")

    if not lines or lines[0].strip() != "tabular-v1":
        fail(0, "expected header 'tabular-v1'")
    header: dict[str, float] = {}
    p_rows: dict[tuple[int, int], np.ndarray] = {}
    r_rows: dict[tuple[int, int], float] = {}
    for idx, raw in enumerate(lines[1:], start=1):
        line = raw.split("#")[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] in ("n_states", "n_actions", "gamma"):
                header[tok[0]] = float(tok[1])
            elif tok[0] == "rho0":
                header["rho0"] = np.array([float(v) for v in tok[1:]])
            elif tok[0] == "P":
                p_rows[(int(tok[1]), int(tok[2]))] = np.array([float(v) for v in tok[3:]])
            elif tok[0] == "R":
                r_rows[(int(tok[1]), int(tok[2]))] = float(tok[3])
            else:
                fail(idx, f"unknown record {tok[0]!r}")
        except (ValueError, IndexError) as exc:
            fail(idx, f"bad record: {exc}")
    for key in ("n_states", "n_actions", "gamma", "rho0"):
        if key not in header:
            raise ParseError(f"missing {key!r} record")
    n_s, n_a = int(header["n_states"]), int(header["n_actions"])
    transitions = np.zeros((n_s, n_a, n_s))
    rewards = np.zeros((n_s, n_a))
    for s in range(n_s):
        for a in range(n_a):
            if (s, a) not in p_rows:
                raise ParseError(f"missing P record for state {s}, action {a}")
            row = p_rows[(s, a)]
            if row.shape != (n_s,):
                raise ParseError(f"P {s} {a} has {row.size} entries, expected {n_s}")
            transitions[s, a] = row
            rewards[s, a] = r_rows.get((s, a), 0.0)
    return TabularMDP(transitions, rewards, header["rho0"], header["gamma"])


# -- observation normalization ----------------------------------------------------


class RunningNormalizer:
    """Streaming mean/variance (Welford). Once frozen it is a pure function."""

    def __init__(self, dim: int):
        self.dim = int(dim)
        self.count = 0
        self.mean = np.zeros(self.dim)
        self.m2 = np.zeros(self.dim)
        self.frozen = False

    def update(self, obs) -> None:
        if self.frozen:
            raise ContractError("normalizer is frozen; no further updates")
        obs = np.asarray(obs, dtype=np.float64)
        rows = obs.reshape(-1, self.dim) if obs.ndim > 1 else obs.reshape(1, -1)
        if rows.shape[1] != self.dim:
            raise DimensionError(f"observation dim {rows.shape[1]} vs normalizer {self.dim}")
        for row in rows:
            self.count += 1
            delta = row - self.mean
            self.mean += delta / self.count
            self.m2 += delta * (row - self.mean)

    @property
    def var(self) -> np.ndarray:
        if self.count < 1:
            return np.ones(self.dim)
        return self.m2 / self.count

    def freeze(self) -> None:
        self.frozen = True

    def normalize(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape[-1] != self.dim:
            raise DimensionError(f"observation dim {obs.shape[-1]} vs normalizer {self.dim}")
        if self.count < 1:
            return obs.copy()
        return (obs - self.mean) / np.sqrt(self.var + 1e-8)

    def state(self) -> dict:
        return {"count": self.count, "mean": self.mean.copy(), "m2": self.m2.copy()}

    @classmethod
    def from_state(cls, dim: int, state: dict, frozen: bool = True) -> "RunningNormalizer":
        norm = cls(dim)
        norm.count = int(state["count"])
        norm.mean = np.asarray(state["mean"], dtype=np.float64).copy()
        norm.m2 = np.asarray(state["m2"], dtype=np.float64).copy()
        norm.frozen = frozen
        return norm


# -- registry ----------------------------------------------------------------------


def make_env(env_id: str):
    """Environments by string id: pointmaze-left, pointmaze-right,
    pointmaze-open, line-1d, tabular:<file>."""
    if env_id == "pointmaze-left":
        return PointMazeEnv(PointMazeConfig(barrier_side="left"))
    if env_id == "pointmaze-right":
        return PointMazeEnv(PointMazeConfig(barrier_side="right"))
    if env_id == "pointmaze-open":
        return PointMazeEnv(PointMazeConfig(barrier_side="none"))
    if env_id == "line-1d":
        return Line1DEnv()
    if env_id.startswith("tabular:"):
        return load_tabular(env_id.split(":", 1)[1])
    raise ContractError(f"unknown environment id {env_id!r}")
