"""SAC-lite forward trainer on the ground-truth reward, and the
demonstration collector.

Twin critics with min-of-two targets, Polyak-averaged target copies, and a
learned temperature driven toward target entropy -dim(A). Produces the
expert checkpoints and trajectory files the reward learner consumes; the
same machinery retrains policies against a frozen learned reward.
"""

from __future__ import annotations

import copy
import csv
import time
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .errors import ContractError, SchemaError, TrainingDiverged
from .envs import make_env
from .policy import SquashedGaussianPolicy
from .replay import Episode, ReplayBuffer, Transition, save_trajectories
from .seeding import component_rng


@dataclass
class SacConfig:
    gamma: float = 0.99
    tau: float = 0.005
    lr: float = 3e-4
    batch_size: int = 256
    hidden: int = 256
    total_steps: int = 30_000
    start_steps: int = 1_000
    update_every: int = 1
    target_entropy: float | None = None  # default -dim(A)
    init_alpha: float = 0.1
    eval_interval: int = 1_000
    eval_episodes: int = 20
    buffer_capacity: int | None = None  # default total_steps
    stop_return: float | None = None  # early stop once eval mean passes this
    stop_success: float | None = None

    def __post_init__(self):
        for name in ("gamma", "tau"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ContractError(f"{name} must lie in (0, 1], got {v}")
        for name in ("lr", "batch_size", "total_steps", "init_alpha"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def _critic_net(obs_dim, act_dim, hidden, rng) -> ad.Mlp:
    return ad.Mlp([obs_dim + act_dim, hidden, hidden, 1], ["relu", "relu", "identity"], rng=rng)


class SacAgent:
    """Policy, twin critics and temperature for one training run."""

    def __init__(self, obs_dim: int, act_dim: int, cfg: SacConfig, seed: int):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        init_rng = component_rng(seed, "sac-init")
        self.policy = SquashedGaussianPolicy(obs_dim, act_dim, cfg.hidden, rng=init_rng)
        self.q1 = _critic_net(obs_dim, act_dim, cfg.hidden, init_rng)
        self.q2 = _critic_net(obs_dim, act_dim, cfg.hidden, init_rng)
        self.q1_target = copy.deepcopy(self.q1)
        self.q2_target = copy.deepcopy(self.q2)
        self.log_alpha = ad.Parameter(np.log(cfg.init_alpha) * np.ones((1, 1)))
        self.target_entropy = (
            -float(act_dim) if cfg.target_entropy is None else cfg.target_entropy
        )
        self.policy_opt = ad.Adam(self.policy.parameters(), cfg.lr)
        self.q1_opt = ad.Adam(self.q1.parameters(), cfg.lr)
        self.q2_opt = ad.Adam(self.q2.parameters(), cfg.lr)
        self.alpha_opt = ad.Adam({"log_alpha": self.log_alpha}, cfg.lr)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.value[0, 0]))

    def update(self, batch, rng: np.random.Generator) -> dict[str, float]:
        cfg = self.cfg
        s, a, r, s2 = batch.states, batch.actions, batch.rewards, batch.next_states
        bootstrap = ~batch.terminated  # time-limit truncation still bootstraps

        # critic targets: graph-free
        a2, logp2 = self.policy.act(s2, rng)
        sa2 = np.concatenate([s2, a2], axis=1)
        q_next = np.minimum(self.q1_target.apply(sa2), self.q2_target.apply(sa2))[:, 0]
        y = r + cfg.gamma * bootstrap * (q_next - self.alpha * logp2)
        y_node = ad.constant(y.reshape(-1, 1))

        sa = np.concatenate([s, a], axis=1)
        q1_pred = self.q1.forward(sa)
        q2_pred = self.q2.forward(sa)
        q_loss = ad.add(
            ad.mean(ad.square(ad.sub(q1_pred, y_node))),
            ad.mean(ad.square(ad.sub(q2_pred, y_node))),
        )
        self.q1_opt.zero_grad()
        self.q2_opt.zero_grad()
        ad.backward(q_loss)
        self.q1_opt.step()
        self.q2_opt.step()

        # policy: reparameterized actions through frozen critics
        a_pi, logp_pi = self.policy.sample_node(s, rng)
        sa_pi = ad.hcat(ad.constant(s), a_pi)
        q_pi = ad.minimum(self.q1.forward(sa_pi, params_const=True),
                          self.q2.forward(sa_pi, params_const=True))
        pi_loss = ad.mean(ad.sub(ad.scale(logp_pi, self.alpha), q_pi))
        self.policy_opt.zero_grad()
        ad.backward(pi_loss)
        self.policy_opt.step()

        # temperature: dual ascent toward target entropy, logp detached
        logp_mean = float(logp_pi.value.mean())
        alpha_grad = -(logp_mean + self.target_entropy)
        self.alpha_opt.step({"log_alpha": np.array([[alpha_grad]])})

        self._polyak(self.q1, self.q1_target, cfg.tau)
        self._polyak(self.q2, self.q2_target, cfg.tau)
        return {
            "q_loss": float(q_loss.value[0, 0]),
            "pi_loss": float(pi_loss.value[0, 0]),
            "alpha": self.alpha,
            "entropy": -logp_mean,
        }

    @staticmethod
    def _polyak(net: ad.Mlp, target: ad.Mlp, tau: float) -> None:
        for p, tp in zip(net.parameters().values(), target.parameters().values()):
            tp.value *= 1.0 - tau
            tp.value += tau * p.value


def evaluate_policy(policy, env, episodes: int, rng: np.random.Generator,
                    deterministic: bool = True,
                    obs_transform=None) -> dict[str, float]:
    """Mean/std return and goal-success rate on the ground-truth reward."""
    returns, successes = [], []
    for _ in range(episodes):
        obs = env.reset(rng=rng)
        total = 0.0
        terminated = False
        while True:
            inp = obs_transform(obs) if obs_transform else obs
            act, _ = policy.act(inp, rng, deterministic=deterministic)
            res = env.step(act[0])
            total += res.reward
            obs = res.next_obs
            if res.done:
                terminated = res.terminated
                break
        returns.append(total)
        successes.append(1.0 if terminated else 0.0)
    returns = np.asarray(returns)
    return {
        "return_mean": float(returns.mean()),
        "return_std": float(returns.std()),
        "success_rate": float(np.mean(successes)),
    }


def train_sac(env_id: str, cfg: SacConfig, seed: int,
              reward_fn=None, wrap=None, metrics_path=None,
              log=None) -> tuple[SacAgent, list[dict]]:
    """Runs SAC-lite; reward_fn (if given) replaces the env reward, which is
    how a frozen learned reward gets re-optimized on a new environment."""
    env = make_env(env_id)
    if wrap is not None:
        env = wrap(env)
    agent = SacAgent(env.obs_dim, env.act_dim, cfg, seed)
    capacity = cfg.buffer_capacity or cfg.total_steps
    buffer = ReplayBuffer(capacity, env.obs_dim, env.act_dim)
    env_rng = component_rng(seed, "sac-env")
    act_rng = component_rng(seed, "sac-act")
    batch_rng = component_rng(seed, "sac-batch")
    eval_rng_seed = seed

    obs = env.reset(rng=env_rng)
    history: list[dict] = []
    t0 = time.time()
    for step in range(1, cfg.total_steps + 1):
        if step <= cfg.start_steps:
            action = act_rng.uniform(-1.0, 1.0, size=env.act_dim)
        else:
            action, _ = agent.policy.act(obs, act_rng)
            action = action[0]
        res = env.step(action)
        buffer.push(Transition(obs, action, res.reward, res.next_obs,
                               res.terminated, res.truncated))
        obs = res.next_obs if not res.done else env.reset(rng=env_rng)

        stats = {}
        if step > cfg.start_steps and step % cfg.update_every == 0:
            batch = buffer.sample(cfg.batch_size, batch_rng)
            if reward_fn is not None:
                batch.rewards = reward_fn(batch.states, batch.actions)
            stats = agent.update(batch, act_rng)
            for name, v in stats.items():
                if not np.isfinite(v):
                    raise TrainingDiverged(f"step {step}: {name} is {v}")

        if step % cfg.eval_interval == 0 or step == cfg.total_steps:
            eval_rng = component_rng(eval_rng_seed, f"sac-eval-{step}")
            raw_eval_env = make_env(env_id)
            transform = (lambda o: np.concatenate([o, [0.0]])) if wrap is not None else None
            ev = evaluate_policy(agent.policy, raw_eval_env, cfg.eval_episodes,
                                 eval_rng, obs_transform=transform)
            row = {"step": step, **ev, **{k: stats.get(k, float("nan")) for k in
                                          ("q_loss", "pi_loss", "alpha", "entropy")}}
            history.append(row)
            if log:
                log(f"step {step}: return {ev['return_mean']:.2f} "
                    f"(+/-{ev['return_std']:.2f}) success {ev['success_rate']:.2f} "
                    f"[{time.time() - t0:.0f}s]")
            hit_return = cfg.stop_return is not None and ev["return_mean"] >= cfg.stop_return
            hit_success = cfg.stop_success is not None and ev["success_rate"] >= cfg.stop_success
            if hit_return or hit_success:
                break
    if metrics_path:
        write_metrics_csv(metrics_path, history)
    return agent, history


def write_metrics_csv(path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: format(v, ".17g") if isinstance(v, float) else v
                             for k, v in row.items()})


# -- checkpoints ----------------------------------------------------------------


def save_policy(path, policy: SquashedGaussianPolicy, env_id: str) -> None:
    arrays = {k: p.value for k, p in policy.parameters().items()}
    meta = {
        "kind": "policy",
        "env_id": env_id,
        "obs_dim": policy.obs_dim,
        "act_dim": policy.act_dim,
        "hidden": policy.hidden,
    }
    ad.save_params(path, arrays, meta)


def load_policy(path) -> tuple[SquashedGaussianPolicy, dict]:
    arrays, meta = ad.load_params(path)
    if meta.get("kind") != "policy":
        raise SchemaError(f"{path} is not a policy checkpoint")
    policy = SquashedGaussianPolicy(meta["obs_dim"], meta["act_dim"], meta["hidden"])
    params = policy.parameters()
    if set(params) != set(arrays):
        raise SchemaError("checkpoint parameter names do not match the policy layout")
    for k, p in params.items():
        if arrays[k].shape != p.value.shape:
            raise SchemaError(f"parameter {k} has shape {arrays[k].shape}, "
                              f"expected {p.value.shape}")
        p.value = arrays[k]
    return policy, meta


def train_expert(env_id: str, cfg: SacConfig, seed: int, out_dir=None,
                 log=None) -> tuple[SquashedGaussianPolicy, dict]:
    """Trains the expert and (optionally) writes checkpoint + curve CSV."""
    agent, history = train_sac(
        env_id, cfg, seed,
        metrics_path=(f"{out_dir}/expert_metrics.csv" if out_dir else None),
        log=log,
    )
    final = history[-1] if history else {}
    if out_dir:
        save_policy(f"{out_dir}/expert_policy.txt", agent.policy, env_id)
    return agent.policy, final


def collect(policy: SquashedGaussianPolicy, env_id: str, n_episodes: int,
            seed: int, path, deterministic: bool = True) -> list[Episode]:
    """Rolls out demonstration episodes and writes the trajectory file."""
    env = make_env(env_id)
    if env.obs_dim != policy.obs_dim or env.act_dim != policy.act_dim:
        raise SchemaError(
            f"policy dims ({policy.obs_dim}, {policy.act_dim}) do not match "
            f"env {env_id!r} dims ({env.obs_dim}, {env.act_dim})"
        )
    env_rng = component_rng(seed, "collect-env")
    act_rng = component_rng(seed, "collect-act")
    episodes: list[Episode] = []
    for _ in range(n_episodes):
        obs = env.reset(rng=env_rng)
        observations = [obs]
        actions, rewards = [], []
        terminated = False
        while True:
            act, _ = policy.act(obs, act_rng, deterministic=deterministic)
            res = env.step(act[0])
            actions.append(act[0])
            rewards.append(res.reward)
            observations.append(res.next_obs)
            obs = res.next_obs
            if res.done:
                terminated = res.terminated
                break
        episodes.append(Episode(np.stack(observations), np.stack(actions),
                                np.asarray(rewards), terminated))
    save_trajectories(path, episodes, env_id)
    return episodes
