"""Adversarial reward learning.

The discriminator classifies expert against replay transitions through the
logit h(s, a, s') - log pi(a|s), where h = r(s, a) + gamma g(s') - g(s).
Everything trains through stable log-sigmoid forms; exp(h) is never
materialized. The extracted, transferable reward is r alone: the shaping
net g and the policy density term are training scaffolding only.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .envs import RunningNormalizer
from .errors import ContractError, SchemaError


@dataclass
class DiscBatch:
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]


class Discriminator:
    def __init__(self, obs_dim: int, act_dim: int, gamma: float,
                 reward_hidden: int = 64, shaping_hidden: int = 64,
                 use_shaping: bool = True, rng=None):
        if rng is None:
            rng = np.random.default_rng()
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.gamma = float(gamma)
        self.use_shaping = use_shaping
        self.reward_net = ad.Mlp([obs_dim + act_dim, reward_hidden, reward_hidden, 1],
                                 ["relu", "relu", "identity"], rng=rng)
        self.shaping_net = ad.Mlp([obs_dim, shaping_hidden, shaping_hidden, 1],
                                  ["relu", "relu", "identity"], rng=rng)

    def parameters(self) -> dict[str, ad.Parameter]:
        out = {f"r.{k}": p for k, p in self.reward_net.parameters().items()}
        if self.use_shaping:
            out.update({f"g.{k}": p for k, p in self.shaping_net.parameters().items()})
        return out

    def h_node(self, states, actions, next_states) -> ad.Node:
        sa = np.concatenate([states, actions], axis=1)
        r = self.reward_net.forward(sa)
        if not self.use_shaping:
            return r
        g_s = self.shaping_net.forward(states)
        g_s2 = self.shaping_net.forward(next_states)
        return ad.add(r, ad.sub(ad.scale(g_s2, self.gamma), g_s))

    def h_values(self, states, actions, next_states) -> np.ndarray:
        sa = np.concatenate([states, actions], axis=1)
        r = self.reward_net.apply(sa)
        if not self.use_shaping:
            return r[:, 0]
        g_s = self.shaping_net.apply(states)
        g_s2 = self.shaping_net.apply(next_states)
        return (r + self.gamma * g_s2 - g_s)[:, 0]

    def reward(self, states, actions) -> np.ndarray:
        """The transferable reward: r(s, a) exactly, nothing else."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        return self.reward_net.apply(np.concatenate([states, actions], axis=1))[:, 0]


def disc_logit(disc: Discriminator, states, actions, next_states, log_pi) -> np.ndarray:
    """h - log pi; its sigmoid equals exp(h) / (exp(h) + pi)."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    next_states = np.atleast_2d(np.asarray(next_states, dtype=np.float64))
    log_pi = np.asarray(log_pi, dtype=np.float64).reshape(-1)
    return disc.h_values(states, actions, next_states) - log_pi


def bce_from_logits(logit_expert: ad.Node, logit_agent: ad.Node) -> ad.Node:
    """-mean log D(expert) - mean log(1 - D(agent)), D = sigmoid(logit).
    Finite for logits far beyond +/-50."""
    loss_exp = ad.scale(ad.mean(ad.log_sigmoid(logit_expert)), -1.0)
    loss_agent = ad.scale(ad.mean(ad.log_sigmoid(ad.scale(logit_agent, -1.0))), -1.0)
    return ad.add(loss_exp, loss_agent)


def gradient_penalty(disc: Discriminator, mixed: DiscBatch) -> ad.Node:
    """mean over the batch of (||grad_x h(x)||_2 - 1)^2 at interpolated
    inputs, differentiable in the discriminator parameters. The policy
    density term has zero input gradient, so h carries the whole norm."""
    ds, da = disc.obs_dim, disc.act_dim
    sa = np.concatenate([mixed.states, mixed.actions], axis=1)
    r_grad = disc.reward_net.input_gradient(sa)  # (n, ds + da)
    parts_s = ad.col_slice(r_grad, 0, ds)
    parts_a = ad.col_slice(r_grad, ds, ds + da)
    if disc.use_shaping:
        g_grad_s = disc.shaping_net.input_gradient(mixed.states)
        g_grad_s2 = disc.shaping_net.input_gradient(mixed.next_states)
        parts_s = ad.sub(parts_s, g_grad_s)
        full = ad.hcat(parts_s, parts_a, ad.scale(g_grad_s2, disc.gamma))
    else:
        full = ad.hcat(parts_s, parts_a)
    sq = ad.sum_cols(ad.square(full))
    norm = ad.sqrt(ad.add(sq, ad.constant(np.full((1, 1), 1e-12))))
    return ad.mean(ad.square(ad.sub(norm, ad.constant(np.ones((1, 1))))))


def make_interpolates(expert: DiscBatch, agent: DiscBatch,
                      rng: np.random.Generator) -> DiscBatch:
    """x_hat = u x_exp + (1 - u) x_agent with one uniform u per sample."""
    n = min(len(expert), len(agent))
    u = rng.uniform(size=(n, 1))
    return DiscBatch(
        u * expert.states[:n] + (1.0 - u) * agent.states[:n],
        u * expert.actions[:n] + (1.0 - u) * agent.actions[:n],
        u * expert.next_states[:n] + (1.0 - u) * agent.next_states[:n],
    )


_LOGP_BOUND = 50.0  # density of a mismatched near-saturated action is
# astronomically negative; unbounded it turns the agent-side loss linear in
# h and blows the network up, so the offset is clamped


def disc_loss(disc: Discriminator, expert: DiscBatch, agent: DiscBatch,
              policy, gp_weight: float = 10.0,
              rng: np.random.Generator | None = None) -> ad.Node:
    """Binary cross-entropy over expert vs replay plus gradient penalty.
    log pi comes from the current policy and enters as a constant."""
    if len(expert) == 0 or len(agent) == 0:
        raise ContractError("discriminator batches must be nonempty")
    logp_exp = np.clip(policy.log_prob(expert.states, expert.actions),
                       -_LOGP_BOUND, _LOGP_BOUND).reshape(-1, 1)
    logp_agent = np.clip(policy.log_prob(agent.states, agent.actions),
                         -_LOGP_BOUND, _LOGP_BOUND).reshape(-1, 1)
    h_exp = disc.h_node(expert.states, expert.actions, expert.next_states)
    h_agent = disc.h_node(agent.states, agent.actions, agent.next_states)
    logit_exp = ad.sub(h_exp, ad.constant(logp_exp))
    logit_agent = ad.sub(h_agent, ad.constant(logp_agent))
    loss = bce_from_logits(logit_exp, logit_agent)
    if gp_weight > 0.0:
        if rng is None:
            raise ContractError("gradient penalty needs an rng for interpolates")
        penalty = gradient_penalty(disc, make_interpolates(expert, agent, rng))
        loss = ad.add(loss, ad.scale(penalty, gp_weight))
    return loss


# -- frozen reward -----------------------------------------------------------------


class RewardHandle:
    """Immutable snapshot of the learned reward with its normalizer.

    Consumes raw absorbing-wrapped observations; the indicator dimension
    passes around the normalizer untouched. Two evaluations of the same
    input are bit-identical.
    """

    def __init__(self, disc: Discriminator, normalizer: RunningNormalizer,
                 raw_dim: int, env_id: str):
        self._net = copy.deepcopy(disc.reward_net)
        self.obs_dim = disc.obs_dim
        self.act_dim = disc.act_dim
        self.raw_dim = int(raw_dim)
        self.env_id = env_id
        self._norm = RunningNormalizer.from_state(raw_dim, normalizer.state())

    def normalize_obs(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        out = states.copy()
        out[:, : self.raw_dim] = np.clip(
            self._norm.normalize(states[:, : self.raw_dim]), -10.0, 10.0
        )
        return out

    def reward(self, states, actions) -> np.ndarray:
        states = self.normalize_obs(states)
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        if states.shape[1] != self.obs_dim:
            raise SchemaError(f"handle expects obs dim {self.obs_dim}, got {states.shape[1]}")
        return self._net.apply(np.concatenate([states, actions], axis=1))[:, 0]

    def save(self, path) -> None:
        arrays = {f"r.{k}": p.value for k, p in self._net.parameters().items()}
        st = self._norm.state()
        arrays["norm.mean"] = st["mean"].reshape(1, -1)
        arrays["norm.m2"] = st["m2"].reshape(1, -1)
        arrays["norm.count"] = np.array([[float(st["count"])]])
        meta = {
            "kind": "reward",
            "env_id": self.env_id,
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "raw_dim": self.raw_dim,
            "sizes": self._net.sizes,
            "activations": self._net.activations,
        }
        ad.save_params(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "RewardHandle":
        arrays, meta = ad.load_params(path)
        if meta.get("kind") != "reward":
            raise SchemaError(f"{path} is not a reward checkpoint")
        handle = cls.__new__(cls)
        handle.obs_dim = int(meta["obs_dim"])
        handle.act_dim = int(meta["act_dim"])
        handle.raw_dim = int(meta["raw_dim"])
        handle.env_id = meta["env_id"]
        net = ad.Mlp(meta["sizes"], meta["activations"])
        for k, p in net.parameters().items():
            key = f"r.{k}"
            if key not in arrays or arrays[key].shape != p.value.shape:
                raise SchemaError(f"checkpoint missing or mis-shaped parameter {key}")
            p.value = arrays[key]
        handle._net = net
        handle._norm = RunningNormalizer.from_state(
            handle.raw_dim,
            {"count": int(arrays["norm.count"][0, 0]),
             "mean": arrays["norm.mean"][0],
             "m2": arrays["norm.m2"][0]},
        )
        return handle
