"""Tanh-squashed Gaussian policy.

Actions are tanh(mu + sigma * eps) with log-std clamped to [-10, 2]; the
log-density carries the change-of-variables correction
-sum log(1 - tanh(u)^2 + 1e-6). Reparameterized graph sampling keeps the
noise constant so pathwise gradients flow through mu and sigma.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .errors import DimensionError

LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0
_LOG_2PI = math.log(2.0 * math.pi)
_SQUASH_EPS = 1e-6
_ATANH_CLIP = 1.0 - 1e-9


class SquashedGaussianPolicy:
    def __init__(self, obs_dim: int, act_dim: int, hidden: int = 256, rng=None):
        if rng is None:
            rng = np.random.default_rng()
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.hidden = int(hidden)
        self.trunk = ad.Mlp([obs_dim, hidden, hidden], ["relu", "relu"], rng=rng)
        self.mean_head = ad.Mlp([hidden, act_dim], ["identity"], rng=rng)
        self.logstd_head = ad.Mlp([hidden, act_dim], ["identity"], rng=rng)

    def parameters(self) -> dict[str, ad.Parameter]:
        out = {}
        for prefix, net in (("trunk", self.trunk), ("mean", self.mean_head),
                            ("logstd", self.logstd_head)):
            for k, p in net.parameters().items():
                out[f"{prefix}.{k}"] = p
        return out

    def networks(self):
        return [self.trunk, self.mean_head, self.logstd_head]

    def _check_obs(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.ndim == 1:
            obs = obs.reshape(1, -1)
        if obs.shape[1] != self.obs_dim:
            raise DimensionError(f"obs dim {obs.shape[1]} vs policy {self.obs_dim}")
        return obs

    # -- fast (graph-free) paths ------------------------------------------

    def _stats(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = self.trunk.apply(obs)
        mu = self.mean_head.apply(h)
        log_std = np.clip(self.logstd_head.apply(h), LOG_STD_MIN, LOG_STD_MAX)
        return mu, log_std

    def act(self, obs, rng: np.random.Generator | None = None,
            deterministic: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Sample actions (or take tanh(mu)); returns (actions, log_probs)."""
        obs = self._check_obs(obs)
        mu, log_std = self._stats(obs)
        if deterministic:
            a = np.tanh(mu)
            return a, self._logp_from_stats(mu, log_std, np.tanh(mu))
        eps = rng.standard_normal(mu.shape)
        u = mu + np.exp(log_std) * eps
        a = np.tanh(u)
        gauss = -0.5 * eps**2 - log_std - 0.5 * _LOG_2PI
        corr = np.log(1.0 - a**2 + _SQUASH_EPS)
        logp = (gauss - corr).sum(axis=1)
        return a, logp

    def log_prob(self, obs, actions) -> np.ndarray:
        """Log-density of given squashed actions under the current policy."""
        obs = self._check_obs(obs)
        mu, log_std = self._stats(obs)
        a = np.clip(np.asarray(actions, dtype=np.float64), -_ATANH_CLIP, _ATANH_CLIP)
        return self._logp_from_stats(mu, log_std, a)

    @staticmethod
    def _logp_from_stats(mu, log_std, actions) -> np.ndarray:
        a = np.clip(actions, -_ATANH_CLIP, _ATANH_CLIP)
        u = np.arctanh(a)
        std = np.exp(log_std)
        gauss = -0.5 * ((u - mu) / std) ** 2 - log_std - 0.5 * _LOG_2PI
        corr = np.log(1.0 - a**2 + _SQUASH_EPS)
        return (gauss - corr).sum(axis=1)

    # -- graph paths --------------------------------------------------------

    def _stats_node(self, obs, params_const: bool) -> tuple[ad.Node, ad.Node]:
        h = self.trunk.forward(obs, params_const=params_const)
        mu = self.mean_head.forward(h, params_const=params_const)
        log_std = ad.clip(self.logstd_head.forward(h, params_const=params_const),
                          LOG_STD_MIN, LOG_STD_MAX)
        return mu, log_std

    def sample_node(self, obs, rng: np.random.Generator,
                    params_const: bool = False) -> tuple[ad.Node, ad.Node]:
        """Reparameterized draw as graph nodes: (actions (n,d), log_probs (n,1)).

        The Gaussian part of the log-density reduces to -eps^2/2 - log_std
        under reparameterization, so only log_std and the squash correction
        stay on the tape.
        """
        obs_arr = self._check_obs(obs.value if isinstance(obs, ad.Node) else obs)
        mu, log_std = self._stats_node(obs if isinstance(obs, ad.Node) else obs_arr,
                                       params_const)
        eps = rng.standard_normal((obs_arr.shape[0], self.act_dim))
        u = ad.add(mu, ad.mul(ad.exp(log_std), ad.constant(eps)))
        a = ad.tanh(u)
        gauss = ad.sub(ad.constant(-0.5 * eps**2 - 0.5 * _LOG_2PI), log_std)
        # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)); exact, and its
        # gradient survives saturation where the clipped form's dies
        corr = ad.scale(
            ad.sub(ad.constant(np.full((1, 1), math.log(2.0))),
                   ad.add(u, ad.softplus(ad.scale(u, -2.0)))),
            2.0,
        )
        logp = ad.sum_cols(ad.sub(gauss, corr))
        return a, logp

    def mean_action_node(self, obs, params_const: bool = False) -> ad.Node:
        """tanh(mu) as a graph node; the deterministic action used by the
        behavior-cloning term."""
        mu, _ = self._stats_node(obs, params_const)
        return ad.tanh(mu)
