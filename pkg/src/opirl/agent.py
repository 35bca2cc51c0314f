"""The off-policy reward-and-policy learner.

One objective drives both networks:

    J = (1 - gamma) E[Q(s0, a0)] + E_replay[f*(delta)],
    delta = r(s, a) - eta log pi(a'|s') + gamma Q_mix(s', a') - Q(s, a),

with Q_mix blending the live critic and its Polyak target. The critic
descends J, the policy ascends it (the initial-state term pushes the policy
toward high-Q actions), and a Q-filtered behavior-cloning term adds
mode-covering pressure. The discriminator trains between the expert buffer
and the replay buffer and its reward head is the transferable product.
"""

from __future__ import annotations

import copy
import csv
import time
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .divergence import PNormGenerator, conjugate_node
from .envs import RunningNormalizer, make_env, wrap_absorbing
from .errors import ContractError, SchemaError, TrainingDiverged
from .expert import SacConfig, evaluate_policy, save_policy, train_sac, write_metrics_csv
from .irl import DiscBatch, Discriminator, RewardHandle, disc_loss
from .policy import SquashedGaussianPolicy
from .replay import InitialStateBuffer, ReplayBuffer, Transition, load_trajectories
from .seeding import component_rng

METRIC_COLUMNS = [
    "step", "episode-return-mean", "episode-return-std", "disc-loss",
    "critic-J", "policy-J", "bc-loss", "eta", "q-mean", "success-rate",
]


@dataclass
class OpirlConfig:
    gamma: float = 0.99
    batch_size: int = 256
    actor_lr: float = 1e-5
    critic_lr: float = 1e-3
    disc_lr: float = 1e-5
    temp_lr: float = 3e-4
    lambda1: float = 1e-3  # actor objective coefficient
    lambda2: float = -1.0  # BC coefficient; negative means 1/batch_size
    lambda3: float = 0.05  # live fraction in the next-Q mix
    tau: float = 0.005
    gp_weight: float = 10.0
    f_exponent: float = 1.5
    f_coefficient: float = 2.0 / 3.0  # 0.5 selectable
    policy_hidden: int = 256
    critic_hidden: int = 256
    reward_hidden: int = 64
    shaping_hidden: int = 64
    use_shaping: bool = True
    total_steps: int = 50_000
    buffer_capacity: int = -1  # negative means 2 * total_steps
    start_steps: int = 1_000
    irl_steps: int = 1
    rl_steps: int = 1
    target_entropy: float = float("nan")  # nan means -dim(A)
    init_eta: float = 0.1
    eta_min: float = 1e-4
    eta_max: float = 2.0
    bc_enabled: bool = True
    q_filter_enabled: bool = True
    q_filter_warmup: int = 0  # updates before the filter engages
    bc_source: str = "replay"  # or "expert"
    init_action_source: str = "policy"  # or "recorded"
    eval_interval: int = 1_000
    eval_episodes: int = 20
    stop_return: float = float("nan")  # nan means run to total_steps

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ContractError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 <= self.lambda3 <= 1.0:
            raise ContractError(f"lambda3 must lie in [0, 1], got {self.lambda3}")
        for name in ("batch_size", "actor_lr", "critic_lr", "disc_lr", "temp_lr",
                     "lambda1", "total_steps"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.bc_source not in ("replay", "expert"):
            raise ContractError(f"bc_source must be 'replay' or 'expert', got {self.bc_source!r}")
        if self.init_action_source not in ("policy", "recorded"):
            raise ContractError(f"init_action_source must be 'policy' or 'recorded'")
        if self.f_exponent <= 1.0:
            raise ContractError("f_exponent must exceed 1")

    @property
    def bc_weight(self) -> float:
        return (1.0 / self.batch_size) if self.lambda2 < 0 else self.lambda2

    @property
    def capacity(self) -> int:
        return (2 * self.total_steps) if self.buffer_capacity < 0 else self.buffer_capacity

    def generator(self) -> PNormGenerator:
        return PNormGenerator(p=self.f_exponent, c=self.f_coefficient)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


class CriticEnsemble:
    """Q, its Polyak target, and the next-value mixing coefficient."""

    def __init__(self, obs_dim: int, act_dim: int, hidden: int,
                 lambda3: float, tau: float, rng=None):
        self.q_net = ad.Mlp([obs_dim + act_dim, hidden, hidden, 1],
                            ["relu", "relu", "identity"], rng=rng)
        self.q_target = copy.deepcopy(self.q_net)
        self.lambda3 = float(lambda3)
        self.tau = float(tau)

    def parameters(self) -> dict[str, ad.Parameter]:
        return self.q_net.parameters()

    def _join(self, states, actions):
        s = ad.constant(states) if not isinstance(states, ad.Node) else states
        a = ad.constant(actions) if not isinstance(actions, ad.Node) else actions
        return ad.hcat(s, a)

    def q_node(self, states, actions, params_const: bool = False) -> ad.Node:
        return self.q_net.forward(self._join(states, actions), params_const=params_const)

    def q_apply(self, states, actions) -> np.ndarray:
        return self.q_net.apply(np.concatenate([states, actions], axis=1))[:, 0]

    def mixed_next_q(self, next_states, next_actions, params_const: bool = False) -> ad.Node:
        """lambda3 Q + (1 - lambda3) Qbar; the target copy's parameters are
        always constants, only its action input stays on the tape."""
        live = self.q_node(next_states, next_actions, params_const=params_const)
        if self.lambda3 >= 1.0:
            return live
        frozen = self.q_target.forward(self._join(next_states, next_actions),
                                       params_const=True)
        return ad.add(ad.scale(live, self.lambda3), ad.scale(frozen, 1.0 - self.lambda3))

    def polyak(self) -> None:
        for p, tp in zip(self.q_net.parameters().values(),
                         self.q_target.parameters().values()):
            tp.value *= 1.0 - self.tau
            tp.value += self.tau * p.value


class Temperature:
    """Entropy coefficient in log space; always positive, and projected into
    [eta_min, eta_max] after each update so a transient entropy collapse
    cannot blow up the residual."""

    def __init__(self, target_entropy: float, init_eta: float = 0.1,
                 eta_min: float = 1e-4, eta_max: float = 2.0):
        if init_eta <= 0:
            raise ContractError("initial temperature must be positive")
        self.log_eta = ad.Parameter(np.log(init_eta) * np.ones((1, 1)))
        self.target_entropy = float(target_entropy)
        self.log_bounds = (np.log(eta_min), np.log(eta_max))

    def project(self) -> None:
        self.log_eta.value[:] = np.clip(self.log_eta.value, *self.log_bounds)

    @property
    def eta(self) -> float:
        return float(np.exp(self.log_eta.value[0, 0]))


# -- objective pieces -------------------------------------------------------------


def delta(reward_values, critic: CriticEnsemble, policy, batch, eta: float,
          gamma: float, rng: np.random.Generator,
          policy_const: bool = False, critic_const: bool = False) -> ad.Node:
    """Entropy-regularized Bellman residual per sample, (n, 1).

    reward_values: per-sample rewards from the current reward head.
    a' is freshly drawn from the policy at s'; terminated transitions carry
    the absorbing observation as s', so they need no special casing.
    """
    a2, logp2 = policy.sample_node(batch.next_states, rng, params_const=policy_const)
    q_next = critic.mixed_next_q(batch.next_states, a2, params_const=critic_const)
    q_sa = critic.q_node(batch.states, batch.actions, params_const=critic_const)
    r = ad.constant(np.asarray(reward_values, dtype=np.float64).reshape(-1, 1))
    resid = ad.add(r, ad.sub(ad.scale(q_next, gamma), q_sa))
    if eta != 0.0:
        resid = ad.sub(resid, ad.scale(logp2, eta))
    return resid


def objective(reward_values, batch, init_states, policy, critic: CriticEnsemble,
              eta: float, gamma: float, gen: PNormGenerator,
              rng: np.random.Generator, init_actions=None,
              policy_const: bool = False, critic_const: bool = False) -> tuple[ad.Node, dict]:
    """J = (1 - gamma) mean Q(s0, a0) + mean f*(delta). Returns the node and
    a few detached diagnostics."""
    if init_states is None or len(init_states) == 0:
        raise ContractError("objective needs a nonempty initial-state batch")
    if init_actions is None:
        a0, _ = policy.sample_node(init_states, rng, params_const=policy_const)
    else:
        a0 = ad.constant(init_actions)
    q0 = critic.q_node(init_states, a0, params_const=critic_const)
    resid = delta(reward_values, critic, policy, batch, eta, gamma, rng,
                  policy_const=policy_const, critic_const=critic_const)
    j = ad.add(ad.scale(ad.mean(q0), 1.0 - gamma), ad.mean(conjugate_node(gen, resid)))
    diag = {"q0_mean": float(q0.value.mean()), "delta_mean": float(resid.value.mean())}
    return j, diag


def critic_loss(reward_values, batch, init_states, policy, critic, eta, gamma,
                gen, rng, init_actions=None) -> ad.Node:
    """The critic descends J directly; policy parameters enter as constants."""
    j, _ = objective(reward_values, batch, init_states, policy, critic, eta, gamma,
                     gen, rng, init_actions=init_actions, policy_const=True)
    return j


def policy_loss(reward_values, batch, init_states, policy, critic, eta, gamma,
                gen, rng, lambda1: float, init_actions=None) -> ad.Node:
    """Descending this node ascends J along the policy-dependent paths (the
    initial-state action and a' inside the residual)."""
    j, _ = objective(reward_values, batch, init_states, policy, critic, eta, gamma,
                     gen, rng, init_actions=init_actions, critic_const=True)
    return ad.scale(j, -lambda1)


def bc_qfilter_loss(policy, critic: CriticEnsemble, states, actions,
                    bc_weight: float, q_filter: bool = True) -> ad.Node:
    """Squared gap to the batch action wherever the critic rates that action
    at least as well as the policy's own (ties keep the clone term active),
    averaged over the whole batch and scaled by the BC coefficient."""
    mean_act = policy.mean_action_node(states)
    if q_filter:
        q_pi = critic.q_apply(states, mean_act.value)
        q_data = critic.q_apply(states, actions)
        mask = (q_pi <= q_data).astype(np.float64).reshape(-1, 1)
    else:
        mask = np.ones((states.shape[0], 1))
    gaps = ad.sum_cols(ad.square(ad.sub(mean_act, ad.constant(actions))))
    return ad.scale(ad.mean(ad.mul(gaps, ad.constant(mask))), bc_weight)


def temperature_loss(temperature: Temperature, states, policy,
                     rng: np.random.Generator) -> ad.Node:
    """-log_eta (mean log pi + target entropy), log pi detached: the SAC
    dual update. Entropy below target makes eta grow."""
    _, logp = policy.act(states, rng)
    coeff = float(logp.mean()) + temperature.target_entropy
    return ad.scale(temperature.log_eta, -coeff)


# -- demo ingestion ---------------------------------------------------------------


def build_expert_buffer(episodes, horizon: int, obs_dim_raw: int,
                        act_dim: int) -> tuple[ReplayBuffer, np.ndarray, np.ndarray]:
    """Absorbing-wraps demonstration episodes into an expert buffer.

    Terminated episodes get a transition into the absorbing observation and
    zero-action self-loops up to the horizon (no expert action exists for
    synthetic absorbing steps). Returns the buffer plus the initial
    observations and first actions.
    """
    wrapped_dim = obs_dim_raw + 1
    total = sum(horizon if ep.terminated else len(ep) for ep in episodes)
    buffer = ReplayBuffer(max(total, 1), wrapped_dim, act_dim)
    absorbing = np.zeros(wrapped_dim)
    absorbing[-1] = 1.0
    zero_action = np.zeros(act_dim)
    init_obs, init_acts = [], []
    for ep in episodes:
        steps = len(ep)
        wrapped = np.concatenate([ep.observations, np.zeros((steps + 1, 1))], axis=1)
        init_obs.append(wrapped[0])
        init_acts.append(ep.actions[0])
        for t in range(steps):
            last = t == steps - 1
            nxt = absorbing if (last and ep.terminated) else wrapped[t + 1]
            buffer.push(Transition(wrapped[t], ep.actions[t], 0.0, nxt,
                                   False, last and not ep.terminated))
        if ep.terminated:
            for _ in range(steps, horizon):
                buffer.push(Transition(absorbing, zero_action, 0.0, absorbing,
                                       False, False))
    return buffer, np.stack(init_obs), np.stack(init_acts)


# -- the trainer ------------------------------------------------------------------


@dataclass
class TrainResult:
    handle: RewardHandle
    policy: SquashedGaussianPolicy
    history: list[dict]
    steps_to_stop: int | None  # first eval step that met stop_return
    final_return: float
    final_success: float


class OpirlTrainer:
    def __init__(self, env_id: str, demos_path, cfg: OpirlConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.env_id = env_id
        raw_env = make_env(env_id)
        self.env = wrap_absorbing(raw_env)
        self.raw_dim = raw_env.obs_dim
        self.obs_dim = self.env.obs_dim
        self.act_dim = self.env.act_dim

        episodes, header = load_trajectories(demos_path)
        if header["obs_dim"] != raw_env.obs_dim or header["act_dim"] != raw_env.act_dim:
            raise SchemaError(
                f"demo file dims ({header['obs_dim']}, {header['act_dim']}) do not "
                f"match env {env_id!r} dims ({raw_env.obs_dim}, {raw_env.act_dim})"
            )
        self.expert_buffer, demo_init_obs, demo_init_acts = build_expert_buffer(
            episodes, self.env.horizon, raw_env.obs_dim, raw_env.act_dim
        )

        init_rng = component_rng(seed, "opirl-init")
        self.policy = SquashedGaussianPolicy(self.obs_dim, self.act_dim,
                                             cfg.policy_hidden, rng=init_rng)
        self.critic = CriticEnsemble(self.obs_dim, self.act_dim, cfg.critic_hidden,
                                     cfg.lambda3, cfg.tau, rng=init_rng)
        self.disc = Discriminator(self.obs_dim, self.act_dim, cfg.gamma,
                                  cfg.reward_hidden, cfg.shaping_hidden,
                                  use_shaping=cfg.use_shaping, rng=init_rng)
        target_h = -float(self.act_dim) if np.isnan(cfg.target_entropy) else cfg.target_entropy
        self.temperature = Temperature(target_h, cfg.init_eta, cfg.eta_min, cfg.eta_max)
        self.gen = cfg.generator()

        self.policy_opt = ad.Adam(self.policy.parameters(), cfg.actor_lr)
        self.critic_opt = ad.Adam(self.critic.parameters(), cfg.critic_lr)
        self.disc_opt = ad.Adam(self.disc.parameters(), cfg.disc_lr)
        self.temp_opt = ad.Adam({"log_eta": self.temperature.log_eta}, cfg.temp_lr)

        self.buffer = ReplayBuffer(cfg.capacity, self.obs_dim, self.act_dim)
        self.init_buffer = InitialStateBuffer(self.obs_dim, self.act_dim)
        for obs, act in zip(demo_init_obs, demo_init_acts):
            self.init_buffer.push(obs, act)

        # stats stream during warmup and freeze when updates begin: drifting
        # statistics silently retarget every network's input space, which a
        # slow-timescale actor can never chase
        self.normalizer = RunningNormalizer(self.raw_dim)

        self.env_rng = component_rng(seed, "opirl-env")
        self.act_rng = component_rng(seed, "opirl-act")
        self.batch_rng = component_rng(seed, "opirl-batch")
        self.update_rng = component_rng(seed, "opirl-update")
        self.gp_rng = component_rng(seed, "opirl-gp")
        self._updates_done = 0

    # observation pipeline: buffers hold raw wrapped obs, networks see
    # z-scored real dims (clipped to +/-10 against distribution shift) with
    # the absorbing indicator passed through
    def norm_obs(self, obs: np.ndarray) -> np.ndarray:
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        out = obs.copy()
        out[:, : self.raw_dim] = np.clip(
            self.normalizer.normalize(obs[:, : self.raw_dim]), -10.0, 10.0
        )
        return out

    def reward_values(self, states_raw, actions) -> np.ndarray:
        return self.disc.reward(self.norm_obs(states_raw), actions)

    def make_handle(self) -> RewardHandle:
        return RewardHandle(self.disc, self.normalizer, self.raw_dim, self.env_id)

    def _disc_update(self) -> float:
        cfg = self.cfg
        exp = self.expert_buffer.sample(cfg.batch_size, self.batch_rng)
        agent = self.buffer.sample(cfg.batch_size, self.batch_rng)
        exp_b = DiscBatch(self.norm_obs(exp.states), exp.actions,
                          self.norm_obs(exp.next_states))
        agent_b = DiscBatch(self.norm_obs(agent.states), agent.actions,
                            self.norm_obs(agent.next_states))
        loss = disc_loss(self.disc, exp_b, agent_b, self.policy,
                         gp_weight=cfg.gp_weight, rng=self.gp_rng)
        self.disc_opt.zero_grad()
        ad.backward(loss)
        self.disc_opt.step()
        return float(loss.value[0, 0])

    def _rl_update(self) -> dict[str, float]:
        cfg = self.cfg
        batch = self.buffer.sample(cfg.batch_size, self.batch_rng)
        states_n = self.norm_obs(batch.states)
        next_states_n = self.norm_obs(batch.next_states)
        rewards = self.disc.reward(states_n, batch.actions)
        norm_batch = DiscBatch(states_n, batch.actions, next_states_n)

        init_raw, init_acts = self.init_buffer.sample(cfg.batch_size, self.batch_rng)
        init_n = self.norm_obs(init_raw)
        recorded = init_acts if cfg.init_action_source == "recorded" else None

        # one graph, one backward; read gradients for both parameter sets
        j, diag = objective(rewards, norm_batch, init_n, self.policy, self.critic,
                            self.temperature.eta, cfg.gamma, self.gen,
                            self.update_rng, init_actions=recorded)
        self.critic_opt.zero_grad()
        self.policy_opt.zero_grad()
        ad.backward(j)
        critic_grads = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.value))
                        for k, p in self.critic.parameters().items()}
        policy_grads_j = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.value))
                          for k, p in self.policy.parameters().items()}

        bc_value = 0.0
        self.policy_opt.zero_grad()
        if cfg.bc_enabled:
            if cfg.bc_source == "expert":
                bc_batch = self.expert_buffer.sample(cfg.batch_size, self.batch_rng)
            else:
                bc_batch = batch
            filter_on = (cfg.q_filter_enabled
                         and self._updates_done >= cfg.q_filter_warmup)
            bc = bc_qfilter_loss(self.policy, self.critic,
                                 self.norm_obs(bc_batch.states), bc_batch.actions,
                                 cfg.bc_weight, q_filter=filter_on)
            ad.backward(bc)
            bc_value = float(bc.value[0, 0])
        combined = {}
        for k, p in self.policy.parameters().items():
            g_bc = p.grad if p.grad is not None else 0.0
            combined[k] = g_bc - cfg.lambda1 * policy_grads_j[k]

        self.critic_opt.step(critic_grads)
        self.policy_opt.step(combined)
        self._updates_done += 1

        t_loss = temperature_loss(self.temperature, states_n, self.policy,
                                  self.update_rng)
        self.temp_opt.zero_grad()
        ad.backward(t_loss)
        self.temp_opt.step()
        self.temperature.project()

        self.critic.polyak()
        j_value = float(j.value[0, 0])
        q_mean = float(self.critic.q_apply(states_n, batch.actions).mean())
        return {
            "critic-J": j_value,
            "policy-J": -cfg.lambda1 * j_value,
            "bc-loss": bc_value,
            "eta": self.temperature.eta,
            "q-mean": q_mean,
            "delta-mean": diag["delta_mean"],
        }

    def evaluate(self, step: int) -> dict[str, float]:
        rng = component_rng(self.seed, f"opirl-eval-{step}")
        raw_env = make_env(self.env_id)

        def transform(obs):
            return self.norm_obs(np.concatenate([obs, [0.0]]))[0]

        return evaluate_policy(self.policy, raw_env, self.cfg.eval_episodes, rng,
                               obs_transform=transform)

    def train(self, metrics_path=None, log=None) -> TrainResult:
        cfg = self.cfg
        history: list[dict] = []
        steps_to_stop = None
        obs = self.env.reset(rng=self.env_rng)
        self.normalizer.update(obs[: self.raw_dim])
        episode_first_step = True
        last_losses = {"disc-loss": float("nan"), "critic-J": float("nan"),
                       "policy-J": float("nan"), "bc-loss": float("nan"),
                       "eta": self.temperature.eta, "q-mean": float("nan")}
        t0 = time.time()
        for step in range(1, cfg.total_steps + 1):
            if step <= cfg.start_steps:
                action = self.act_rng.uniform(-1.0, 1.0, size=self.act_dim)
            else:
                action, _ = self.policy.act(self.norm_obs(obs), self.act_rng)
                action = action[0]
            if episode_first_step:
                self.init_buffer.push(obs, action)
                episode_first_step = False
            res = self.env.step(action)
            cached_r = float(self.reward_values(obs.reshape(1, -1),
                                                action.reshape(1, -1))[0])
            self.buffer.push(Transition(obs, action, cached_r, res.next_obs,
                                        res.terminated, res.truncated))
            if not self.normalizer.frozen:
                if res.next_obs[-1] == 0.0:
                    self.normalizer.update(res.next_obs[: self.raw_dim])
            if res.done:
                obs = self.env.reset(rng=self.env_rng)
                if not self.normalizer.frozen:
                    self.normalizer.update(obs[: self.raw_dim])
                episode_first_step = True
            else:
                obs = res.next_obs

            if step == cfg.start_steps:
                # fold the demonstration states in, then freeze: networks
                # need one stationary input space covering both distributions
                real = self.expert_buffer.all_transitions().states
                self.normalizer.update(real[real[:, -1] == 0.0][:, : self.raw_dim])
                self.normalizer.freeze()

            if step > cfg.start_steps:
                fresh: dict[str, float] = {}
                for _ in range(cfg.irl_steps):
                    fresh["disc-loss"] = self._disc_update()
                for _ in range(cfg.rl_steps):
                    stats = self._rl_update()
                    fresh.update({k: stats[k] for k in
                                  ("critic-J", "policy-J", "bc-loss",
                                   "eta", "q-mean")})
                for name, v in fresh.items():
                    if not np.isfinite(v):
                        raise TrainingDiverged(f"step {step}: {name} is {v}")
                last_losses.update(fresh)

            if step % cfg.eval_interval == 0 or step == cfg.total_steps:
                ev = self.evaluate(step)
                row = {
                    "step": step,
                    "episode-return-mean": ev["return_mean"],
                    "episode-return-std": ev["return_std"],
                    "disc-loss": last_losses["disc-loss"],
                    "critic-J": last_losses["critic-J"],
                    "policy-J": last_losses["policy-J"],
                    "bc-loss": last_losses["bc-loss"],
                    "eta": last_losses["eta"],
                    "q-mean": last_losses["q-mean"],
                    "success-rate": ev["success_rate"],
                }
                history.append(row)
                if log:
                    log(f"step {step}: return {ev['return_mean']:.2f} "
                        f"success {ev['success_rate']:.2f} "
                        f"disc {last_losses['disc-loss']:.3f} "
                        f"eta {last_losses['eta']:.3f} [{time.time() - t0:.0f}s]")
                if (not np.isnan(cfg.stop_return)
                        and ev["return_mean"] >= cfg.stop_return
                        and steps_to_stop is None):
                    steps_to_stop = step
                    break
        if metrics_path:
            write_metrics_csv(metrics_path, history)
        final = history[-1] if history else {"episode-return-mean": float("nan"),
                                             "success-rate": float("nan")}
        return TrainResult(self.make_handle(), self.policy, history, steps_to_stop,
                           final["episode-return-mean"], final["success-rate"])


def train(env_id: str, demos_path, cfg: OpirlConfig, seed: int,
          out_dir=None, log=None) -> TrainResult:
    """Runs the full learner; optionally writes reward + policy checkpoints
    and the metrics CSV into out_dir."""
    trainer = OpirlTrainer(env_id, demos_path, cfg, seed)
    metrics = f"{out_dir}/metrics.csv" if out_dir else None
    result = trainer.train(metrics_path=metrics, log=log)
    if out_dir:
        result.handle.save(f"{out_dir}/reward.txt")
        save_policy(f"{out_dir}/policy.txt", result.policy, env_id)
    return result


def transfer(handle: RewardHandle, target_env_id: str, cfg: SacConfig, seed: int,
             out_dir=None, log=None) -> dict:
    """Retrains a fresh policy on the target environment against the frozen
    learned reward; evaluation uses the target's ground-truth reward."""
    probe = make_env(target_env_id)
    wrapped_dim = probe.obs_dim + 1
    if wrapped_dim != handle.obs_dim or probe.act_dim != handle.act_dim:
        raise SchemaError(
            f"reward trained on {handle.env_id!r} expects obs dim {handle.obs_dim} "
            f"(wrapped), but {target_env_id!r} gives {wrapped_dim}"
        )

    def reward_fn(states, actions):
        return handle.reward(states, actions)

    agent, history = train_sac(
        target_env_id, cfg, seed, reward_fn=reward_fn, wrap=wrap_absorbing,
        metrics_path=(f"{out_dir}/transfer_metrics.csv" if out_dir else None),
        log=log,
    )
    if out_dir:
        save_policy(f"{out_dir}/transfer_policy.txt", agent.policy, target_env_id)
    final = history[-1] if history else {}
    return {"policy": agent.policy, "history": history,
            "final_return": final.get("return_mean", float("nan")),
            "final_success": final.get("success_rate", float("nan"))}
