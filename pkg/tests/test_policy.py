"""Squashed-Gaussian policy: sampling, densities, and graph consistency."""

import numpy as np
import pytest

from opirl import autodiff as ad
from opirl.policy import SquashedGaussianPolicy
from opirl.seeding import component_rng


def make_policy(obs_dim=3, act_dim=2, hidden=16, seed=0):
    return SquashedGaussianPolicy(obs_dim, act_dim, hidden,
                                  rng=component_rng(seed, "policy-init"))


def test_zero_std_limit_is_tanh_mean():
    pol = make_policy()
    # force the log-std head to the clamp floor
    pol.logstd_head.weights[0].value[:] = 0.0
    pol.logstd_head.biases[0].value[:] = -30.0  # clamps to -10, sigma ~ 4.5e-5
    obs = np.array([[0.2, -0.1, 0.4]])
    rng = component_rng(1, "act")
    a, _ = pol.act(obs, rng)
    det, _ = pol.act(obs, rng, deterministic=True)
    assert np.max(np.abs(a - det)) < 1e-3


def test_sample_mean_symmetry():
    pol = make_policy()
    # zero out the heads: mu = 0, sigma = 1
    for net in (pol.mean_head, pol.logstd_head):
        net.weights[0].value[:] = 0.0
        net.biases[0].value[:] = 0.0
    obs = np.zeros((100_000, 3))
    a, _ = pol.act(obs, component_rng(2, "mc"))
    assert np.max(np.abs(a.mean(axis=0))) < 0.02


def test_log_density_matches_histogram():
    pol = make_policy(obs_dim=1, act_dim=1)
    obs = np.zeros((1_000_000, 1))
    a, _ = pol.act(obs, component_rng(3, "hist"))
    edges = np.linspace(-1, 1, 81)
    counts, _ = np.histogram(a[:, 0], bins=edges)
    centers = (edges[:-1] + edges[1:]) / 2
    width = edges[1] - edges[0]
    empirical = counts / counts.sum() / width
    mask = empirical > 0
    logp = pol.log_prob(np.zeros((mask.sum(), 1)), centers[mask].reshape(-1, 1))
    model = np.exp(logp)
    model /= (model * width).sum()  # renormalize over the binned support
    p_emp = empirical[mask] * width
    p_mod = model * width
    kl = np.sum(p_emp * np.log(p_emp / p_mod))
    assert kl < 0.01


def test_log_prob_finite_for_saturated_actions():
    pol = make_policy()
    obs = np.zeros((4, 3))
    actions = np.array([[1.0, -1.0], [0.999999, -0.999999],
                        [0.0, 0.0], [-1.0, 1.0]])
    logp = pol.log_prob(obs, actions)
    assert np.all(np.isfinite(logp))


def test_graph_sample_matches_fast_path_values():
    pol = make_policy()
    obs = component_rng(4, "obs").standard_normal((8, 3))
    a_node, logp_node = pol.sample_node(obs, component_rng(5, "eps"))
    a_fast, logp_fast = pol.act(obs, component_rng(5, "eps"))
    assert np.allclose(a_node.value, a_fast, atol=1e-12)
    # graph correction is the exact form; fast path carries the +1e-6 guard
    assert np.allclose(logp_node.value[:, 0], logp_fast, atol=1e-3)


def test_graph_logp_gradient_vs_finite_differences():
    pol = make_policy(obs_dim=2, act_dim=1, hidden=8)
    obs = component_rng(6, "obs").standard_normal((4, 2))

    def logp_sum():
        _, logp = pol.sample_node(obs, component_rng(7, "eps"))
        return logp

    params = pol.parameters()
    ad.zero_grad(params)
    ad.backward(ad.total_sum(logp_sum()))
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.value))
                for k, p in params.items()}
    h = 1e-6
    for key in ("trunk.w0", "mean.w0", "logstd.w0"):
        p = params[key]
        flat = p.value.reshape(-1)
        for i in range(min(flat.size, 6)):
            keep = flat[i]
            flat[i] = keep + h
            up = float(logp_sum().value.sum())
            flat[i] = keep - h
            down = float(logp_sum().value.sum())
            flat[i] = keep
            numeric = (up - down) / (2 * h)
            err = abs(analytic[key].reshape(-1)[i] - numeric) / (abs(numeric) + 1e-6)
            assert err < 1e-4, f"{key}[{i}]"


def test_actions_strictly_inside_unit_box():
    pol = make_policy()
    obs = component_rng(8, "obs").standard_normal((1000, 3)) * 5
    a, _ = pol.act(obs, component_rng(9, "act"))
    assert np.all(np.abs(a) < 1.0)
