"""Discriminator structure, losses, penalty, and density-ratio recovery."""

import numpy as np
import pytest

from opirl import autodiff as ad
from opirl.divergence import random_dist
from opirl.envs import RunningNormalizer
from opirl.errors import ContractError
from opirl.irl import (DiscBatch, Discriminator, RewardHandle, bce_from_logits,
                       disc_logit, disc_loss, gradient_penalty, make_interpolates)
from opirl.oracle import _UniformPolicyStub, train_discriminator_on_atoms
from opirl.seeding import component_rng


def make_disc(obs_dim=3, act_dim=2, seed=0, **kw):
    return Discriminator(obs_dim, act_dim, gamma=0.9, reward_hidden=16,
                         shaping_hidden=16, rng=component_rng(seed, "disc"), **kw)


def rand_batch(n, obs_dim=3, act_dim=2, seed=0):
    rng = component_rng(seed, "batch")
    return DiscBatch(rng.standard_normal((n, obs_dim)),
                     rng.uniform(-1, 1, (n, act_dim)),
                     rng.standard_normal((n, obs_dim)))


def set_all_zero(disc):
    for p in disc.reward_net.parameters().values():
        p.value[:] = 0.0
    for p in disc.shaping_net.parameters().values():
        p.value[:] = 0.0


def test_logit_zero_h_zero_logpi():
    disc = make_disc()
    set_all_zero(disc)
    batch = rand_batch(4)
    logits = disc_logit(disc, batch.states, batch.actions, batch.next_states,
                        np.zeros(4))
    assert np.allclose(logits, 0.0)  # D = 1/2


def test_logit_unit_h():
    disc = make_disc()
    set_all_zero(disc)
    disc.reward_net.biases[-1].value[:] = 1.0  # h = 1 everywhere
    batch = rand_batch(4)
    logits = disc_logit(disc, batch.states, batch.actions, batch.next_states,
                        np.zeros(4))
    assert np.allclose(logits, 1.0)
    d = 1.0 / (1.0 + np.exp(-logits))
    assert np.allclose(d, np.e / (np.e + 1.0))


def test_sigmoid_logit_equals_direct_formula():
    disc = make_disc(seed=3)
    rng = component_rng(4, "rand")
    batch = rand_batch(64, seed=5)
    log_pi = rng.uniform(-3, 3, 64)
    logits = disc_logit(disc, batch.states, batch.actions, batch.next_states, log_pi)
    h = disc.h_values(batch.states, batch.actions, batch.next_states)
    direct = np.exp(h) / (np.exp(h) + np.exp(log_pi))
    assert np.max(np.abs(1.0 / (1.0 + np.exp(-logits)) - direct)) < 1e-10


def test_bce_finite_for_extreme_logits():
    for v in (-50.0, 50.0):
        loss = bce_from_logits(ad.constant(np.full((4, 1), v)),
                               ad.constant(np.full((4, 1), -v)))
        assert np.isfinite(loss.value[0, 0])


def test_disc_loss_empty_batch_contract():
    disc = make_disc()
    policy = _UniformPolicyStub()
    empty = DiscBatch(np.zeros((0, 3)), np.zeros((0, 2)), np.zeros((0, 3)))
    with pytest.raises(ContractError):
        disc_loss(disc, empty, rand_batch(4), policy, gp_weight=0.0)


def test_identical_distributions_loss_approaches_2log2():
    # expert and agent batches drawn from the same distribution: the best
    # the classifier can do is D = 1/2
    rng = component_rng(6, "same-dist")
    disc = Discriminator(2, 1, gamma=0.9, reward_hidden=16, shaping_hidden=16,
                         rng=component_rng(7, "init"))
    policy = _UniformPolicyStub()
    opt = ad.Adam(disc.parameters(), 1e-3)
    for _ in range(800):
        e = DiscBatch(rng.standard_normal((128, 2)), rng.uniform(-1, 1, (128, 1)),
                      rng.standard_normal((128, 2)))
        a = DiscBatch(rng.standard_normal((128, 2)), rng.uniform(-1, 1, (128, 1)),
                      rng.standard_normal((128, 2)))
        loss = disc_loss(disc, e, a, policy, gp_weight=0.0)
        opt.zero_grad()
        ad.backward(loss)
        opt.step()
    probe = DiscBatch(rng.standard_normal((512, 2)), rng.uniform(-1, 1, (512, 1)),
                      rng.standard_normal((512, 2)))
    logits = disc_logit(disc, probe.states, probe.actions, probe.next_states,
                        np.zeros(512))
    assert abs(float(loss.value[0, 0]) - 2.0 * np.log(2.0)) < 0.1
    assert np.mean(np.abs(logits)) < 0.25


def test_separable_classes_high_accuracy():
    rng = component_rng(8, "sep")
    disc = Discriminator(1, 1, gamma=0.9, reward_hidden=16, shaping_hidden=16,
                         rng=component_rng(9, "init"))
    policy = _UniformPolicyStub()
    opt = ad.Adam(disc.parameters(), 1e-3)
    zeros_act = np.zeros((128, 1))
    for _ in range(1500):
        e_s = rng.uniform(1.0, 2.0, (128, 1))
        a_s = rng.uniform(-2.0, -1.0, (128, 1))
        loss = disc_loss(disc, DiscBatch(e_s, zeros_act, e_s),
                         DiscBatch(a_s, zeros_act, a_s), policy, gp_weight=0.0)
        opt.zero_grad()
        ad.backward(loss)
        opt.step()
    e_s = rng.uniform(1.0, 2.0, (500, 1))
    a_s = rng.uniform(-2.0, -1.0, (500, 1))
    le = disc_logit(disc, e_s, np.zeros((500, 1)), e_s, np.zeros(500))
    la = disc_logit(disc, a_s, np.zeros((500, 1)), a_s, np.zeros(500))
    accuracy = (np.mean(le > 0) + np.mean(la < 0)) / 2
    assert accuracy >= 0.99


def test_density_ratio_recovery_and_label_symmetry():
    rng = component_rng(10, "ratio")
    p = random_dist(rng, 8, min_mass=0.05)
    q = random_dist(rng, 8, min_mass=0.05)
    _, logits_pq = train_discriminator_on_atoms(p, q, seed=11, steps=2500)
    _, logits_qp = train_discriminator_on_atoms(q, p, seed=11, steps=2500)
    target = np.log(p / q)
    assert np.max(np.abs(logits_pq - target)) < 0.1
    assert np.max(np.abs(logits_qp + target)) < 0.1  # swapped labels negate


def test_known_ratio_two_point():
    p = np.array([2.0 / 3.0, 1.0 / 3.0])
    q = np.array([1.0 / 3.0, 2.0 / 3.0])
    _, logits = train_discriminator_on_atoms(p, q, seed=12, steps=2500)
    assert np.max(np.abs(logits - np.log(p / q))) < 0.1


def test_reward_head_zero_net():
    disc = make_disc()
    set_all_zero(disc)
    batch = rand_batch(16)
    assert np.allclose(disc.reward(batch.states, batch.actions), 0.0)


def test_reward_ranking_with_shaping_disabled():
    rng = component_rng(13, "rank")
    p = random_dist(rng, 8, min_mass=0.05)
    q = random_dist(rng, 8, min_mass=0.05)
    disc, _ = train_discriminator_on_atoms(p, q, seed=14, steps=2500,
                                           use_shaping=False)
    eye = np.eye(8)
    rewards = disc.reward(eye, np.zeros((8, 1)))
    target = np.log(p / q)

    def ranks(v):
        out = np.empty(len(v))
        out[np.argsort(v)] = np.arange(len(v))
        return out

    r1, r2 = ranks(rewards), ranks(target)
    spearman = 1.0 - 6.0 * np.sum((r1 - r2) ** 2) / (8 * (64 - 1))
    assert spearman >= 0.9


# -- gradient penalty ----------------------------------------------------------


def test_penalty_zero_for_unit_gradient_linear_logit():
    disc = Discriminator(2, 1, gamma=0.9, reward_hidden=4, shaping_hidden=4,
                         rng=component_rng(15, "init"), use_shaping=False)
    # collapse the reward net to a linear map with unit input-gradient
    w0, b0 = disc.reward_net.weights[0], disc.reward_net.biases[0]
    w0.value[:] = 0.0
    np.fill_diagonal(w0.value, 1.0)
    b0.value[:] = 100.0  # keeps every ReLU active
    w1, b1 = disc.reward_net.weights[1], disc.reward_net.biases[1]
    w1.value[:] = 0.0
    np.fill_diagonal(w1.value, 1.0)
    b1.value[:] = 0.0
    w2 = disc.reward_net.weights[2]
    w2.value[:] = 0.0
    w2.value[0, 0] = 0.6
    w2.value[1, 0] = 0.8  # gradient (0.6, 0.8, 0) has norm 1
    pen = gradient_penalty(disc, rand_batch(8, obs_dim=2, act_dim=1))
    assert float(pen.value[0, 0]) < 1e-10


def test_penalty_one_for_zero_network():
    disc = make_disc()
    set_all_zero(disc)
    pen = gradient_penalty(disc, rand_batch(8))
    assert float(pen.value[0, 0]) == pytest.approx(1.0, abs=1e-4)


def test_penalty_parameter_gradient_vs_finite_differences():
    disc = make_disc(seed=16)
    batch = rand_batch(6, seed=17)
    params = disc.parameters()
    ad.zero_grad(params)
    ad.backward(gradient_penalty(disc, batch))
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.value))
                for k, p in params.items()}
    h = 1e-5
    for key in ("r.w0", "r.w2", "g.w1"):
        p = params[key]
        flat = p.value.reshape(-1)
        for i in range(min(flat.size, 8)):
            keep = flat[i]
            flat[i] = keep + h
            up = float(gradient_penalty(disc, batch).value[0, 0])
            flat[i] = keep - h
            down = float(gradient_penalty(disc, batch).value[0, 0])
            flat[i] = keep
            numeric = (up - down) / (2 * h)
            err = abs(analytic[key].reshape(-1)[i] - numeric) / (abs(numeric) + 1e-8)
            assert err < 1e-3, f"{key}[{i}]"


def test_interpolates_lie_between():
    e = rand_batch(16, seed=18)
    a = rand_batch(16, seed=19)
    mix = make_interpolates(e, a, component_rng(20, "mix"))
    lo = np.minimum(e.states, a.states)
    hi = np.maximum(e.states, a.states)
    assert np.all(mix.states >= lo - 1e-12) and np.all(mix.states <= hi + 1e-12)


# -- reward handle ----------------------------------------------------------------


def test_handle_frozen_against_further_updates():
    disc = make_disc(seed=21)
    norm = RunningNormalizer(2)
    norm.update(component_rng(22, "n").standard_normal((100, 2)))
    handle = RewardHandle(disc, norm, raw_dim=2, env_id="pointmaze-left")
    rng = component_rng(23, "probe")
    s = rng.standard_normal((32, 3))
    a = rng.uniform(-1, 1, (32, 2))
    before = handle.reward(s, a)
    for p in disc.parameters().values():
        p.value += 1.0  # train the discriminator some more
    assert np.array_equal(handle.reward(s, a), before)


def test_handle_purity_bit_identical():
    disc = make_disc(seed=24)
    norm = RunningNormalizer(2)
    norm.update(component_rng(25, "n").standard_normal((50, 2)))
    handle = RewardHandle(disc, norm, raw_dim=2, env_id="x")
    rng = component_rng(26, "probe")
    s = rng.standard_normal((10_000, 3))
    a = rng.uniform(-1, 1, (10_000, 2))
    assert np.array_equal(handle.reward(s, a), handle.reward(s, a))


def test_handle_roundtrip_through_file(tmp_path):
    disc = make_disc(seed=27)
    norm = RunningNormalizer(2)
    norm.update(component_rng(28, "n").standard_normal((64, 2)))
    handle = RewardHandle(disc, norm, raw_dim=2, env_id="pointmaze-left")
    path = tmp_path / "reward.txt"
    handle.save(path)
    loaded = RewardHandle.load(path)
    rng = component_rng(29, "probe")
    s = rng.standard_normal((64, 3))
    a = rng.uniform(-1, 1, (64, 2))
    assert np.array_equal(handle.reward(s, a), loaded.reward(s, a))
    assert loaded.env_id == "pointmaze-left"
