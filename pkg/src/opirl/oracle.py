"""Brute-force verification of the identities the objective is built on.

Every check runs on exact small instances (discrete distributions, tabular
MDPs with linear-solve occupancies) where both sides of an identity can be
computed independently. Each check owns its seed and reports a machine-
readable pass/fail with the observed gap.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .divergence import (conjugate_value, f_grad, f_div_discrete, kl_discrete,
                         random_dist, squared_coefficient_generator)
from .envs import occupancy, random_policy, random_tabular_mdp
from .irl import DiscBatch, Discriminator, disc_logit, disc_loss
from .seeding import component_rng


@dataclass
class VerificationReport:
    name: str
    instance: str
    left: float
    right: float
    gap: float
    tolerance: float
    passed: bool
    detail: str = ""

    @classmethod
    def from_gap(cls, name, instance, left, right, gap, tol, detail=""):
        return cls(name, instance, float(left), float(right), float(gap),
                   float(tol), bool(gap <= tol), detail)


def verify_kl_upper_bound(trials: int = 1000, seed: int = 0,
                          n_points: int = 8) -> VerificationReport:
    """KL(P||Q) <= sum Q f(P/Q) for f(x) = x^2 / 2, on random pairs."""
    rng = component_rng(seed, "kl-upper-bound")
    gen = squared_coefficient_generator()
    worst = -np.inf
    for _ in range(trials):
        p = random_dist(rng, n_points, min_mass=1e-6)
        q = random_dist(rng, n_points, min_mass=1e-6)
        worst = max(worst, kl_discrete(p, q) - f_div_discrete(gen, p, q))
    # also probe a near-degenerate pair
    p = np.array([1.0 - 1e-9, 1e-9])
    q = np.array([0.5, 0.5])
    worst = max(worst, kl_discrete(p, q) - f_div_discrete(gen, p, q))
    return VerificationReport.from_gap(
        "kl_upper_bound", f"{trials} random {n_points}-point pairs + degenerate probe",
        worst, 0.0, max(worst, 0.0), 0.0,
        detail="gap = max over trials of KL - D_f; any positive value is a violation",
    )


def verify_kl_decomposition(trials: int = 1000, seed: int = 0,
                            n_points: int = 8) -> VerificationReport:
    """KL(a||b) = E_a[log c/b] + KL(a||c) for any shared-support c."""
    rng = component_rng(seed, "kl-decomposition")
    worst = 0.0
    for _ in range(trials):
        rho_pi = random_dist(rng, n_points, min_mass=1e-4)
        rho_exp = random_dist(rng, n_points, min_mass=1e-4)
        rho_rb = random_dist(rng, n_points, min_mass=1e-4)
        lhs = kl_discrete(rho_pi, rho_exp)
        rhs = float(np.sum(rho_pi * np.log(rho_rb / rho_exp))) + kl_discrete(rho_pi, rho_rb)
        worst = max(worst, abs(lhs - rhs))
    return VerificationReport.from_gap(
        "kl_decomposition", f"{trials} random {n_points}-point triples",
        worst, 0.0, worst, 1e-12,
    )


def _grid_infimum(rho_pi, rho_rb, gen, lo=-20.0, hi=20.0, step=1e-3):
    xs = np.arange(lo, hi + step, step)
    fstar = conjugate_value(gen, xs)
    total = 0.0
    for pi_i, rb_i in zip(rho_pi, rho_rb):
        total += np.min(-pi_i * xs + rb_i * fstar)
    return total


def verify_variational_form(instances: int = 50, seed: int = 0,
                            n_points: int = 8) -> VerificationReport:
    """Pointwise grid infimum of E_a[-x] + E_b[f*(x)] equals -D_f(a||b);
    the closed-form optimizer x* = f'(a/b) attains it exactly."""
    rng = component_rng(seed, "variational-form")
    gen = squared_coefficient_generator()
    worst = 0.0
    worst_opt = 0.0
    for _ in range(instances):
        rho_pi = random_dist(rng, n_points, min_mass=0.05)
        rho_rb = random_dist(rng, n_points, min_mass=0.05)
        target = -f_div_discrete(gen, rho_pi, rho_rb)
        grid = _grid_infimum(rho_pi, rho_rb, gen)
        worst = max(worst, abs(grid - target))
        x_star = f_grad(gen, rho_pi / rho_rb)
        attained = float(np.sum(-rho_pi * x_star + rho_rb * conjugate_value(gen, x_star)))
        worst_opt = max(worst_opt, abs(attained - target))
    passed_opt = worst_opt <= 1e-10
    report = VerificationReport.from_gap(
        "variational_form",
        f"{instances} random {n_points}-point pairs, grid [-20, 20] step 1e-3",
        worst, 0.0, worst, 1e-3,
        detail=f"optimizer f'(ratio) attains the infimum to {worst_opt:.2e}",
    )
    report.passed = report.passed and passed_opt
    return report


def verify_telescoping(trials: int = 200, seed: int = 0) -> VerificationReport:
    """E_occupancy[r - (B Q - Q)] = (1 - gamma) E_init[Q] for arbitrary Q.

    The identity does not depend on Q at all; exact occupancies come from
    the linear solve, so any gap indicates a broken derivation, not noise.
    """
    rng = component_rng(seed, "telescoping")
    gammas = [0.5, 0.9, 0.99]
    worst = 0.0
    for trial in range(trials):
        n_s = int(rng.integers(2, 7))
        n_a = int(rng.integers(1, 4))
        mdp = random_tabular_mdp(rng, n_s, n_a, gammas[trial % len(gammas)])
        pi = random_policy(rng, n_s, n_a)
        q = rng.uniform(-10.0, 10.0, size=(n_s, n_a))
        rho = occupancy(mdp, pi)
        bq = mdp.bellman_operator(pi, q)
        lhs = float(np.sum(rho * (mdp.r - (bq - q))))
        q0 = float(np.sum(mdp.rho0[:, None] * pi * q))
        rhs = (1.0 - mdp.gamma) * q0
        worst = max(worst, abs(lhs - rhs))
    return VerificationReport.from_gap(
        "telescoping", f"{trials} random (MDP, policy, Q) triples, gamma in {gammas}",
        worst, 0.0, worst, 1e-8,
    )


class _UniformPolicyStub:
    """Constant log-density; stands in for the agent policy on synthetic
    discrete tasks where log pi is a known constant."""

    def __init__(self, log_pi: float = 0.0):
        self.log_pi = float(log_pi)

    def log_prob(self, states, actions) -> np.ndarray:
        return np.full(np.atleast_2d(states).shape[0], self.log_pi)


def train_discriminator_on_atoms(p_dist, q_dist, seed: int, steps: int = 3000,
                                 batch: int = 1024, lr: float = 1e-3,
                                 use_shaping: bool = True) -> tuple[Discriminator, np.ndarray]:
    """Trains the discriminator between two 8-point distributions embedded
    as one-hot states (zero action, self-loop next state); returns it with
    the recovered per-point logits."""
    n = len(p_dist)
    rng = component_rng(seed, "disc-atoms")
    eye = np.eye(n)
    zeros_act = np.zeros((batch, 1))
    disc = Discriminator(obs_dim=n, act_dim=1, gamma=0.99, use_shaping=use_shaping,
                         rng=component_rng(seed, "disc-atoms-init"))
    opt = ad.Adam(disc.parameters(), lr)
    policy = _UniformPolicyStub(0.0)
    for step in range(steps):
        if step == int(steps * 0.75):
            opt.state.lr = lr * 0.1  # settle the stochastic tail
        exp_idx = rng.choice(n, size=batch, p=p_dist)
        agn_idx = rng.choice(n, size=batch, p=q_dist)
        exp_b = DiscBatch(eye[exp_idx], zeros_act, eye[exp_idx])
        agn_b = DiscBatch(eye[agn_idx], zeros_act, eye[agn_idx])
        loss = disc_loss(disc, exp_b, agn_b, policy, gp_weight=0.0)
        opt.zero_grad()
        ad.backward(loss)
        opt.step()
    logits = disc_logit(disc, eye, np.zeros((n, 1)), eye, np.zeros(n))
    return disc, logits


def verify_discriminator_optimum(seed: int = 0, n_points: int = 8,
                                 mass_floor: float = 0.05) -> VerificationReport:
    """At its optimum the classifier's log-odds equal log(expert/replay);
    trains on a random known pair and compares on all >= mass-floor points."""
    rng = component_rng(seed, "disc-optimum")
    p = random_dist(rng, n_points, min_mass=mass_floor)
    q = random_dist(rng, n_points, min_mass=mass_floor)
    _, logits = train_discriminator_on_atoms(p, q, seed)
    target = np.log(p / q)
    keep = (p >= mass_floor) & (q >= mass_floor)
    gap = float(np.max(np.abs(logits[keep] - target[keep])))
    return VerificationReport.from_gap(
        "discriminator_optimum",
        f"random {n_points}-point pair, all points at mass >= {mass_floor}",
        gap, 0.0, gap, 0.1,
        detail=f"max |logit - log ratio| over {int(keep.sum())} points",
    )


def verify_all(seed: int = 0, trials: int = 1000, variational_instances: int = 50,
               telescoping_trials: int = 200,
               include_discriminator: bool = True) -> list[VerificationReport]:
    reports = [
        verify_kl_upper_bound(trials, seed),
        verify_kl_decomposition(trials, seed),
        verify_variational_form(variational_instances, seed),
        verify_telescoping(telescoping_trials, seed),
    ]
    if include_discriminator:
        reports.append(verify_discriminator_optimum(seed))
    return reports


def format_report_table(reports: list[VerificationReport]) -> str:
    lines = [f"{'check':<26} {'gap':>12} {'tolerance':>12}  status"]
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<26} {r.gap:>12.3e} {r.tolerance:>12.3e}  {status}")
    return "\n".join(lines)


def write_report_file(path, reports: list[VerificationReport]) -> None:
    with open(path, "w") as fh:
        json.dump([asdict(r) for r in reports], fh, indent=2)
        fh.write("\n")
