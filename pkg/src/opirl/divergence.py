"""The p-norm generator family f(x) = c|x|^p, its convex conjugate, and
exact divergences between small discrete distributions.

The conjugate of c|x|^p in closed form: with k = (c p)^(1/(1-p)) and
q = p/(p-1),

    f*(y) = (k - c k^p) |y|^q

which reduces to |y|^q / q when c = 1/p. The generator is evaluated on |x|
because the Bellman residual it is applied to can be negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DomainError


@dataclass(frozen=True)
class PNormGenerator:
    p: float = 1.5
    c: float = 2.0 / 3.0
    q: float = field(init=False)

    def __post_init__(self):
        if self.p <= 1.0:
            raise ContractError(f"p must exceed 1, got {self.p}")
        if self.c <= 0.0:
            raise ContractError(f"c must be positive, got {self.c}")
        q = self.p / (self.p - 1.0)
        object.__setattr__(self, "q", q)
        assert abs(1.0 / self.p + 1.0 / q - 1.0) < 1e-12

    @property
    def conjugate_coeff(self) -> float:
        k = (self.c * self.p) ** (1.0 / (1.0 - self.p))
        return k - self.c * k**self.p


def f_value(gen: PNormGenerator, x) -> float | np.ndarray:
    out = gen.c * np.abs(x) ** gen.p
    return float(out) if np.isscalar(x) else out


def f_grad(gen: PNormGenerator, x) -> float | np.ndarray:
    out = gen.c * gen.p * np.abs(x) ** (gen.p - 1.0) * np.sign(x)
    return float(out) if np.isscalar(x) else out


def conjugate_value(gen: PNormGenerator, y) -> float | np.ndarray:
    out = gen.conjugate_coeff * np.abs(y) ** gen.q
    return float(out) if np.isscalar(y) else out


def conjugate_grad(gen: PNormGenerator, y) -> float | np.ndarray:
    out = gen.conjugate_coeff * gen.q * np.abs(y) ** (gen.q - 1.0) * np.sign(y)
    return float(out) if np.isscalar(y) else out


def conjugate_node(gen: PNormGenerator, y: ad.Node) -> ad.Node:
    """f*(y) as a graph node, for use inside differentiable objectives."""
    return ad.scale(ad.abs_pow(y, gen.q), gen.conjugate_coeff)


def conjugate_by_grid(gen: PNormGenerator, y: float, lo=-100.0, hi=100.0, step=1e-4) -> float:
    """Brute-force sup_x (x y - f(x)); the oracle the closed form is checked
    against. O((hi-lo)/step) memory, vectorized."""
    xs = np.arange(lo, hi + step, step)
    return float(np.max(xs * y - f_value(gen, xs)))


def check_dist(p, atol: float = 1e-12) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise DomainError(f"distribution must be a vector, got shape {p.shape}")
    if np.any(p < 0.0):
        raise DomainError("distribution has negative entries")
    if abs(p.sum() - 1.0) > atol:
        raise DomainError(f"distribution sums to {p.sum()!r}, not 1")
    return p


def _check_support(p: np.ndarray, q: np.ndarray) -> None:
    if np.any((p > 0.0) & (q == 0.0)):
        raise DomainError("P has mass where Q vanishes")


def kl_discrete(p, q) -> float:
    """sum P log(P/Q), with 0 log 0 = 0. Requires supp(P) within supp(Q)."""
    p = check_dist(p)
    q = check_dist(q)
    if p.shape != q.shape:
        raise DomainError(f"length mismatch {p.shape} vs {q.shape}")
    _check_support(p, q)
    mask = p > 0.0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def f_div_discrete(gen: PNormGenerator, p, q) -> float:
    """sum Q f(P/Q). Terms with Q = 0 contribute 0 (P must vanish there)."""
    p = check_dist(p)
    q = check_dist(q)
    if p.shape != q.shape:
        raise DomainError(f"length mismatch {p.shape} vs {q.shape}")
    _check_support(p, q)
    mask = q > 0.0
    return float(np.sum(q[mask] * f_value(gen, p[mask] / q[mask])))


def random_dist(rng: np.random.Generator, n: int, min_mass: float = 0.0) -> np.ndarray:
    probs = rng.dirichlet(np.ones(n))
    if min_mass > 0.0:
        if min_mass * n >= 1.0:
            raise ContractError(f"min_mass {min_mass} infeasible for {n} points")
        probs = min_mass + (1.0 - min_mass * n) * probs
    return probs


def squared_coefficient_generator() -> PNormGenerator:
    """p = 2, c = 1/2: the setting under which KL <= D_f provably holds."""
    return PNormGenerator(p=2.0, c=0.5)
