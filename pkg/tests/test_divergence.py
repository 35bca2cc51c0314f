"""Generator family, conjugates, and discrete divergences against
grid-search and random-sampling oracles."""

import numpy as np
import pytest

from opirl import divergence as dv
from opirl.errors import ContractError, DomainError


def test_generator_validates_exponent():
    with pytest.raises(ContractError):
        dv.PNormGenerator(p=1.0)
    with pytest.raises(ContractError):
        dv.PNormGenerator(p=2.0, c=0.0)


def test_holder_pair():
    gen = dv.PNormGenerator(p=1.5, c=2.0 / 3.0)
    assert 1.0 / gen.p + 1.0 / gen.q == pytest.approx(1.0, abs=1e-12)


def test_f_value_cases():
    gen2 = dv.PNormGenerator(p=2.0, c=0.5)
    assert dv.f_value(gen2, 0.0) == 0.0
    assert dv.f_value(gen2, 3.0) == pytest.approx(4.5)
    gen15 = dv.PNormGenerator(p=1.5, c=2.0 / 3.0)
    assert dv.f_value(gen15, 4.0) == pytest.approx((2.0 / 3.0) * 8.0)


def test_conjugate_closed_form_matches_paper_case():
    gen = dv.PNormGenerator(p=2.0, c=0.5)
    assert dv.conjugate_value(gen, 0.0) == 0.0
    assert dv.conjugate_value(gen, 3.0) == pytest.approx(4.5)


def test_conjugate_reduces_to_q_norm_when_c_is_inverse_p():
    for p in (1.5, 2.0, 3.0):
        gen = dv.PNormGenerator(p=p, c=1.0 / p)
        ys = np.linspace(-4, 4, 33)
        expected = np.abs(ys) ** gen.q / gen.q
        assert np.allclose(dv.conjugate_value(gen, ys), expected, atol=1e-12)


def test_conjugate_against_grid_search():
    gen = dv.PNormGenerator(p=1.5, c=2.0 / 3.0)
    closed = dv.conjugate_value(gen, 2.0)
    grid = dv.conjugate_by_grid(gen, 2.0)
    assert abs(closed - grid) < 1e-3
    # a general-coefficient case too
    gen_half = dv.PNormGenerator(p=1.5, c=0.5)
    assert abs(dv.conjugate_value(gen_half, 1.3)
               - dv.conjugate_by_grid(gen_half, 1.3)) < 1e-3


def test_conjugate_grad_cases():
    gen = dv.PNormGenerator(p=2.0, c=0.5)
    assert dv.conjugate_grad(gen, 3.0) == pytest.approx(3.0)
    for p in (1.5, 2.0, 2.5):
        assert dv.conjugate_grad(dv.PNormGenerator(p=p, c=1.0 / p), 0.0) == 0.0


def test_conjugate_grad_matches_finite_differences():
    gen = dv.PNormGenerator(p=1.5, c=2.0 / 3.0)
    y, h = 1.7, 1e-6
    numeric = (dv.conjugate_value(gen, y + h) - dv.conjugate_value(gen, y - h)) / (2 * h)
    assert abs(dv.conjugate_grad(gen, y) - numeric) < 1e-5


def test_fenchel_young_inequality_on_grid():
    gen = dv.PNormGenerator(p=1.5, c=2.0 / 3.0)
    xs = np.linspace(-10.0, 10.0, 10_000)
    ys = np.linspace(-10.0, 10.0, 101)
    fx = dv.f_value(gen, xs)
    for y in ys:
        margin = dv.f_value(gen, xs) + dv.conjugate_value(gen, y) - xs * y
        assert margin.min() > -1e-8
    # equality at y = f'(x)
    y_star = dv.f_grad(gen, xs)
    gap = fx + dv.conjugate_value(gen, y_star) - xs * y_star
    assert np.max(np.abs(gap)) < 1e-8


def test_conjugate_midpoint_convexity():
    rng = np.random.default_rng(0)
    gen = dv.PNormGenerator(p=1.5, c=2.0 / 3.0)
    for _ in range(200):
        a, b = rng.uniform(-20, 20, size=2)
        mid = dv.conjugate_value(gen, (a + b) / 2)
        avg = (dv.conjugate_value(gen, a) + dv.conjugate_value(gen, b)) / 2
        assert mid <= avg + 1e-10


def test_double_conjugate_recovers_f():
    gen = dv.PNormGenerator(p=1.5, c=2.0 / 3.0)
    for x in np.linspace(-3, 3, 13):
        ys = np.arange(-100.0, 100.0, 1e-3)
        double = np.max(x * ys - dv.conjugate_value(gen, ys))
        assert abs(double - dv.f_value(gen, x)) < 1e-3


def test_kl_identity_and_direct_value():
    p = np.array([0.3, 0.7])
    assert dv.kl_discrete(p, p) == 0.0
    assert dv.kl_discrete([1.0, 0.0], [0.5, 0.5]) == pytest.approx(np.log(2.0))


def test_kl_support_violation():
    with pytest.raises(DomainError):
        dv.kl_discrete([0.5, 0.5], [1.0, 0.0])


def test_kl_nonnegative_gibbs():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        p = dv.random_dist(rng, 8, min_mass=1e-9)
        q = dv.random_dist(rng, 8, min_mass=1e-9)
        assert dv.kl_discrete(p, q) >= 0.0


def test_f_div_trivial_cases():
    gen = dv.PNormGenerator(p=2.0, c=0.5)
    q = np.array([0.25, 0.25, 0.5])
    assert dv.f_div_discrete(gen, q, q) == pytest.approx(0.5)
    assert dv.f_div_discrete(gen, [1.0, 0.0], [0.5, 0.5]) == pytest.approx(1.0)


def test_kl_bounded_by_f_div():
    gen = dv.squared_coefficient_generator()
    rng = np.random.default_rng(2)
    for _ in range(1000):
        p = dv.random_dist(rng, 8, min_mass=1e-9)
        q = dv.random_dist(rng, 8, min_mass=1e-9)
        assert dv.kl_discrete(p, q) <= dv.f_div_discrete(gen, p, q) + 1e-12


def test_distribution_validation():
    with pytest.raises(DomainError):
        dv.check_dist([0.5, 0.6])
    with pytest.raises(DomainError):
        dv.check_dist([-0.1, 1.1])
