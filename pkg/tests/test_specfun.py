import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from itocap import specfun
from itocap.errors import DomainError

mpmath.mp.dps = 40


def mp_bessel(nu, r):
    return float(mpmath.besseli(nu, r)), float(mpmath.besseli(nu, r, derivative=1))


# -- modified Bessel functions --------------------------------------------------


def test_half_order_at_one_matches_closed_form():
    b = specfun.bessel_i(0.5, 1.0)
    closed = math.sqrt(2 / math.pi) * math.sinh(1.0)
    assert b.value == pytest.approx(closed, rel=1e-13)
    assert b.value == pytest.approx(0.937674, abs=1e-6)


def test_order_zero_at_origin_is_one():
    b = specfun.bessel_i(0, 0)
    assert b.value == 1.0
    assert b.derivative == 0.0


def test_half_order_at_twenty_against_high_precision():
    exact = mpmath.sqrt(2 / (20 * mpmath.pi)) * mpmath.sinh(20)
    b = specfun.bessel_i(0.5, 20.0)
    assert b.value == pytest.approx(float(exact), rel=1e-12)
    assert b.value == pytest.approx(4.32797e7, rel=1e-5)


@pytest.mark.parametrize("nu", [0, 0.5, 1, 1.5, 2, 3.5])
@pytest.mark.parametrize("r", [1e-6, 0.01, 0.7, 3.0, 14.9, 15.1, 29.9, 30.1, 47.0, 120.0, 600.0])
def test_value_and_derivative_against_mpmath(nu, r):
    b = specfun.bessel_i(nu, r)
    v, dv = mp_bessel(nu, r)
    assert b.value == pytest.approx(v, rel=1e-10)
    assert b.derivative == pytest.approx(dv, rel=1e-10)


@pytest.mark.parametrize("nu", [0, 0.5, 1, 2.5])
def test_both_branches_accurate_at_crossover(nu):
    c = specfun.crossover(nu)
    r = np.array([c * (1 - 1e-9), c])  # series, then asymptotic expansion
    got = specfun.bessel_i_scaled(nu, r)[0]
    exact = [float(mpmath.besseli(nu, v) * mpmath.exp(-v)) for v in r]
    assert got == pytest.approx(exact, rel=1e-13)


def test_huge_argument_uses_scaled_form():
    b = specfun.bessel_i(0.5, 2000.0)
    expected = mpmath.log(mpmath.besseli(0.5, 2000))
    assert b.log_value == pytest.approx(float(expected), rel=1e-13)
    with pytest.raises(OverflowError):
        b.value


def test_negative_argument_rejected():
    with pytest.raises(DomainError):
        specfun.bessel_i(0, -1.0)
    with pytest.raises(DomainError):
        specfun.bessel_i(-0.5, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from([0.0, 0.5, 1.0, 1.5, 2.0]), st.floats(0.01, 50.0))
def test_derivative_recurrence(nu, r):
    b = specfun.bessel_i(nu, r)
    up = specfun.bessel_i(nu + 1, r)
    # compare the scaled quantities so nothing overflows
    lhs = b.scaled_derivative
    rhs = up.scaled_value + nu / r * b.scaled_value
    assert lhs == pytest.approx(rhs, rel=1e-10)


@pytest.mark.parametrize("nu", [0, 0.5, 1, 2])
def test_small_argument_leading_term(nu):
    r = 1e-7
    lead = (r / 2) ** nu / math.gamma(nu + 1)
    assert specfun.bessel_i(nu, r).value / lead == pytest.approx(1.0, abs=1e-12)


# -- drift ---------------------------------------------------------------------


def test_drift_unit_vector_in_three_dimensions():
    p = specfun.drift(np.array([1.0, 0, 0]), 3)
    assert p[0] == pytest.approx(1 / math.tanh(1) - 1, rel=1e-12)
    assert p[0] == pytest.approx(0.313035, abs=1e-6)
    assert p[1] == p[2] == 0


def test_drift_vanishes_at_origin():
    assert np.array_equal(specfun.drift(np.zeros(2), 2), np.zeros(2))


def test_drift_far_from_origin_follows_expansion():
    p = specfun.drift(np.array([100.0, 0, 0]), 3)
    nu = 0.5
    assert abs(np.linalg.norm(p) - (1 - (nu + 0.5) / 100)) <= 2e-4


def test_drift_matches_closed_form_over_range():
    r = np.geomspace(1e-3, 50, 400)
    x = np.stack([r, np.zeros_like(r), np.zeros_like(r)], 1)
    got = specfun.drift(x, 3)[:, 0]
    exact = np.array([float(mpmath.coth(v) - 1 / mpmath.mpf(v)) for v in r])
    assert np.max(np.abs(got - exact)) <= 1e-10


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=3, max_size=3), st.integers(0, 2**32 - 1))
def test_drift_commutes_with_rotations(x, seed):
    x = np.array(x)
    Q, _ = np.linalg.qr(np.random.default_rng(seed).normal(size=(3, 3)))
    lhs = specfun.drift(Q @ x, 3)
    rhs = Q @ specfun.drift(x, 3)
    assert np.allclose(lhs, rhs, atol=1e-12, rtol=0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-200, 200), min_size=2, max_size=4).filter(lambda v: np.linalg.norm(v) > 1e-9))
def test_drift_is_radial_and_below_one(x):
    x = np.array(x)
    p = specfun.drift(x)
    assert np.linalg.norm(p) < 1
    cross = np.linalg.norm(p) * np.linalg.norm(x) - p @ x
    assert cross <= 1e-12 * np.linalg.norm(x)


def test_dimension_mismatch_rejected():
    with pytest.raises(DomainError):
        specfun.drift(np.ones(3), 2)
    with pytest.raises(DomainError):
        specfun.order(1)


# -- the identity |p|^2 + div p = 1 -------------------------------------------


@pytest.mark.parametrize("x, d, h, tol", [
    ((1.0, 1.0, 0.0), 3, 1e-4, 1e-5),
    ((5.0, 0.0), 2, 1e-4, 1e-5),
    ((0.2, 0.0, 0.1), 3, 1e-5, 1e-4),
])
def test_identity_residual_examples(x, d, h, tol):
    assert abs(specfun.q_residual(np.array(x), d, h)) <= tol


def test_identity_residual_shrinks_quadratically():
    rng = np.random.default_rng(7)
    ratios = []
    for d in (2, 3):
        for _ in range(10):
            v = rng.normal(size=d)
            x = v / np.linalg.norm(v) * rng.uniform(0.5, 5)
            coarse = abs(specfun.q_residual(x, d, 1e-2))
            fine = abs(specfun.q_residual(x, d, 5e-3))
            if coarse > 1e-9:
                ratios.append(coarse / fine)
    assert np.median(ratios) == pytest.approx(4.0, rel=0.1)


def test_residual_rejects_points_near_origin():
    with pytest.raises(DomainError):
        specfun.q_residual(np.array([1e-4, 0.0]), 2, 1e-4)


# -- comparison transition density ------------------------------------------


def test_density_on_diagonal():
    x = np.array([5.0, 0, 0])
    assert specfun.transition_density(x, x, 1.0, 3) == pytest.approx((2 * math.pi) ** -1.5 * math.exp(-0.5), rel=1e-14)
    assert specfun.transition_density(x, x, 1.0, 3) == pytest.approx(0.0385108, abs=1e-7)


@pytest.mark.parametrize("t", [0.1, 1.0, 7.5])
@pytest.mark.parametrize("d", [2, 3, 4])
def test_density_diagonal_general(t, d):
    x = np.full(d, 2.0)
    assert specfun.transition_density(x, x, t, d) == pytest.approx((2 * math.pi * t) ** (-d / 2) * math.exp(-t / 2))


def test_density_off_diagonal_example():
    val = specfun.transition_density(np.array([5.0, 0, 0]), np.array([6.0, 0, 0]), 1.0, 3)
    assert val == pytest.approx((2 * math.pi) ** -1.5 * 5 / 6, rel=1e-14)
    assert val == pytest.approx(0.0529114, abs=1e-7)


def test_density_rejects_nonpositive_time():
    with pytest.raises(DomainError):
        specfun.transition_density(np.ones(2), np.ones(2), 0.0)


@pytest.mark.parametrize("x0, t, slack", [(3.0, 0.5, 0.01), (5.0, 1.0, 0.005), (20.0, 1.0, 0.001)])
def test_density_mass_close_to_one(x0, t, slack):
    # a comparison density: unit mass only up to a correction that fades as |x| grows
    x = np.array([x0, 0.0])
    g = np.linspace(-15 * math.sqrt(t) - t, 15 * math.sqrt(t) + t, 1201)
    Y = np.stack(np.meshgrid(g + x0, g, indexing="ij"), -1).reshape(-1, 2)
    mass = specfun.transition_density(x, Y, t, 2).sum() * (g[1] - g[0]) ** 2
    assert abs(mass - 1) <= slack
