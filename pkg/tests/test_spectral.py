import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special

from spdereg.errors import AlphaOutOfRange, DimMismatch, GammaOutOfRange, NonPositiveEigenvalue
from spdereg.spectral import (
    apply_semigroup,
    check_hypothesis_pd,
    h_alpha_inner,
    h_alpha_norm,
    make_spectrum,
    power_spectrum,
    propagator,
    q_t_covariance,
    x_norm,
)

alphas = st.sampled_from([0.0, 0.1, 0.25, 0.4, 0.5])
eigs = st.lists(st.floats(1e-6, 10.0), min_size=1, max_size=12)


def test_trace_of_small_spectrum():
    s = make_spectrum([1, 1 / 4, 1 / 9], 0.5)
    assert s.trace == pytest.approx(49 / 36, rel=1e-15)
    assert s.dim == s.truncation_dim == 3


def test_basel_partial_sums_approach_pi_squared_over_six():
    gaps = [abs(power_spectrum(1, 2, n, 0.0).trace - math.pi ** 2 / 6) for n in (10, 100, 1000)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1.1e-3
    s = power_spectrum(1, 2, 1000, 0.0)
    assert s.full_trace == pytest.approx(math.pi ** 2 / 6, rel=1e-12)


@pytest.mark.parametrize("bad", [[1.0, -1.0], [0.0], [], [np.nan]])
def test_rejects_nonpositive(bad):
    with pytest.raises(NonPositiveEigenvalue):
        make_spectrum(bad, 0.25)


@pytest.mark.parametrize("a", [-0.1, 0.51, 1.0])
def test_rejects_alpha(a):
    with pytest.raises(AlphaOutOfRange):
        make_spectrum([1.0], a)


def test_sorts_descending():
    s = make_spectrum([0.1, 2.0, 0.5], 0.0)
    assert s.eigenvalues.tolist() == [2.0, 0.5, 0.1]


def test_semigroup_half_alpha_is_scalar_decay():
    s = make_spectrum([1.0, 0.3], 0.5)
    out = apply_semigroup(s, 2.0, np.array([1.0, 3.0]))
    np.testing.assert_allclose(out, [math.exp(-1), 3 * math.exp(-1)], rtol=1e-15)


def test_semigroup_scalar_ode():
    s = make_spectrum([2.0], 0.0)
    assert apply_semigroup(s, 1.0, np.array([4.0]))[0] == pytest.approx(4 * math.exp(-0.25), rel=1e-15)


def test_semigroup_identity_at_zero_and_dim_check():
    s = power_spectrum(1, 2, 5, 0.25)
    x = np.arange(5.0)
    np.testing.assert_array_equal(apply_semigroup(s, 0.0, x), x)
    with pytest.raises(DimMismatch):
        apply_semigroup(s, 1.0, np.ones(4))


def test_stiff_modes_underflow_quietly():
    s = make_spectrum([1.0, 1e-8], 0.0)
    with np.errstate(all="raise"):
        out = apply_semigroup(s, 1.0, np.ones(2))
    assert out[1] == 0.0 and 0 < out[0] < 1


@given(eigs, alphas, st.floats(0, 5), st.floats(0, 5))
def test_propagator_contracts_and_is_monotone(lam, a, t1, dt):
    s = make_spectrum(lam, a)
    p1, p2 = propagator(s, t1), propagator(s, t1 + dt)
    assert np.all(p1.mode_factors <= 1.0) and np.all(p1.mode_factors >= 0.0)
    assert np.all(p2.mode_factors <= p1.mode_factors)
    x = np.linspace(-1, 1, s.dim)
    assert x_norm(apply_semigroup(s, t1, x)) <= x_norm(x) + 1e-12
    assert h_alpha_norm(s, apply_semigroup(s, t1, x)) <= h_alpha_norm(s, x) * (1 + 1e-12)


def test_inner_product_examples():
    assert h_alpha_inner(make_spectrum([4.0], 0.5), np.array([2.0]), np.array([2.0])) == pytest.approx(1.0)
    s = make_spectrum([1.0, 0.25], 0.5)
    assert h_alpha_inner(s, np.array([1.0, 1.0]), np.array([1.0, -1.0])) == pytest.approx(-3.0)


@given(eigs)
def test_alpha_zero_inner_is_euclidean(lam):
    s = make_spectrum(lam, 0.0)
    h = np.arange(1.0, s.dim + 1)
    k = np.cos(h)
    assert h_alpha_inner(s, h, k) == pytest.approx(float(h @ k), rel=1e-12, abs=1e-12)


@given(eigs, alphas)
def test_embedding_inequality(lam, a):
    s = make_spectrum(lam, a)
    h = np.sin(np.arange(s.dim) + 1.0)
    assert x_norm(h) <= s.eigenvalues[0] ** a * h_alpha_norm(s, h) * (1 + 1e-12)


def test_q_t_covariance():
    for a in (0.0, 0.25, 0.5):
        assert q_t_covariance(make_spectrum([1.0], a), 0.7)[0] == pytest.approx(1 - math.exp(-0.7))
    s = power_spectrum(1, 2, 6, 0.0)
    np.testing.assert_allclose(q_t_covariance(s, 1e-14), 0.0, atol=1e-12)
    np.testing.assert_allclose(q_t_covariance(s, 1e4), s.eigenvalues, rtol=1e-12)


def test_pd_factorizes_at_half():
    s = power_spectrum(1, 2, 64, 0.5)
    rep = check_hypothesis_pd(s, 0.5, 1.0)
    one_d = integrate.quad(lambda u: u ** -0.5 * math.exp(-u), 0, 1)[0]
    assert rep.integral_value == pytest.approx(s.trace * one_d, rel=1e-8)


@pytest.mark.parametrize("gamma", [0.1, 0.5, 0.9])
def test_pd_single_mode_is_incomplete_gamma(gamma):
    rep = check_hypothesis_pd(make_spectrum([1.0], 0.3), gamma, 2.0)
    exact = special.gammainc(1 - gamma, 2.0) * special.gamma(1 - gamma)
    assert rep.integral_value == pytest.approx(exact, rel=1e-8)


def test_pd_edge_cases():
    s = power_spectrum(1, 2, 8, 0.25)
    rep = check_hypothesis_pd(s, 0.5, 0.0)
    assert rep.integral_value == 0.0 and rep.converged
    for g in (0.0, 1.0, -0.2):
        with pytest.raises(GammaOutOfRange):
            check_hypothesis_pd(s, g, 1.0)


def test_pd_diverges_logarithmically_at_alpha_zero():
    # Tr e^{2sA} ~ s^{-1/2}, so the gamma = 1/2 integral grows like log N
    vals = [check_hypothesis_pd(power_spectrum(1, 2, n, 0.0), 0.5, 1.0).integral_value for n in (256, 512, 1024)]
    d1, d2 = vals[1] - vals[0], vals[2] - vals[1]
    assert d1 == pytest.approx(math.sqrt(math.pi) * math.log(2), rel=0.02)
    assert d2 == pytest.approx(d1, rel=0.02)
