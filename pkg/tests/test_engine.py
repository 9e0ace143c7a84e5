import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from spdereg.drifts import always_in, drift_projection, quadratic_potential, drift_gradient_type, zero_drift
from spdereg.engine import (
    NoiseRecord,
    decomposition_gap,
    sample_convolution_step,
    solve_exp_euler,
    solve_picard,
    solve_shifted,
    step_law,
    variational_bound_report,
)
from spdereg.errors import DimMismatch, MissingDifferential, NonFiniteState
from spdereg.rng import StreamKey
from spdereg.spectral import apply_semigroup, make_spectrum, power_spectrum, q_t_covariance

ONE = make_spectrum([1.0], 0.5)
steps_st = st.sampled_from([1, 2, 5, 16])
alphas = st.sampled_from([0.0, 0.25, 0.5])


def test_convolution_step_moments():
    s = power_spectrum(1, 2, 3, 0.25)
    eta = sample_convolution_step(s, 0.5, StreamKey(1, "conv"), n=100_000)
    se = eta.std(axis=0) / math.sqrt(len(eta))
    assert np.all(np.abs(eta.mean(axis=0)) < 4 * se)
    v = sample_convolution_step(ONE, 1.0, StreamKey(2, "conv"), n=100_000)[:, 0]
    target = 1 - math.exp(-1)
    assert abs(v.var() - target) < 3 * target * math.sqrt(2 / len(v))


def test_convolution_step_vanishes_with_dt():
    small = sample_convolution_step(ONE, 1e-12, StreamKey(3, "conv"), n=1000)
    assert np.max(np.abs(small)) < 1e-4


@given(alphas, st.floats(1e-4, 3.0))
def test_step_law_is_a_valid_covariance(a, dt):
    """The (eta, dW) pair has a positive semidefinite covariance."""
    s = power_spectrum(1, 2, 6, a)
    law = step_law(s, dt)
    np.testing.assert_allclose(law.conv_var, q_t_covariance(s, dt))
    assert np.all(law.cross_cov ** 2 <= law.conv_var * law.plain_var * (1 + 1e-9))
    np.testing.assert_allclose(law.b1 ** 2 + law.b2 ** 2, law.plain_var, rtol=1e-9)


def test_ou_law():
    b = solve_exp_euler(ONE, zero_drift(ONE), np.array([1.0]), 2.0, 20, StreamKey(4, "ou"), n_paths=100_000)
    xt = b.states[-1, :, 0]
    se = xt.std() / math.sqrt(len(xt))
    assert abs(xt.mean() - math.exp(-1)) < 3 * se
    var = 1 - math.exp(-2)
    assert abs(xt.var() - var) < 3 * var * math.sqrt(2 / len(xt))
    # the terminal law is Gaussian, not just right in two moments
    assert stats.kstest((xt - math.exp(-1)) / math.sqrt(var), "norm").pvalue > 1e-3


def test_variational_process_free_case():
    s = power_spectrum(1, 2, 5, 0.25)
    h = np.linspace(1, 0.2, 5)
    b = solve_exp_euler(s, zero_drift(s), np.zeros(5), 1.0, 10, StreamKey(5, "y"), directions=h, n_paths=3)
    for m, t in enumerate(b.times):
        np.testing.assert_allclose(b.variational[m, :, 0], np.broadcast_to(apply_semigroup(s, t, h), (3, 5)),
                                   rtol=1e-12)
    rep = variational_bound_report(b, s, 0.0)
    assert rep.ratio_at_zero == 1.0 and rep.max_ratio <= 1.0 and not rep.violated


def test_variational_needs_differential():
    s = power_spectrum(1, 2, 3, 0.0)
    d = drift_gradient_type(s, np.tanh, 1.0)
    with pytest.raises(MissingDifferential):
        solve_exp_euler(s, d, np.zeros(3), 1.0, 4, StreamKey(0, "v"), directions=np.ones(3), n_paths=2)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_variational_is_linear(a, b):
    """Y(t, a h + b k) = a Y(t, h) + b Y(t, k) on shared noise."""
    s = power_spectrum(1, 2, 4, 0.25)
    grad, hess, lip = quadratic_potential([1, 2, 0.5, 0.1])
    d = drift_gradient_type(s, lambda x: np.tanh(grad(x)), lip, lambda x, h: hess(x, h) / np.cosh(grad(x)) ** 2)
    h, k = np.eye(4)[0], np.array([0.3, -1, 0.2, 0.5])
    noise = NoiseRecord.draw(s, 1.0, 8, 4, StreamKey(6, "lin"))
    run = solve_exp_euler(s, d, np.ones(4), 1.0, 8, noise, directions=np.vstack([h, k, a * h + b * k]))
    y = run.variational
    np.testing.assert_allclose(y[:, :, 2], a * y[:, :, 0] + b * y[:, :, 1], atol=1e-12)


def test_projection_variational_bound():
    s = power_spectrum(1, 2, 8, 0.25)
    d = drift_projection(s, 0.5, np.ones(8), membership=always_in)
    h = np.sqrt(s.eigenvalues)
    b = solve_exp_euler(s, d, np.sqrt(s.eigenvalues), 1.0, 20, StreamKey(7, "vb"), directions=h, n_paths=1000)
    assert not variational_bound_report(b, s, float(d.lipschitz())).violated


def test_gateaux_consistency():
    s = power_spectrum(1, 2, 4, 0.0)
    grad, hess, lip = quadratic_potential([1, 1, 1, 1])
    d = drift_gradient_type(s, lambda x: np.sin(grad(x)), lip, lambda x, h: np.cos(grad(x)) * hess(x, h))
    x0, h = np.ones(4), np.array([1.0, 0.5, -0.5, 0.25])
    noise = NoiseRecord.draw(s, 1.0, 16, 8, StreamKey(8, "gat"))
    base = solve_exp_euler(s, d, x0, 1.0, 16, noise, directions=h)
    errs = []
    for eps in (1e-2, 5e-3, 2.5e-3):
        bumped = solve_exp_euler(s, d, x0 + eps * h, 1.0, 16, noise)
        fd = (bumped.states - base.states) / eps
        errs.append(np.max(np.abs(fd - base.variational[:, :, 0])))
    assert errs[0] / errs[1] == pytest.approx(2, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(2, rel=0.1)


def test_picard_free_case_converges_at_once():
    s = power_spectrum(1, 2, 4, 0.25)
    noise = NoiseRecord.draw(s, 1.0, 10, 5, StreamKey(9, "p0"))
    pic = solve_picard(s, zero_drift(s), np.ones(4), 1.0, 10, noise)
    eu = solve_exp_euler(s, zero_drift(s), np.ones(4), 1.0, 10, noise)
    assert pic.info["iterations"] == [1]
    np.testing.assert_allclose(pic.states, eu.states, atol=1e-13)


def test_picard_and_euler_agree_at_first_order():
    s = power_spectrum(1, 2, 6, 0.25)
    d = drift_projection(s, 0.5, np.linspace(1, -1, 6), membership=always_in)
    fine = NoiseRecord.draw(s, 1.0, 256, 16, StreamKey(10, "pic"))
    gaps = []
    for f in (4, 2, 1):
        rec = fine.coarsen(s, f) if f > 1 else fine
        n = rec.steps
        a = solve_exp_euler(s, d, np.ones(6), 1.0, n, rec)
        b = solve_picard(s, d, np.ones(6), 1.0, n, rec)
        gaps.append(np.max(np.abs(a.states - b.states)))
    assert gaps[0] / gaps[1] == pytest.approx(2, rel=0.1)
    assert gaps[1] / gaps[2] == pytest.approx(2, rel=0.1)


def test_coarsening_preserves_the_convolution():
    s = power_spectrum(1, 2, 3, 0.0)
    rec = NoiseRecord.draw(s, 1.0, 8, 2, StreamKey(11, "c"))
    fine = solve_exp_euler(s, zero_drift(s), np.zeros(3), 1.0, 8, rec)
    coarse = solve_exp_euler(s, zero_drift(s), np.zeros(3), 1.0, 4, rec.coarsen(s, 2))
    np.testing.assert_allclose(coarse.states, fine.states[::2], atol=1e-14)
    with pytest.raises(ValueError):
        rec.coarsen(s, 3)


def test_decomposition_gap_vanishes():
    s = power_spectrum(1, 2, 6, 0.25)
    d = drift_projection(s, 0.5, np.ones(6), membership=always_in)
    x0 = np.sqrt(s.eigenvalues)
    rec = NoiseRecord.draw(s, 1.0, 20, 10, StreamKey(12, "dec"))
    xr = solve_exp_euler(s, d, x0, 1.0, 20, rec)
    zr = solve_shifted(s, d, x0, np.zeros(6), 1.0, 20, rec)
    assert decomposition_gap(s, xr, zr, x0) < 1e-12


def test_shifted_free_case_ignores_anchor():
    s = power_spectrum(1, 2, 3, 0.5)
    rec = NoiseRecord.draw(s, 1.0, 5, 2, StreamKey(13, "sh"))
    h = np.array([1.0, 0.0, -1.0])
    a = solve_shifted(s, zero_drift(s), np.ones(3), h, 1.0, 5, rec)
    b = solve_shifted(s, zero_drift(s), 5 * np.ones(3), h, 1.0, 5, rec)
    np.testing.assert_array_equal(a.states, b.states)


def test_noise_validation_and_blowup():
    s = power_spectrum(1, 2, 3, 0.5)
    rec = NoiseRecord.draw(s, 1.0, 5, 2, StreamKey(14, "bad"))
    with pytest.raises(DimMismatch):
        solve_exp_euler(s, zero_drift(s), np.zeros(3), 1.0, 6, rec)
    wild = drift_gradient_type(s, lambda x: np.exp(50 * x), 1.0)
    with pytest.raises(NonFiniteState), np.errstate(over="ignore"):
        solve_exp_euler(s, wild, np.ones(3), 1.0, 5, rec)


@given(steps_st, st.integers(0, 1000))
def test_streams_are_reproducible(steps, seed):
    """The same key reproduces a run bit for bit."""
    s = power_spectrum(1, 2, 3, 0.25)
    a = solve_exp_euler(s, zero_drift(s), np.ones(3), 1.0, steps, StreamKey(seed, "r"), n_paths=3)
    b = solve_exp_euler(s, zero_drift(s), np.ones(3), 1.0, steps, StreamKey(seed, "r"), n_paths=3)
    np.testing.assert_array_equal(a.states, b.states)


def test_write_columns():
    s = power_spectrum(1, 2, 2, 0.5)
    b = solve_exp_euler(s, zero_drift(s), np.ones(2), 1.0, 2, StreamKey(15, "w"), n_paths=2)
    buf = io.StringIO()
    b.write_columns(buf, paths=[1])
    lines = buf.getvalue().splitlines()
    assert lines[0] == "path,time,mode,value"
    assert len(lines) == 1 + 3 * 2
    p, t, k, v = lines[-1].split(",")
    assert float(v) == b.states[2, 1, 1] and float(t) == 1.0
