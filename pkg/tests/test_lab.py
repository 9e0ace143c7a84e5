import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spdereg.drifts import always_in, drift_gradient_type, drift_projection, quadratic_potential, zero_drift
from spdereg.errors import AlphaNotHalf, DegenerateTime, DirectionNotInHAlpha, MissingDifferential, TooManyModes
from spdereg.lab import (
    LabConfig,
    bel_gradient,
    estimate_semigroup,
    fd_gradient,
    lipschitz_probe,
    lipschitz_probe_x_directions,
    mehler_gradient,
    mehler_oracle,
    pooled_stderr,
)
from spdereg.observables import constant, quadratic_clip, sin_coord, sin_linear, tanh_coord
from spdereg.spectral import make_spectrum, power_spectrum

ONE = make_spectrum([1.0], 0.5)
CFG = LabConfig(ONE, 1.0, 10, seed=3)
ORACLE = math.exp(-(1 - math.exp(-1)) / 2) * math.sin(math.exp(-0.5))
GRAD_ORACLE = math.exp(-(1 - math.exp(-1)) / 2) * math.exp(-0.5)

times = st.sampled_from([0.2, 0.5, 1.0])


def within(est, exact, k=4.0):
    return abs(est.value - exact) <= k * est.stderr


def test_constant_is_fixed():
    est = estimate_semigroup(CFG, zero_drift(ONE), constant(1.0), 1.0, np.zeros(1), 1000)
    assert est.value == 1.0 and est.stderr == 0.0


def test_odd_observable_at_origin():
    est = estimate_semigroup(CFG, zero_drift(ONE), sin_coord(0), 1.0, np.zeros(1), 20_000)
    assert within(est, 0.0)


def test_closed_form_semigroup():
    est = estimate_semigroup(CFG, zero_drift(ONE), sin_coord(0), 1.0, np.ones(1), 50_000)
    assert within(est, ORACLE)


def test_grid_checks():
    m, dt = CFG.grid_for(0.35)
    assert m * dt == pytest.approx(0.35)
    assert CFG.grid_index(0.3) == 3
    with pytest.raises(ValueError):
        CFG.grid_index(0.35)
    with pytest.raises(ValueError):
        CFG.grid_for(1.5)


def test_mehler_oracle_examples():
    assert mehler_oracle(ONE, constant(1.0), 0.7, np.ones(1)) == pytest.approx(1.0, abs=1e-14)
    assert mehler_oracle(ONE, sin_coord(0), 1.0, np.ones(1)) == pytest.approx(ORACLE, rel=1e-12)
    assert mehler_oracle(ONE, tanh_coord(0), 60.0, np.ones(1)) == pytest.approx(0.0, abs=1e-12)
    s3 = power_spectrum(1, 2, 5, 0.5)
    x = np.array([1.0, 0.0, 0, 0, 0])
    assert mehler_oracle(s3, sin_coord(0), 1.0, x, quadrature_modes=3) == pytest.approx(ORACLE, rel=1e-12)
    with pytest.raises(AlphaNotHalf):
        mehler_oracle(power_spectrum(1, 2, 3, 0.0), sin_coord(0), 1.0, np.zeros(3))
    with pytest.raises(TooManyModes):
        mehler_oracle(s3, sin_coord(0), 1.0, x, quadrature_modes=4)


def test_mehler_gradient_matches_closed_form_and_differences():
    g = mehler_gradient(ONE, sin_coord(0), 1.0, np.zeros(1), np.ones(1), [0])
    assert g == pytest.approx(GRAD_ORACLE, rel=1e-10)
    e = 1e-5
    fd = (mehler_oracle(ONE, sin_coord(0), 1.0, np.array([e])) - mehler_oracle(ONE, sin_coord(0), 1.0, np.array([-e]))) / (2 * e)
    assert g == pytest.approx(fd, rel=1e-8)
    with pytest.raises(DegenerateTime):
        mehler_gradient(ONE, sin_coord(0), 0.0, np.zeros(1), np.ones(1), [0])


def test_bel_linear_gaussian():
    est = bel_gradient(CFG, zero_drift(ONE), sin_coord(0), 1.0, np.zeros(1), np.ones(1), 50_000)
    assert within(est, GRAD_ORACLE)
    assert est.extra["h_norm_alpha"] == 1.0


def test_bel_of_constant_vanishes():
    est = bel_gradient(CFG, zero_drift(ONE), constant(1.0), 1.0, np.zeros(1), np.ones(1), 5000)
    assert within(est, 0.0)


def test_bel_agrees_with_fd():
    est = bel_gradient(CFG, zero_drift(ONE), sin_coord(0), 1.0, np.zeros(1), np.ones(1), 40_000)
    fd = fd_gradient(CFG, zero_drift(ONE), sin_coord(0), 1.0, np.zeros(1), np.ones(1), [1e-2], 40_000)
    assert abs(est.value - fd[0].value) <= 4 * pooled_stderr(est, fd[0])


def test_bel_errors():
    s = power_spectrum(1, 2, 3, 0.0)
    d = drift_gradient_type(s, np.tanh, 1.0)
    cfg = LabConfig(s, 1.0, 10)
    with pytest.raises(MissingDifferential):
        bel_gradient(cfg, d, sin_coord(0), 1.0, np.zeros(3), np.ones(3), 100)
    with pytest.raises(DegenerateTime):
        bel_gradient(CFG, zero_drift(ONE), sin_coord(0), 0.05, np.zeros(1), np.ones(1), 100)
    with pytest.raises(ValueError):
        bel_gradient(CFG, zero_drift(ONE), sin_coord(0), 1.0, np.zeros(1), np.ones(1), 100, scheme="midpoint")


def test_fd_constant_and_ladder():
    rep = fd_gradient(CFG, zero_drift(ONE), constant(2.0), 1.0, np.zeros(1), np.ones(1), [0.1, 0.05], 1000)
    assert [e.value for e in rep] == [0.0, 0.0]
    assert len(rep.richardson) == 1
    with pytest.raises(ValueError):
        fd_gradient(CFG, zero_drift(ONE), constant(), 1.0, np.zeros(1), np.ones(1), [0.01, 0.1], 10)


def test_fd_flags_curvature_for_large_steps():
    rep = fd_gradient(CFG, zero_drift(ONE), quadratic_clip(0, 50.0), 1.0, np.ones(1), np.ones(1),
                      [2.0, 1e-3], 4000)
    assert rep.curvature == [True, False]


def test_fd_independent_noise_is_noisier():
    args = (CFG, zero_drift(ONE), sin_coord(0), 1.0, np.zeros(1), np.ones(1), [0.05], 4000)
    shared, indep = fd_gradient(*args), fd_gradient(*args, shared_noise=False)
    assert indep[0].stderr > 10 * shared[0].stderr


@settings(max_examples=5)
@given(times)
def test_semigroup_property(t):
    """P(t) applied through the oracle equals the Monte Carlo estimate at any grid time."""
    est = estimate_semigroup(CFG, zero_drift(ONE), sin_coord(0), t, np.ones(1), 20_000)
    assert within(est, mehler_oracle(ONE, sin_coord(0), t, np.ones(1)), k=4.5)


def test_probe_zero_direction_and_bound():
    s = power_spectrum(1, 2, 8, 0.25)
    d = drift_projection(s, 0.5, np.ones(8), membership=always_in)
    cfg = LabConfig(s, 1.0, 10, seed=5)
    h = np.vstack([np.zeros(8), 0.3 * np.sqrt(s.eigenvalues)])
    rep = lipschitz_probe(cfg, d, sin_coord(0), [0.5, 1.0], np.sqrt(s.eigenvalues), h, n_samples=2000)
    zero_rows = [r for r in rep.rows if r.direction == 0]
    assert all(r.delta == 0.0 and r.stderr == 0.0 for r in zero_rows)
    assert rep.violations == 0 and rep.normalization == "alpha"
    assert rep.constants["exp_LT"] == pytest.approx(math.e)


def test_probe_rejects_rough_directions():
    s = power_spectrum(1, 2, 16, 0.25)
    cfg = LabConfig(s, 1.0, 10)
    with pytest.raises(DirectionNotInHAlpha):
        lipschitz_probe(cfg, zero_drift(s), sin_coord(0), [1.0], np.zeros(16), np.sqrt(np.arange(1.0, 17.0)))


def test_probe_is_worker_independent():
    s = power_spectrum(1, 2, 4, 0.5)
    cfg1 = LabConfig(s, 1.0, 5, seed=9, workers=1, block_size=500)
    cfg4 = LabConfig(s, 1.0, 5, seed=9, workers=4, block_size=500)
    h = 0.2 * np.sqrt(s.eigenvalues)[None, :]
    a = lipschitz_probe(cfg1, zero_drift(s), sin_coord(0), [1.0], np.zeros(4), h, n_samples=2000, n_max=8000)
    b = lipschitz_probe(cfg4, zero_drift(s), sin_coord(0), [1.0], np.zeros(4), h, n_samples=2000, n_max=8000)
    assert [r.delta for r in a.rows] == [r.delta for r in b.rows]
    assert a.n_samples == b.n_samples


def test_x_direction_probe_modes():
    s0 = power_spectrum(1, 2, 6, 0.0)
    grad, hess, lip = quadratic_potential(np.full(6, 0.5))
    d0 = drift_gradient_type(s0, grad, lip, hess)
    h = np.eye(6)[:2] * 0.1
    rep = lipschitz_probe_x_directions(LabConfig(s0, 1.0, 10), d0, sin_linear(np.ones(6)), [1.0], np.zeros(6), h,
                                       n_samples=2000)
    assert rep.normalization == "x" and not rep.bound_asserted
    assert "C_alpha" in rep.constants
    s12 = power_spectrum(1, 2, 6, 0.5)
    d12 = drift_gradient_type(s12, grad, lip, hess)
    rep = lipschitz_probe_x_directions(LabConfig(s12, 1.0, 10), d12, sin_coord(0), [0.5, 1.0], np.zeros(6),
                                       h, n_samples=4000)
    assert rep.bound_asserted and rep.violations == 0
