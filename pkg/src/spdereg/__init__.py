"""Numerical experiments on the smoothing of SPDE transition semigroups.

The state space is truncated to the first N eigenmodes of a trace-class
covariance Q; everything below works with coefficient vectors in that basis.
"""
__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .spectral import (
    SpectrumQ,
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
from .covariance import (
    GridFunction,
    KernelSpec,
    SpectralFrame,
    build_frame,
    from_coeffs,
    load_frame,
    save_frame,
    to_coeffs,
)
from .drifts import (
    DriftSpec,
    HeuristicMembership,
    always_in,
    drift_cahn_hilliard,
    drift_composition_left,
    drift_composition_right,
    drift_finite_rank,
    drift_gradient_type,
    drift_projection,
    zero_drift,
)
from .engine import NoiseRecord, PathBundle, solve_exp_euler, solve_picard, solve_shifted
from .rng import StreamKey
from .observables import Observable
from .lab import (
    LabConfig,
    SemigroupEstimate,
    bel_gradient,
    estimate_semigroup,
    fd_gradient,
    lipschitz_probe,
    lipschitz_probe_x_directions,
    mehler_gradient,
    mehler_oracle,
)
