"""Truncated spectral picture of the state space.

Everything is diagonal in the eigenbasis of the covariance Q, so a state is a
plain float array whose last axis holds the N mode coefficients.  Leading axes
are batch axes and broadcast the usual numpy way.

The generator is A = -(1/2) Q^(2 alpha - 1).  Its mode rates
``r_k = lambda_k^(2 alpha - 1)`` are formed in log space because at alpha = 0
they are reciprocals of possibly tiny eigenvalues.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .errors import (
    AlphaOutOfRange,
    DimMismatch,
    GammaOutOfRange,
    NonPositiveEigenvalue,
    QuadratureFailure,
)

__all__ = [
    "SpectrumQ",
    "DiagonalPropagator",
    "PDReport",
    "make_spectrum",
    "power_spectrum",
    "propagator",
    "apply_semigroup",
    "h_alpha_inner",
    "h_alpha_norm",
    "x_norm",
    "check_hypothesis_pd",
    "q_t_covariance",
    "check_dim",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpectrumQ:
    """Eigenvalues of Q (nonincreasing) together with the noise exponent alpha.

    Build through :func:`make_spectrum`; the constructor itself does not sort
    or validate.
    """

    eigenvalues: np.ndarray
    alpha: float
    declared_tail_trace: Optional[float] = None
    log_eigenvalues: np.ndarray = field(init=False, repr=False)
    rates: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lam = _frozen(self.eigenvalues)
        object.__setattr__(self, "eigenvalues", lam)
        log_lam = _frozen(np.log(lam))
        object.__setattr__(self, "log_eigenvalues", log_lam)
        object.__setattr__(self, "rates", _frozen(np.exp((2.0 * self.alpha - 1.0) * log_lam)))

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.shape[0])

    truncation_dim = dim

    @property
    def trace(self) -> float:
        """Trace of Q over the retained modes."""
        return float(np.sum(self.eigenvalues))

    @property
    def full_trace(self) -> float:
        return self.trace + (self.declared_tail_trace or 0.0)

    def power(self, p: float) -> np.ndarray:
        """Diagonal of Q^p."""
        return np.exp(p * self.log_eigenvalues)

    def truncate(self, n: int) -> "SpectrumQ":
        """Spectrum of the leading ``n`` modes."""
        if not 1 <= n <= self.dim:
            raise DimMismatch(f"cannot truncate {self.dim} modes to {n}")
        return SpectrumQ(self.eigenvalues[:n], self.alpha)

    def with_alpha(self, alpha: float) -> "SpectrumQ":
        return make_spectrum(self.eigenvalues, alpha, self.declared_tail_trace)

    def __repr__(self) -> str:
        return f"SpectrumQ(N={self.dim}, alpha={self.alpha}, trace={self.trace:.6g})"


def make_spectrum(eigenvalues: Sequence[float], alpha: float,
                  declared_tail_trace: Optional[float] = None) -> SpectrumQ:
    """Validate eigenvalues and alpha and return a :class:`SpectrumQ`.

    Eigenvalues are sorted nonincreasing.  Raises ``NonPositiveEigenvalue`` or
    ``AlphaOutOfRange``.
    """
    lam = np.asarray(eigenvalues, dtype=float).ravel()
    if lam.size == 0:
        raise NonPositiveEigenvalue("empty spectrum")
    if not np.all(np.isfinite(lam)) or np.any(lam <= 0.0):
        bad = lam[~(np.isfinite(lam) & (lam > 0))]
        raise NonPositiveEigenvalue(f"eigenvalues must be finite and > 0, got {bad[:5].tolist()}")
    alpha = float(alpha)
    if not (0.0 <= alpha <= 0.5):
        raise AlphaOutOfRange(f"alpha must lie in [0, 1/2], got {alpha}")
    if declared_tail_trace is not None and declared_tail_trace < 0:
        raise ValueError("declared_tail_trace must be nonnegative")
    return SpectrumQ(np.sort(lam)[::-1], alpha, declared_tail_trace)


def power_spectrum(c: float, p: float, n: int, alpha: float) -> SpectrumQ:
    """lambda_k = c * k^(-p), k = 1..n, with p > 1 so that Q is trace class."""
    if p <= 1:
        raise ValueError(f"power family needs p > 1, got {p}")
    if c <= 0:
        raise NonPositiveEigenvalue(f"scale c must be positive, got {c}")
    k = np.arange(1, int(n) + 1, dtype=float)
    tail = c * _zeta_tail(p, int(n))
    return make_spectrum(c * k ** (-p), alpha, tail)


def _zeta_tail(p: float, n: int) -> float:
    from scipy.special import zeta

    return float(zeta(p, n + 1))


def check_dim(s: SpectrumQ, x: np.ndarray, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != s.dim:
        raise DimMismatch(f"{name} has trailing dimension {x.shape[-1:] or ()}, spectrum has {s.dim}")
    return x


@dataclass(frozen=True, eq=False)
class DiagonalPropagator:
    """e^{tA} stored as its diagonal."""

    mode_factors: np.ndarray
    time: float

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.mode_factors * x


def propagator(s: SpectrumQ, t: float) -> DiagonalPropagator:
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    with np.errstate(under="ignore"):
        factors = np.exp(-0.5 * t * s.rates)
    return DiagonalPropagator(_frozen(factors), float(t))


def apply_semigroup(s: SpectrumQ, t: float, x: np.ndarray) -> np.ndarray:
    """e^{tA} x, mode by mode."""
    x = check_dim(s, x)
    return propagator(s, t)(x)


def h_alpha_inner(s: SpectrumQ, h: np.ndarray, k: np.ndarray) -> np.ndarray:
    """<h, k>_alpha = sum_j lambda_j^(-2 alpha) h_j k_j over the last axis."""
    h = check_dim(s, h, "h")
    k = check_dim(s, k, "k")
    return np.sum(s.power(-2.0 * s.alpha) * h * k, axis=-1)


def h_alpha_norm(s: SpectrumQ, h: np.ndarray) -> np.ndarray:
    h = check_dim(s, h, "h")
    return np.sqrt(np.sum(s.power(-2.0 * s.alpha) * h * h, axis=-1))


def x_norm(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.square(x), axis=-1))


def q_t_covariance(s: SpectrumQ, t: float) -> np.ndarray:
    """Diagonal of Q_t = Q(I - e^{2tA}), the law of the stochastic convolution at t."""
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    return s.eigenvalues * -np.expm1(-t * s.rates)


@dataclass(frozen=True)
class PDReport:
    integral_value: float
    converged: bool
    coarse_value: float
    relative_change: float
    abserr: float
    n_modes: int


def _pd_integral(weights: np.ndarray, rates: np.ndarray, gamma: float, t: float):
    """int_0^t s^-gamma sum_k weights_k exp(-s rates_k) ds and an error estimate.

    Each mode integrates in closed form to r^(gamma-1) Gamma(1-gamma) P(1-gamma, r t).
    """
    a = 1.0 - gamma
    with np.errstate(under="ignore"):
        terms = weights * np.exp((gamma - 1.0) * np.log(rates)) * special.gammainc(a, rates * t)
    value = float(math.gamma(a) * np.sum(terms))
    if not math.isfinite(value):
        raise QuadratureFailure("non-finite p_d integral")
    return value, float(np.spacing(value) * len(terms))


def check_hypothesis_pd(s: SpectrumQ, gamma: float, t: float, rtol: float = 0.01) -> PDReport:
    """Evaluate int_0^t s^-gamma Tr[e^{2sA} Q^{2 alpha}] ds at N and N/2 modes.

    ``converged`` is true when halving the truncation changes the value by
    less than ``rtol`` relative.
    """
    if not (0.0 < gamma < 1.0):
        raise GammaOutOfRange(f"gamma must lie in (0, 1), got {gamma}")
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if t == 0:
        return PDReport(0.0, True, 0.0, 0.0, 0.0, s.dim)
    w = s.power(2.0 * s.alpha)
    fine, err = _pd_integral(w, s.rates, gamma, t)
    half = max(1, s.dim // 2)
    coarse, _ = _pd_integral(w[:half], s.rates[:half], gamma, t)
    rel = abs(fine - coarse) / abs(fine) if fine else 0.0
    return PDReport(float(fine), bool(rel < rtol), float(coarse), float(rel), float(err), s.dim)
