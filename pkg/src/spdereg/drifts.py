"""Drift nonlinearities F and their Lipschitz data.

A :class:`DriftSpec` evaluates in batch: inputs have shape ``(..., N)`` and
the output has the same shape.  Branching drifts are zero wherever their
membership oracle says the input is not in H_alpha.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np
from scipy import integrate

from .covariance import GridFunction, SpectralFrame
from .errors import (
    AlphaNotHalf,
    AlphaNotZero,
    BetaTooSmall,
    DimMismatch,
    MembershipUndecided,
    MissingDifferential,
    NotLipschitz,
    NotMonotone,
    NotOrthonormal,
    RangeNotH12,
    RangeViolation,
)
from .spectral import SpectrumQ, apply_semigroup, check_dim, h_alpha_norm

__all__ = [
    "DriftSpec",
    "ShiftedDrift",
    "IntegrabilityReport",
    "LipschitzAudit",
    "always_in",
    "never_in",
    "HeuristicMembership",
    "zero_drift",
    "eval_shifted",
    "shifted_integrability",
    "drift_projection",
    "drift_composition_right",
    "drift_composition_left",
    "drift_gradient_type",
    "quadratic_potential",
    "drift_cahn_hilliard",
    "sine_inner",
    "drift_finite_rank",
    "sine_directions",
    "lipschitz_audit",
]

Array = np.ndarray
Membership = Callable[[Array], Array]


def always_in(x: Array) -> Array:
    return np.ones(np.shape(x)[:-1], dtype=bool)


def never_in(x: Array) -> Array:
    return np.zeros(np.shape(x)[:-1], dtype=bool)


@dataclass(frozen=True, eq=False)
class HeuristicMembership:
    """Declare x outside H_alpha when ||x||_alpha over N modes exceeds
    ``ratio`` times the same norm over the first N/2 modes.

    A finite truncation lies in H_alpha trivially; this is a surrogate for
    divergence of the full series and nothing more.
    """

    spectrum: SpectrumQ
    ratio: float = 2.0

    def __call__(self, x: Array) -> Array:
        n = self.spectrum.dim
        if n < 2:
            raise MembershipUndecided("need at least two modes to compare truncations")
        w = self.spectrum.power(-2.0 * self.spectrum.alpha)
        sq = w * np.square(x)
        full = np.sqrt(np.sum(sq, axis=-1))
        half = np.sqrt(np.sum(sq[..., : n // 2], axis=-1))
        return full <= self.ratio * half


@dataclass(frozen=True, eq=False)
class DriftSpec:
    """A drift F together with its declared regularity.

    ``lip_alpha`` is either a constant L with
    ||F(x+h) - F(x)||_alpha <= L ||h||_alpha, or a callable x -> L(x).
    ``lip_x`` is a Lipschitz constant on X when one is known, and
    ``k_alpha`` a Lipschitz constant of Q^{-alpha} F on X.
    """

    name: str
    spectrum: SpectrumQ
    formula: Callable[[Array], Array]
    lip_alpha: Union[float, Callable[[Array], Array]]
    membership: Membership = always_in
    jacobian: Optional[Callable[[Array, Array], Array]] = None
    lip_x: Optional[float] = None
    k_alpha: Optional[float] = None
    branching: bool = False
    bound_family: str = "h_alpha_lipschitz"
    params: Dict[str, object] = field(default_factory=dict)

    def evaluate(self, x: Array) -> Array:
        x = check_dim(self.spectrum, x)
        out = self.formula(x)
        if self.branching:
            out = np.where(self.membership(x)[..., None], out, 0.0)
        return out

    __call__ = evaluate

    @property
    def has_differential(self) -> bool:
        return self.jacobian is not None

    def differential(self, x: Array, h: Array) -> Array:
        """Gateaux derivative D F(x) h; zero off the branch."""
        if self.jacobian is None:
            raise MissingDifferential(f"drift {self.name!r} has no differential")
        out = self.jacobian(x, h)
        if self.branching:
            out = np.where(self.membership(x)[..., None], out, 0.0)
        return out

    def lipschitz(self, x: Optional[Array] = None) -> Array:
        if callable(self.lip_alpha):
            if x is None:
                raise ValueError(f"drift {self.name!r} has a state-dependent constant")
            return np.asarray(self.lip_alpha(x), dtype=float)
        return np.asarray(float(self.lip_alpha))

    @property
    def state_dependent(self) -> bool:
        return callable(self.lip_alpha)

    def with_membership(self, membership: Membership) -> "DriftSpec":
        return replace(self, membership=membership)


def zero_drift(s: SpectrumQ) -> DriftSpec:
    return DriftSpec("zero", s, np.zeros_like, 0.0,
                     jacobian=lambda x, h: np.zeros(np.broadcast_shapes(np.shape(x), np.shape(h))),
                     lip_x=0.0, k_alpha=0.0)


# -- shifted drift -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ShiftedDrift:
    """F_{x,t}(h) = F(h + e^{tA} x)."""

    base: DriftSpec
    anchor_x: Array
    spectrum: SpectrumQ

    def __post_init__(self):
        object.__setattr__(self, "anchor_x", check_dim(self.spectrum, self.anchor_x, "anchor_x"))

    def shift(self, t: float) -> Array:
        return apply_semigroup(self.spectrum, t, self.anchor_x)

    def differential(self, t: float, h: Array, k: Array) -> Array:
        return self.base.differential(h + self.shift(t), k)


def eval_shifted(sd: ShiftedDrift, t: float, h: Array) -> Array:
    h = check_dim(sd.spectrum, h, "h")
    return sd.base.evaluate(h + apply_semigroup(sd.spectrum, t, sd.anchor_x))


@dataclass(frozen=True)
class IntegrabilityReport:
    value: float
    abserr: float
    finite: bool


def shifted_integrability(sd: ShiftedDrift, T: float) -> IntegrabilityReport:
    """int_0^T ||F_{x,s}(0)||_alpha^2 ds by adaptive quadrature."""
    zero = np.zeros(sd.spectrum.dim)

    def g(s):
        return float(h_alpha_norm(sd.spectrum, eval_shifted(sd, s, zero)) ** 2)

    value, err = integrate.quad(g, 0.0, T, limit=200)
    return IntegrabilityReport(float(value), float(err), bool(np.isfinite(value)))


# -- example drifts ----------------------------------------------------------

def drift_projection(s: SpectrumQ, beta: float, pi_diag: Sequence[float],
                     membership: Optional[Membership] = None) -> DriftSpec:
    """F(x) = Pi Q^beta x on H_alpha, zero elsewhere; Pi diagonal."""
    if beta < s.alpha:
        raise BetaTooSmall(f"beta={beta} must be >= alpha={s.alpha}")
    pi = check_dim(s, np.asarray(pi_diag, dtype=float), "pi_diag")
    coef = pi * s.power(beta)
    lip = float(np.max(np.abs(pi)) * s.eigenvalues[0] ** beta)
    return DriftSpec(
        "projection", s,
        formula=lambda x: coef * x,
        lip_alpha=lip,
        membership=membership or HeuristicMembership(s),
        jacobian=lambda x, h: coef * h,
        branching=True,
        params={"beta": float(beta), "pi_diag": pi.tolist()},
    )


def _grid_callable(g, nodes: Array):
    """Values of g on the grid and at 0, from a callable or a GridFunction."""
    if isinstance(g, GridFunction):
        v = g.values
        if v.shape[-1] != nodes.shape[0]:
            raise DimMismatch("g lives on a different grid")
        # linear extrapolation to xi = 0
        g0 = v[0] - (v[1] - v[0]) * nodes[0] / (nodes[1] - nodes[0])
        return v, float(g0)
    return np.asarray(g(nodes), dtype=float), float(g(np.array([0.0]))[0])


def _interp_matrix(points: Array, nodes: Array) -> Array:
    """Rows: weights that linearly interpolate grid values (with f(0)=0) at ``points``.

    Beyond the last node the value is held constant.
    """
    knots = np.concatenate([[0.0], nodes])
    m = nodes.shape[0]
    eye = np.vstack([np.zeros(m), np.eye(m)])
    return np.column_stack([np.interp(points, knots, eye[:, j]) for j in range(m)])


def drift_composition_right(frame: SpectralFrame, g, membership: Optional[Membership] = None) -> DriftSpec:
    """F(f) = f o g - f(g(0)) for nondecreasing g: [0,1] -> [0,1].

    The map is linear in f, so it is assembled once as an N x N matrix.
    """
    s = frame.spectrum
    if s.alpha != 0.5:
        raise AlphaNotHalf("composition drifts live in H_{1/2}")
    nodes = frame.nodes
    gv, g0 = _grid_callable(g, nodes)
    if np.any(np.diff(np.concatenate([[g0], gv])) < -1e-14):
        raise NotMonotone("g must be nondecreasing")
    if min(g0, gv.min()) < -1e-12 or max(g0, gv.max()) > 1 + 1e-12:
        raise RangeViolation("g must map [0,1] into [0,1]")
    slopes = np.diff(np.concatenate([[g0], gv])) / np.diff(np.concatenate([[0.0], nodes]))
    lip_g = float(np.max(slopes))
    c = _interp_matrix(np.clip(gv, 0, 1), nodes)
    c0 = _interp_matrix(np.array([min(max(g0, 0.0), 1.0)]), nodes)[0]
    op = (c - c0[None, :]) @ frame.basis
    mat = frame.basis.T @ op / frame.grid_size
    mat.setflags(write=False)
    return DriftSpec(
        "composition_right", s,
        formula=lambda x: x @ mat.T,
        lip_alpha=float(np.sqrt(lip_g)),
        membership=membership or HeuristicMembership(s),
        jacobian=lambda x, h: h @ mat.T,
        branching=True,
        params={"lip_g": lip_g, "matrix": mat},
    )


def _max_slope(fn, lo: float, hi: float, n: int = 20001) -> float:
    u = np.linspace(lo, hi, n)
    v = np.asarray(fn(u), dtype=float)
    return float(np.max(np.abs(np.diff(v) / np.diff(u))))


def drift_composition_left(frame: SpectralFrame, g: Callable[[Array], Array],
                           g_prime: Callable[[Array], Array], lip_g: float, lip_g_prime: float,
                           membership: Optional[Membership] = None,
                           domain=(-4.0, 4.0)) -> DriftSpec:
    """F(f) = g o f - g(f(0)) with f(0) = 0 on the branch.

    The Lipschitz constant depends on the base point:
    L(f) = sqrt(2) max(L_g, L_g' ||f'||_inf).  Declared constants are
    checked against grid slopes of g and g' over ``domain``.
    """
    s = frame.spectrum
    if s.alpha != 0.5:
        raise AlphaNotHalf("composition drifts live in H_{1/2}")
    tol = 1 + 1e-6
    if _max_slope(g, *domain) > lip_g * tol:
        raise NotLipschitz(f"slopes of g exceed declared L_g={lip_g} on {domain}")
    if _max_slope(g_prime, *domain) > lip_g_prime * tol:
        raise NotLipschitz(f"slopes of g' exceed declared L_g'={lip_g_prime} on {domain}")
    g0 = float(np.asarray(g(np.zeros(1)))[0])
    m = frame.grid_size

    def formula(x):
        return frame.analysis(g(frame.synthesis(x)) - g0)

    def jacobian(x, h):
        return frame.analysis(g_prime(frame.synthesis(x)) * frame.synthesis(h))

    def lip(x):
        v = frame.synthesis(np.asarray(x, dtype=float))
        v = np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)
        knots = np.concatenate([[0.0], frame.nodes])
        dmax = np.max(np.abs(np.diff(v, axis=-1) / np.diff(knots)), axis=-1)
        return np.sqrt(2.0) * np.maximum(lip_g, lip_g_prime * dmax)

    return DriftSpec(
        "composition_left", s,
        formula=formula,
        lip_alpha=lip,
        membership=membership or HeuristicMembership(s),
        jacobian=jacobian,
        branching=True,
        bound_family="pointwise_lipschitz",
        params={"lip_g": lip_g, "lip_g_prime": lip_g_prime, "grid_size": m},
    )


def drift_gradient_type(s: SpectrumQ, grad_u: Callable[[Array], Array], lip_du: float,
                        hess_u: Optional[Callable[[Array, Array], Array]] = None) -> DriftSpec:
    """F(x) = Q^alpha DU(x) for convex U with Lipschitz gradient."""
    qa = s.power(s.alpha)
    lip = float(s.eigenvalues[0] ** s.alpha * lip_du)
    jac = None if hess_u is None else (lambda x, h: qa * hess_u(x, h))
    return DriftSpec(
        "gradient_type", s,
        formula=lambda x: qa * grad_u(x),
        lip_alpha=lip,
        jacobian=jac,
        lip_x=lip,
        k_alpha=float(lip_du),
        bound_family="x_lipschitz",
        params={"lip_du": float(lip_du)},
    )


def quadratic_potential(c: Sequence[float]):
    """U(x) = (1/2) sum c_k x_k^2 with c_k >= 0: returns grad, hessian-vector product, Lipschitz constant."""
    c = np.asarray(c, dtype=float)
    if np.any(c < 0):
        raise ValueError("quadratic potential must be convex (c >= 0)")
    return (lambda x: c * x), (lambda x, h: c * h), float(np.max(c))


def drift_cahn_hilliard(s: SpectrumQ, inner: Callable[[Array], Array], lip_inner: float,
                        inner_jacobian: Optional[Callable[[Array, Array], Array]] = None,
                        probes: int = 8) -> DriftSpec:
    """F(x) = (-A)^{1/2} f(x) at alpha = 0, where f maps X into H_{1/2}.

    ``lip_inner`` bounds ||f(x+k) - f(x)||_{1/2} / ||k||.  Since
    (-A)^{1/2} = Q^{-1/2}/sqrt(2) here, F is Lipschitz on X with lip_inner/sqrt(2).
    """
    if s.alpha != 0.0:
        raise AlphaNotZero(f"the Cahn-Hilliard form needs alpha = 0, got {s.alpha}")
    factor = np.sqrt(0.5 / s.eigenvalues)
    _check_range_h12(s, inner, probes)
    jac = None if inner_jacobian is None else (lambda x, h: factor * inner_jacobian(x, h))
    lip = float(lip_inner) / np.sqrt(2.0)
    return DriftSpec(
        "cahn_hilliard", s,
        formula=lambda x: factor * inner(x),
        lip_alpha=lip,
        jacobian=jac,
        lip_x=lip,
        params={"lip_inner": float(lip_inner)},
    )


def _check_range_h12(s: SpectrumQ, inner, probes: int, ratio: float = 2.0) -> None:
    n = s.dim
    w = 1.0 / s.eigenvalues
    rng = np.random.default_rng(12345)
    xs = np.vstack([np.zeros(n), rng.standard_normal((probes, n)) * np.sqrt(s.eigenvalues)])
    v = np.asarray(inner(xs), dtype=float)
    sq = w * v * v
    full = np.sqrt(np.sum(sq, axis=-1))
    half = np.sqrt(np.sum(sq[:, : max(1, n // 2)], axis=-1))
    if not np.all(np.isfinite(full)):
        raise RangeNotH12("inner map produced a non-finite H_{1/2} norm")
    bad = (full > ratio * half) & (full > 1e-12)
    if n >= 2 and np.any(bad):
        raise RangeNotH12("H_{1/2} norm of the inner map is dominated by the upper half of the modes")


def sine_inner(s: SpectrumQ, amplitude: float = 1.0):
    """f(x) = a Q^{1/2} sin(x): ||f(x+k) - f(x)||_{1/2} <= a ||k||."""
    q = amplitude * np.sqrt(s.eigenvalues)
    return (lambda x: q * np.sin(x)), (lambda x, h: q * np.cos(x) * h), abs(float(amplitude))


def sine_directions(m: int, n: int) -> Array:
    """sqrt(2) sin(k pi xi), k = 1..n: orthonormal on the midpoint grid for n < m."""
    xi = (np.arange(m) + 0.5) / m
    k = np.arange(1, n + 1)[:, None]
    return np.sqrt(2.0) * np.sin(k * np.pi * xi[None, :])


def drift_finite_rank(frame: SpectralFrame, directions, f: Callable[[Array, Array], Array],
                      df_dy: Callable[[Array, Array], Array], bounds: Dict[str, float],
                      membership: Optional[Membership] = None, tol: float = 1e-8) -> DriftSpec:
    """F(g)(xi) = f(xi, <g, x_1>, ..., <g, x_n>).

    ``f(xi, y)`` takes the grid (M,) and y of shape (..., n) and returns
    (..., M); ``df_dy`` returns (..., M, n).  ``bounds`` carries sup norms
    ``f``, ``dxi``, ``dy`` and the mixed bound ``dxidy``.
    """
    s = frame.spectrum
    d = np.vstack([v.values if isinstance(v, GridFunction) else np.asarray(v, dtype=float)
                   for v in directions])
    if d.shape[1] != frame.grid_size:
        raise DimMismatch("directions live on a different grid")
    gram = d @ d.T / frame.grid_size
    if np.max(np.abs(gram - np.eye(d.shape[0]))) > tol:
        raise NotOrthonormal(f"direction Gram matrix deviates from identity by "
                             f"{np.max(np.abs(gram - np.eye(d.shape[0]))):.3g}")
    n = d.shape[0]
    proj = frame.analysis(d)  # (n, N); <g, x_i> = coeffs(g) . proj_i for g in the span
    proj.setflags(write=False)
    xi = frame.nodes

    def formula(x):
        return frame.analysis(f(xi, x @ proj.T))

    def jacobian(x, h):
        y = x @ proj.T
        dy = h @ proj.T
        return frame.analysis(np.einsum("...mi,...i->...m", df_dy(xi, y), dy))

    lip_x = n * max(bounds.get("dxi", 0.0), bounds.get("dy", 0.0))
    k_alpha = np.sqrt(n) * bounds.get("dxidy", np.inf)
    lip_alpha = float(k_alpha * s.eigenvalues[0] ** s.alpha)
    return DriftSpec(
        "finite_rank", s,
        formula=formula,
        lip_alpha=lip_alpha,
        membership=membership or always_in,
        jacobian=jacobian,
        lip_x=float(lip_x),
        k_alpha=float(k_alpha),
        bound_family="x_lipschitz",
        params={"rank": n, **{k: float(v) for k, v in bounds.items()}},
    )


# -- audits ------------------------------------------------------------------

@dataclass(frozen=True)
class LipschitzAudit:
    max_ratio: float
    n_pairs: int
    worst_x: Array
    worst_h: Array


def lipschitz_audit(drift: DriftSpec, n_pairs: int, rng: np.random.Generator,
                    x_scale: float = 1.0, h_radius: float = 1.0) -> LipschitzAudit:
    """Largest ||F(x+h) - F(x)||_alpha / (L(x) ||h||_alpha) over random pairs.

    x is drawn from N(0, x_scale^2 Q); h uniformly from the H_alpha ball of
    radius ``h_radius``.
    """
    s = drift.spectrum
    n = s.dim
    x = x_scale * np.sqrt(s.eigenvalues) * rng.standard_normal((n_pairs, n))
    u = rng.standard_normal((n_pairs, n))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    u *= h_radius * rng.random((n_pairs, 1)) ** (1.0 / n)
    h = s.power(s.alpha) * u
    diff = h_alpha_norm(s, drift.evaluate(x + h) - drift.evaluate(x))
    lip = drift.lipschitz(x) if drift.state_dependent else drift.lipschitz()
    denom = lip * h_alpha_norm(s, h)
    ratio = np.where(denom > 0, diff / np.where(denom > 0, denom, 1.0), np.where(diff > 0, np.inf, 0.0))
    i = int(np.argmax(ratio))
    return LipschitzAudit(float(ratio[i]), n_pairs, x[i], h[i])
