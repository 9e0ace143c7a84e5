"""Monte Carlo estimators for P(t)phi(x) = E[phi(X(t,x))] and its derivatives.

Samples are processed in fixed-size blocks, each with its own counter-based
stream, and block statistics are merged in block order.  Results depend on
the seed and the sample count only, never on the number of workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .drifts import DriftSpec, HeuristicMembership
from .engine import Step, exp_euler_steps, step_law
from .errors import (
    AlphaNotHalf,
    DegenerateTime,
    DirectionNotInHAlpha,
    MissingDifferential,
    TooManyModes,
)
from .observables import Observable
from .rng import BLOCK_SIZE, StreamKey, block_sizes, map_blocks
from .spectral import SpectrumQ, check_dim, h_alpha_norm, x_norm

__all__ = [
    "LabConfig",
    "SemigroupEstimate",
    "FDReport",
    "ProbeRow",
    "ProbeReport",
    "estimate_semigroup",
    "mehler_oracle",
    "mehler_gradient",
    "bel_gradient",
    "fd_gradient",
    "lipschitz_probe",
    "lipschitz_probe_x_directions",
    "pooled_stderr",
]

Array = np.ndarray


@dataclass(frozen=True, eq=False)
class LabConfig:
    """Simulation settings shared by all estimators.

    ``steps`` is the number of exponential-Euler steps over the horizon
    ``T``; shorter times reuse the same step length.
    """

    spectrum: SpectrumQ
    T: float
    steps: int
    seed: int = 0
    workers: int = 1
    block_size: int = BLOCK_SIZE

    @property
    def dt(self) -> float:
        return self.T / self.steps

    def grid_for(self, t: float) -> Tuple[int, float]:
        """Step count and step length that land exactly on t."""
        if not (0 < t <= self.T * (1 + 1e-12)):
            raise ValueError(f"t={t} must lie in (0, T={self.T}]")
        m = max(1, int(round(t / self.dt)))
        return m, t / m

    def grid_index(self, t: float) -> int:
        m, _ = self.grid_for(t)
        if abs(m * self.dt - t) > 1e-9 * self.T:
            raise ValueError(f"t={t} is not on the step grid (dt={self.dt})")
        return m


@dataclass(frozen=True)
class SemigroupEstimate:
    value: float
    stderr: float
    n_samples: int
    t: float
    x: Array
    seed: str
    extra: Dict[str, object] = field(default_factory=dict)


def pooled_stderr(*estimates: SemigroupEstimate) -> float:
    return float(math.sqrt(sum(e.stderr ** 2 for e in estimates)))


# -- streaming moments ---------------------------------------------------------

@dataclass
class _Moments:
    n: int
    mean: Array
    m2: Array

    @classmethod
    def of(cls, v: Array) -> "_Moments":
        v = np.asarray(v, dtype=float)
        mean = np.mean(v, axis=0)
        return cls(v.shape[0], mean, np.sum((v - mean) ** 2, axis=0))

    def merge(self, o: "_Moments") -> "_Moments":
        n = self.n + o.n
        d = o.mean - self.mean
        return _Moments(n, self.mean + d * (o.n / n), self.m2 + o.m2 + d * d * (self.n * o.n / n))

    @property
    def stderr(self) -> Array:
        return np.sqrt(self.m2 / (self.n - 1) / self.n)


def _reduce(parts: Sequence[_Moments]) -> _Moments:
    acc = parts[0]
    for p in parts[1:]:
        acc = acc.merge(p)
    return acc


def _drift_fn(drift: DriftSpec):
    return lambda t, x: drift.evaluate(x)


def _jac_fn(drift: DriftSpec):
    return lambda t, x, y: drift.differential(x, y)


def _run(cfg: LabConfig, drift: DriftSpec, x: Array, m: int, dt: float, key: StreamKey, n: int,
         record: Sequence[int] = ()) -> Tuple[Array, Dict[int, Array]]:
    """Terminal state after m steps plus states at the requested step indices."""
    want = set(record)
    seen: Dict[int, Array] = {}
    last = None
    for st in exp_euler_steps(cfg.spectrum, _drift_fn(drift), x, m * dt, m, key, n):
        if st.m + 1 in want:
            seen[st.m + 1] = st.x
        last = st.x
    return last, seen


# -- P(t) phi ------------------------------------------------------------------

def estimate_semigroup(cfg: LabConfig, drift: DriftSpec, phi: Observable, t: float, x: Array,
                       n_samples: int, purpose: str = "semigroup") -> SemigroupEstimate:
    """Mean of phi(X(t,x)) over independent trajectories."""
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    s = cfg.spectrum
    x = check_dim(s, x)
    m, dt = cfg.grid_for(t)
    key = StreamKey(cfg.seed, purpose)

    def block(n: int, k: StreamKey) -> _Moments:
        xt, _ = _run(cfg, drift, x, m, dt, k, n)
        return _Moments.of(phi(xt))

    mom = _reduce(map_blocks(block, n_samples, key, cfg.workers, cfg.block_size))
    value = float(mom.mean)
    assert abs(value) <= phi.sup_bound * (1 + 1e-12)
    return SemigroupEstimate(value, float(mom.stderr), n_samples, float(t), x, str(key))


# -- Gaussian oracle (F = 0, alpha = 1/2) ----------------------------------------

def _gauss_tensor(s: SpectrumQ, t: float, x: Array, modes: Sequence[int], quad_points: int):
    z, w = hermegauss(quad_points)
    w = w / math.sqrt(2.0 * math.pi)
    mean = math.exp(-0.5 * t) * x
    sd = np.sqrt(s.eigenvalues * -math.expm1(-t))
    grids = np.meshgrid(*([z] * len(modes)), indexing="ij")
    wgrid = np.ones(grids[0].shape)
    for g_axis in range(len(modes)):
        shape = [1] * len(modes)
        shape[g_axis] = quad_points
        wgrid = wgrid * w.reshape(shape)
    pts = np.broadcast_to(mean, (wgrid.size, s.dim)).copy()
    zs = np.stack([g.ravel() for g in grids], axis=1)
    for j, k in enumerate(modes):
        pts[:, k] += sd[k] * zs[:, j]
    return pts, wgrid.ravel(), zs, sd


def _oracle_checks(s: SpectrumQ, modes: Sequence[int], cap: int) -> None:
    if s.alpha != 0.5:
        raise AlphaNotHalf(f"the Gaussian oracle needs alpha = 1/2, got {s.alpha}")
    if len(modes) > cap:
        raise TooManyModes(f"{len(modes)} quadrature modes exceed the cap of {cap}")


def mehler_oracle(s: SpectrumQ, phi: Observable, t: float, x: Array, quadrature_modes: int = 1,
                  quad_points: int = 40, modes: Optional[Sequence[int]] = None, cap: int = 3) -> float:
    """E[phi(X(t,x))] for F = 0, alpha = 1/2 by Gauss-Hermite tensor quadrature.

    X(t,x) is Gaussian with mean e^{-t/2} x and variance lambda_k (1 - e^{-t})
    per mode.  ``phi`` must depend only on ``modes`` (default: the first
    ``quadrature_modes`` coordinates).
    """
    modes = list(range(quadrature_modes)) if modes is None else list(modes)
    _oracle_checks(s, modes, cap)
    x = check_dim(s, x)
    pts, w, _, _ = _gauss_tensor(s, t, x, modes, quad_points)
    return float(np.dot(w, phi(pts)))


def mehler_gradient(s: SpectrumQ, phi: Observable, t: float, x: Array, h: Array,
                    modes: Sequence[int], quad_points: int = 40, cap: int = 3) -> float:
    """d/de E[phi(X(t, x + e h))] at e = 0 by Gaussian integration by parts."""
    if t <= 0:
        raise DegenerateTime("the gradient oracle needs t > 0")
    modes = list(modes)
    _oracle_checks(s, modes, cap)
    x, h = check_dim(s, x), check_dim(s, h, "h")
    pts, w, zs, sd = _gauss_tensor(s, t, x, modes, quad_points)
    f = phi(pts)
    decay = math.exp(-0.5 * t)
    return float(sum(decay * h[k] * np.dot(w, f * zs[:, j]) / sd[k] for j, k in enumerate(modes)))


# -- Bismut-Elworthy-Li ------------------------------------------------------------

def _bel_integrand(step: Step, advance: Callable[[Array, Array], Array]) -> Array:
    """Weight paired with the convolution increment of ``step``.

    ``step.y`` is the variational state at the end of the step, which the
    recursion fixes from information at its start; it is therefore
    non-anticipating.
    """
    return step.y


def bel_gradient(cfg: LabConfig, drift: DriftSpec, phi: Observable, t: float, x: Array, h: Array,
                 n_samples: int, scheme: str = "exact", purpose: str = "bel") -> SemigroupEstimate:
    """Estimate <D_alpha P(t)phi(x), h>_alpha without differentiating phi.

    ``scheme="exact"`` pairs each convolution increment eta_m with
    Q_dt^{-1} Y_{m+1} / m, which is unbiased for the discrete chain at any
    step size.  ``scheme="ito"`` is the left-point sum
    (1/t) sum_m <Y(t_m), dW_m>_alpha over plain increments; it carries an
    O(dt) bias that grows with the stiffness of the modes.
    """
    if not drift.has_differential:
        raise MissingDifferential(f"drift {drift.name!r} has no differential")
    if scheme not in ("exact", "ito"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if t < cfg.dt * (1 - 1e-9):
        raise DegenerateTime(f"t={t} is below one step ({cfg.dt})")
    s = cfg.spectrum
    x, h = check_dim(s, x), check_dim(s, h, "h")
    m, dt = cfg.grid_for(t)
    law = step_law(s, dt)
    inv_q = 1.0 / law.conv_var
    w2a = s.power(-2.0 * s.alpha)
    jac = _jac_fn(drift)
    key = StreamKey(cfg.seed, purpose)

    def advance(xs: Array, ys: Array) -> Array:
        return law.decay * (ys + dt * drift.differential(xs[:, None, :], ys))

    def block(n: int, k: StreamKey) -> _Moments:
        acc = np.zeros(n)
        last = None
        for st in exp_euler_steps(s, _drift_fn(drift), x, m * dt, m, k, n, h[None, :], jac):
            if scheme == "exact":
                acc += np.sum(_bel_integrand(st, advance)[:, 0, :] * st.eta * inv_q, axis=-1)
            else:
                acc += np.sum(w2a * st.y_prev[:, 0, :] * st.dw, axis=-1)
            last = st.x
        weight = acc / m if scheme == "exact" else acc / t
        return _Moments.of(phi(last) * weight)

    mom = _reduce(map_blocks(block, n_samples, key, cfg.workers, cfg.block_size))
    return SemigroupEstimate(float(mom.mean), float(mom.stderr), n_samples, float(t), x, str(key),
                             {"scheme": scheme, "h_norm_alpha": float(h_alpha_norm(s, h))})


# -- finite differences --------------------------------------------------------------

@dataclass(frozen=True)
class FDReport:
    estimates: List[SemigroupEstimate]
    second_differences: List[float]
    curvature: List[bool]
    richardson: List[float]

    def __iter__(self):
        return iter(self.estimates)

    def __getitem__(self, i):
        return self.estimates[i]

    def __len__(self):
        return len(self.estimates)


def fd_gradient(cfg: LabConfig, drift: DriftSpec, phi: Observable, t: float, x: Array, h: Array,
                eps_ladder: Sequence[float], n_samples: int, shared_noise: bool = True,
                purpose: str = "fd") -> FDReport:
    """(P(t)phi(x + eps h) - P(t)phi(x)) / eps for each eps.

    With ``shared_noise`` every shifted start replays the same noise (common
    random numbers).  The second difference phi(x+2 eps h) - 2 phi(x+eps h)
    + phi(x) is reported too; it is flagged as curvature when it exceeds half
    the first difference.
    """
    eps = np.asarray(eps_ladder, dtype=float)
    if eps.size == 0 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise ValueError("eps_ladder must be positive and strictly decreasing")
    s = cfg.spectrum
    x, h = check_dim(s, x), check_dim(s, h, "h")
    m, dt = cfg.grid_for(t)
    key = StreamKey(cfg.seed, purpose)

    def sub(k: StreamKey, tag: str) -> StreamKey:
        return k if shared_noise else k.derive(tag)

    def block(n: int, k: StreamKey) -> _Moments:
        f0 = phi(_run(cfg, drift, x, m, dt, sub(k, "base"), n)[0])
        cols = []
        for i, e in enumerate(eps):
            f1 = phi(_run(cfg, drift, x + e * h, m, dt, sub(k, f"e{i}"), n)[0])
            f2 = phi(_run(cfg, drift, x + 2 * e * h, m, dt, sub(k, f"2e{i}"), n)[0])
            cols.append(np.stack([(f1 - f0) / e, f2 - 2 * f1 + f0, f1 - f0], axis=-1))
        return _Moments.of(np.stack(cols, axis=1))  # (n, L, 3)

    mom = _reduce(map_blocks(block, n_samples, key, cfg.workers, cfg.block_size))
    ests, d2s, flags = [], [], []
    for i, e in enumerate(eps):
        g, se = float(mom.mean[i, 0]), float(mom.stderr[i, 0])
        ests.append(SemigroupEstimate(g, se, n_samples, float(t), x, str(key),
                                      {"eps": float(e), "shared_noise": shared_noise}))
        d2 = float(mom.mean[i, 1])
        d2s.append(d2)
        flags.append(bool(abs(d2) > 0.5 * abs(float(mom.mean[i, 2]))))
    rich = []
    for i in range(len(eps) - 1):
        q = eps[i] / eps[i + 1]
        rich.append(float((q * ests[i + 1].value - ests[i].value) / (q - 1)))
    return FDReport(ests, d2s, flags, rich)


# -- Lipschitz probes ----------------------------------------------------------------

@dataclass(frozen=True)
class ProbeRow:
    t: float
    direction: int
    h_norm: float
    h_norm_x: float
    delta: float
    stderr: float
    ratio: float
    ratio_x: float
    bound: float
    violated: bool

    @property
    def slack_fraction(self) -> float:
        return 4 * self.stderr / self.bound if self.bound > 0 and np.isfinite(self.bound) else float("nan")


@dataclass(frozen=True)
class ProbeReport:
    rows: List[ProbeRow]
    n_samples: int
    lipschitz: float
    normalization: str
    constants: Dict[str, object] = field(default_factory=dict)
    bound_asserted: bool = True

    @property
    def violations(self) -> int:
        return sum(r.violated for r in self.rows)

    @property
    def max_slack_fraction(self) -> float:
        vals = [r.slack_fraction for r in self.rows if r.h_norm > 0 and np.isfinite(r.slack_fraction)]
        return max(vals) if vals else 0.0

    @property
    def max_ratio_to_bound(self) -> float:
        vals = [abs(r.delta) / r.bound for r in self.rows if r.bound > 0 and np.isfinite(r.bound)]
        return max(vals) if vals else float("nan")


def _check_directions(s: SpectrumQ, directions: Array) -> Array:
    d = check_dim(s, np.atleast_2d(np.asarray(directions, dtype=float)), "directions")
    nonzero = x_norm(d) > 0
    if s.dim >= 2 and np.any(nonzero):
        inside = HeuristicMembership(s)(d[nonzero])
        if not np.all(inside):
            raise DirectionNotInHAlpha(f"{int(np.sum(~inside))} direction(s) rejected by the membership heuristic")
    return d


def _probe_moments(cfg: LabConfig, drift: DriftSpec, phi: Observable, ts: Sequence[float], x: Array,
                   d: Array, n_min: int, n_max: int, bounds: Optional[Array], purpose: str,
                   slack: float = 4.0, target: float = 0.1) -> _Moments:
    """Merge blocks of CRN differences phi(X(t,x+h)) - phi(X(t,x)) until
    slack * stderr <= target * bound for every probe (or ``n_max`` is hit).

    The stopping point is decided block by block in index order, so it does
    not depend on the worker count.
    """
    idx = [cfg.grid_index(t) for t in ts]
    m = max(idx)
    key = StreamKey(cfg.seed, purpose)

    def block(n: int, k: StreamKey) -> _Moments:
        _, base = _run(cfg, drift, x, m, cfg.dt, k, n, idx)
        f0 = np.stack([phi(base[i]) for i in idx], axis=1)  # (n, T)
        diffs = []
        for h in d:
            _, sh = _run(cfg, drift, x + h, m, cfg.dt, k, n, idx)
            diffs.append(np.stack([phi(sh[i]) for i in idx], axis=1) - f0)
        return _Moments.of(np.stack(diffs, axis=2))  # (n, T, J)

    sizes = block_sizes(n_max, cfg.block_size)
    acc: Optional[_Moments] = None
    b = 0
    while b < len(sizes):
        chunk = list(range(b, min(len(sizes), b + max(1, cfg.workers))))
        parts = _blocks(block, [(sizes[i], key.with_block(i)) for i in chunk], cfg.workers)
        for p in parts:
            acc = p if acc is None else acc.merge(p)
            b += 1
            if acc.n >= n_min and acc.n >= 2:
                if bounds is None:
                    return acc
                ok = np.all((slack * acc.stderr <= target * bounds) | ~np.isfinite(bounds) | (bounds == 0))
                if ok:
                    return acc
    return acc


def _blocks(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(n, k) for n, k in jobs]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


def _rows(ts, d, mom, norms, norms_x, sup, bounds, slack=4.0) -> List[ProbeRow]:
    rows = []
    for i, t in enumerate(ts):
        for j in range(d.shape[0]):
            delta, se = float(mom.mean[i, j]), float(mom.stderr[i, j])
            bound = float(bounds[i, j]) if bounds is not None else float("nan")
            ratio = abs(delta) / (sup * norms[j]) if norms[j] > 0 else 0.0
            ratio_x = abs(delta) / (sup * norms_x[j]) if norms_x[j] > 0 else 0.0
            violated = bool(np.isfinite(bound) and abs(delta) - slack * se > bound)
            rows.append(ProbeRow(float(t), j, float(norms[j]), float(norms_x[j]), delta, se,
                                 ratio, ratio_x, bound, violated))
    return rows


def lipschitz_probe(cfg: LabConfig, drift: DriftSpec, phi: Observable, ts, x: Array, directions: Array,
                    n_samples: int = BLOCK_SIZE, n_max: Optional[int] = None,
                    purpose: str = "probe") -> ProbeReport:
    """Audit |P(t)phi(x+h) - P(t)phi(x)| <= e^{L T} / sqrt(t) ||phi||_inf ||h||_alpha.

    L is the drift's H_alpha constant, evaluated at x when it depends on the
    base point.  Sampling grows from ``n_samples`` until four standard
    errors are below a tenth of every bound, up to ``n_max``.
    """
    s = cfg.spectrum
    ts = [float(t) for t in np.atleast_1d(ts)]
    x = check_dim(s, x)
    d = _check_directions(s, directions)
    L = float(drift.lipschitz(x)) if drift.state_dependent else float(drift.lipschitz())
    norms = h_alpha_norm(s, d)
    factor = math.exp(L * cfg.T) * phi.sup_bound
    bounds = np.array([[factor / math.sqrt(t) * nj for nj in norms] for t in ts])
    mom = _probe_moments(cfg, drift, phi, ts, x, d, n_samples, n_max or n_samples, bounds, purpose)
    rows = _rows(ts, d, mom, norms, x_norm(d), phi.sup_bound, bounds)
    return ProbeReport(rows, mom.n, L, "alpha", {"exp_LT": math.exp(L * cfg.T)})


def lipschitz_probe_x_directions(cfg: LabConfig, drift: DriftSpec, phi: Observable, ts, x: Array,
                                 directions: Array, n_samples: int = BLOCK_SIZE,
                                 n_max: Optional[int] = None, purpose: str = "probe_x") -> ProbeReport:
    """Modulus probe for drifts with Q^{-alpha} F Lipschitz (constant ``k_alpha``).

    alpha < 1/4: X-norm normalization, reported against C / sqrt(t) with
    C^2 = 2 max(B, T L^2 e^{2LT}) and B = sup_k int_0^T ||Q^{-alpha} e^{sA} e_k||^2 ds
    measured on the spectrum.  Not asserted.
    1/4 <= alpha < 1/2: X-norm normalization, no explicit constant.
    alpha = 1/2: H_{1/2} normalization against e^{L T}/sqrt(t) lambda_1^{1/2}.
    """
    s = cfg.spectrum
    a = s.alpha
    if drift.k_alpha is None:
        raise ValueError(f"drift {drift.name!r} declares no Lipschitz constant for Q^-alpha F")
    ts = [float(t) for t in np.atleast_1d(ts)]
    x = check_dim(s, x)
    d = np.atleast_2d(check_dim(s, np.asarray(directions, dtype=float), "directions"))
    L = float(s.eigenvalues[0] ** a * drift.k_alpha)
    T = cfg.T
    norms_x = x_norm(d)
    consts: Dict[str, object] = {"L": L}
    asserted = False
    bounds: Optional[Array]
    if a == 0.5:
        norms = h_alpha_norm(s, d)
        c = math.exp(L * T) * math.sqrt(s.eigenvalues[0])
        bounds = np.array([[c / math.sqrt(t) * phi.sup_bound * nj for nj in norms] for t in ts])
        consts["constant"] = c
        asserted = True
        norm_name = "half"
    elif a < 0.25:
        norms = norms_x
        B = float(np.max(s.power(1.0 - 4.0 * a) * -np.expm1(-T * s.rates)))
        shape = T ** ((1 - 4 * a) / (1 - 2 * a)) * (2 * a - 1) / (4 * a - 1)
        C = math.sqrt(2.0 * max(B, T * L * L * math.exp(2 * L * T)))
        consts.update({"C_alpha": B / shape, "B": B, "C": C})
        bounds = np.array([[C / math.sqrt(t) * phi.sup_bound * nj for nj in norms] for t in ts])
        norm_name = "x"
    else:
        norms = norms_x
        bounds = None
        norm_name = "x"
    mom = _probe_moments(cfg, drift, phi, ts, x, d, n_samples, n_max or n_samples, bounds, purpose)
    rows = _rows(ts, d, mom, norms, norms_x, phi.sup_bound, bounds)
    return ProbeReport(rows, mom.n, L, norm_name, consts, asserted)
