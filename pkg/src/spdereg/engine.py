"""Trajectory sampling for dX = (AX + F(X)) dt + Q^alpha dW.

Two solvers share one noise model.  Per step of length dt and per mode k the
engine draws a correlated Gaussian pair

* eta_k, the exact stochastic-convolution increment
  int e^{(t_{m+1}-s)A} Q^alpha dW(s), variance lambda_k (1 - e^{-r_k dt});
* dW_k, the plain increment Q^alpha (W(t_{m+1}) - W(t_m)), variance
  lambda_k^{2 alpha} dt;

with covariance lambda_k^{2 alpha} (2/r_k)(1 - e^{-r_k dt/2}).  Both come
from the same two standard normals, so either solver can replay the other's
noise bit for bit.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from .drifts import DriftSpec, ShiftedDrift, eval_shifted
from .errors import DimMismatch, MissingDifferential, NoConvergence, NonFiniteState
from .rng import StreamKey
from .spectral import SpectrumQ, apply_semigroup, check_dim, h_alpha_norm, q_t_covariance

__all__ = [
    "StepLaw",
    "NoiseRecord",
    "PathBundle",
    "Step",
    "VariationalReport",
    "convolution_variance",
    "step_law",
    "sample_convolution_step",
    "exp_euler_steps",
    "solve_exp_euler",
    "solve_shifted",
    "solve_picard",
    "variational_bound_report",
    "decomposition_gap",
]

Array = np.ndarray
NoiseSource = Union["NoiseRecord", StreamKey, np.random.Generator]


def convolution_variance(s: SpectrumQ, dt: float) -> Array:
    """Per-mode variance of one stochastic-convolution increment."""
    return q_t_covariance(s, dt)


@dataclass(frozen=True, eq=False)
class StepLaw:
    dt: float
    decay: Array        # e^{dt A}
    conv_var: Array
    plain_var: Array
    cross_cov: Array
    drift_weight: Array  # int_0^dt e^{uA} du, used by the Picard quadrature
    a: Array
    b1: Array
    b2: Array


def step_law(s: SpectrumQ, dt: float) -> StepLaw:
    if dt <= 0:
        raise ValueError(f"step must be positive, got {dt}")
    r = s.rates
    half = -np.expm1(-0.5 * dt * r)            # 1 - e^{-r dt/2}
    conv = np.asarray(convolution_variance(s, dt), dtype=float)
    plain = dt * s.power(2.0 * s.alpha)
    cross = s.power(2.0 * s.alpha) * 2.0 / r * half
    a = np.sqrt(conv)
    b1 = np.divide(cross, a, out=np.zeros_like(cross), where=a > 0)
    b2 = np.sqrt(np.maximum(plain - b1 * b1, 0.0))
    return StepLaw(dt, np.exp(-0.5 * dt * r), conv, plain, cross, 2.0 / r * half, a, b1, b2)


def _draw(gen: np.random.Generator, law: StepLaw, n: int) -> Tuple[Array, Array]:
    z = gen.standard_normal((2, n, law.a.shape[0]))
    return law.a * z[0], law.b1 * z[0] + law.b2 * z[1]


def _generator(src: Union[StreamKey, np.random.Generator]) -> np.random.Generator:
    return src.generator() if isinstance(src, StreamKey) else src


def sample_convolution_step(s: SpectrumQ, dt: float, rng_stream: Union[StreamKey, np.random.Generator],
                            n: Optional[int] = None) -> Array:
    """One exact draw of the stochastic convolution over a step of length dt."""
    eta, _ = _draw(_generator(rng_stream), step_law(s, dt), 1 if n is None else n)
    return eta[0] if n is None else eta


@dataclass(frozen=True, eq=False)
class NoiseRecord:
    """Recorded increments, shape (M, n_paths, N) each."""

    conv: Array
    plain: Array
    step_grid: Array
    seed_path: Optional[str] = None

    @property
    def steps(self) -> int:
        return int(self.conv.shape[0])

    @property
    def n_paths(self) -> int:
        return int(self.conv.shape[1])

    @property
    def dt(self) -> float:
        return float(self.step_grid[1] - self.step_grid[0])

    @property
    def horizon(self) -> float:
        return float(self.step_grid[-1])

    @classmethod
    def draw(cls, s: SpectrumQ, T: float, steps: int, n_paths: int, key: StreamKey) -> "NoiseRecord":
        law = step_law(s, T / steps)
        gen = key.generator()
        conv = np.empty((steps, n_paths, s.dim))
        plain = np.empty_like(conv)
        for m in range(steps):
            conv[m], plain[m] = _draw(gen, law, n_paths)
        return cls(conv, plain, _grid(T, steps), str(key))

    def coarsen(self, s: SpectrumQ, factor: int = 2) -> "NoiseRecord":
        """The same Brownian path on a grid ``factor`` times coarser.

        Convolution increments compose as eta' = e^{dt A} eta_1 + eta_2,
        plain increments add.
        """
        if self.steps % factor:
            raise ValueError(f"{self.steps} steps do not coarsen by {factor}")
        decay = np.exp(-0.5 * self.dt * s.rates)
        conv = self.conv.reshape(self.steps // factor, factor, self.n_paths, -1)
        acc = conv[:, 0]
        for j in range(1, factor):
            acc = decay * acc + conv[:, j]
        plain = self.plain.reshape(self.steps // factor, factor, self.n_paths, -1).sum(axis=1)
        return NoiseRecord(acc, plain, self.step_grid[::factor], self.seed_path)

    def subset(self, paths: Union[slice, Sequence[int]]) -> "NoiseRecord":
        return NoiseRecord(self.conv[:, paths], self.plain[:, paths], self.step_grid, self.seed_path)


def _grid(T: float, steps: int) -> Array:
    return np.linspace(0.0, T, steps + 1)


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Trajectories on the step grid.

    ``states`` has shape (M+1, n, N); ``variational`` (M+1, n, d, N) when
    directions were requested.
    """

    times: Array
    states: Array
    noise: NoiseRecord
    method: str
    x0: Array
    variational: Optional[Array] = None
    directions: Optional[Array] = None
    info: Dict[str, object] = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return int(self.states.shape[1])

    def write_columns(self, fh: TextIO, paths: Optional[Sequence[int]] = None) -> None:
        """Long-format text table: path, time, mode, value."""
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "time", "mode", "value"])
        idx = range(self.n_paths) if paths is None else paths
        for p in idx:
            for m, t in enumerate(self.times):
                for k, v in enumerate(self.states[m, p]):
                    w.writerow([p, repr(float(t)), k, repr(float(v))])


@dataclass
class Step:
    """One exponential-Euler step, from (x_prev, y_prev) at t_m to (x, y) at t_{m+1}."""

    m: int
    t: float
    x_prev: Array
    x: Array
    eta: Array
    dw: Array
    y_prev: Optional[Array] = None
    y: Optional[Array] = None


class _Noise:
    """Uniform per-step access to a recorded or streamed noise source."""

    def __init__(self, s: SpectrumQ, law: StepLaw, steps: int, source: NoiseSource, n_paths: Optional[int]):
        self.law = law
        if isinstance(source, NoiseRecord):
            if source.steps != steps or not np.isclose(source.dt, law.dt, rtol=1e-12, atol=0):
                raise DimMismatch(f"noise record has {source.steps} steps of {source.dt}, "
                                  f"solver wants {steps} of {law.dt}")
            if source.conv.shape[2] != s.dim:
                raise DimMismatch("noise record and spectrum disagree on N")
            self.record, self.gen = source, None
            self.n = source.n_paths
            self.seed_path = source.seed_path
        else:
            if n_paths is None:
                raise ValueError("n_paths is required with a streamed noise source")
            self.record, self.gen = None, _generator(source)
            self.n = int(n_paths)
            self.seed_path = str(source) if isinstance(source, StreamKey) else None

    def __call__(self, m: int) -> Tuple[Array, Array]:
        if self.record is not None:
            return self.record.conv[m], self.record.plain[m]
        return _draw(self.gen, self.law, self.n)


DriftFn = Callable[[float, Array], Array]
JacFn = Callable[[float, Array, Array], Array]


def exp_euler_steps(s: SpectrumQ, drift_fn: DriftFn, x0: Array, T: float, steps: int,
                    noise: NoiseSource, n_paths: Optional[int] = None,
                    directions: Optional[Array] = None, jac_fn: Optional[JacFn] = None,
                    check_finite: bool = True) -> Iterator[Step]:
    """Yield exponential-Euler steps X_{m+1} = e^{dtA}(X_m + dt F(t_m, X_m)) + eta_m.

    With ``directions`` (d, N) the variational process
    Y_{m+1} = e^{dtA}(Y_m + dt DF(t_m, X_m) Y_m) is carried along, shape (n, d, N).
    """
    if T <= 0 or steps < 1:
        raise ValueError(f"need T > 0 and steps >= 1, got T={T}, steps={steps}")
    law = step_law(s, T / steps)
    src = _Noise(s, law, steps, noise, n_paths)
    x = np.broadcast_to(check_dim(s, x0, "x0"), (src.n, s.dim)).copy()
    y = None
    if directions is not None:
        if jac_fn is None:
            raise MissingDifferential("variational directions need a drift differential")
        d = check_dim(s, np.atleast_2d(directions), "directions")
        y = np.broadcast_to(d, (src.n,) + d.shape).copy()
    dt, decay = law.dt, law.decay
    for m in range(steps):
        t = m * dt
        eta, dw = src(m)
        fx = drift_fn(t, x)
        x_new = decay * (x + dt * fx) + eta
        y_new = None
        if y is not None:
            y_new = decay * (y + dt * jac_fn(t, x[:, None, :], y))
        if check_finite and not np.all(np.isfinite(x_new)):
            raise NonFiniteState(f"non-finite state at step {m + 1} (t={t + dt:.6g})")
        yield Step(m, t + dt, x, x_new, eta, dw, y, y_new)
        x, y = x_new, y_new


def _drift_fns(drift: DriftSpec, want_jac: bool) -> Tuple[DriftFn, Optional[JacFn]]:
    if want_jac and not drift.has_differential:
        raise MissingDifferential(f"drift {drift.name!r} has no differential")
    return (lambda t, x: drift.evaluate(x)), ((lambda t, x, y: drift.differential(x, y)) if want_jac else None)


def _collect(s: SpectrumQ, it: Iterator[Step], x0: Array, T: float, steps: int, n: int,
             directions: Optional[Array], method: str, seed_path: Optional[str]) -> PathBundle:
    states = np.empty((steps + 1, n, s.dim))
    conv = np.empty((steps, n, s.dim))
    plain = np.empty_like(conv)
    ys = None
    states[0] = x0
    if directions is not None:
        d = np.atleast_2d(directions)
        ys = np.empty((steps + 1, n) + d.shape)
        ys[0] = d
    for st in it:
        states[st.m + 1] = st.x
        conv[st.m], plain[st.m] = st.eta, st.dw
        if ys is not None:
            ys[st.m + 1] = st.y
    rec = NoiseRecord(conv, plain, _grid(T, steps), seed_path)
    return PathBundle(_grid(T, steps), states, rec, method, np.asarray(x0, dtype=float), ys,
                      None if directions is None else np.atleast_2d(directions))


def _n_paths(noise: NoiseSource, n_paths: Optional[int], x0: Array) -> int:
    if isinstance(noise, NoiseRecord):
        return noise.n_paths
    if n_paths is not None:
        return int(n_paths)
    return int(np.atleast_2d(x0).shape[0])


def _branch_crossings(drift: DriftSpec, states: Array) -> int:
    if not drift.branching:
        return 0
    inside = drift.membership(states)  # (M+1, n)
    return int(np.sum(np.any(inside != inside[:1], axis=0)))


def solve_exp_euler(s: SpectrumQ, drift: DriftSpec, x0: Array, T: float, steps: int,
                    noise: NoiseSource, directions: Optional[Array] = None,
                    n_paths: Optional[int] = None, check_finite: bool = True) -> PathBundle:
    """Exponential-Euler trajectories of the mild equation."""
    n = _n_paths(noise, n_paths, x0)
    drift_fn, jac_fn = _drift_fns(drift, directions is not None)
    it = exp_euler_steps(s, drift_fn, x0, T, steps, noise, n, directions, jac_fn, check_finite)
    key = noise.seed_path if isinstance(noise, NoiseRecord) else (str(noise) if isinstance(noise, StreamKey) else None)
    b = _collect(s, it, x0, T, steps, n, directions, "exp_euler", key)
    b.info["branch_crossings"] = _branch_crossings(drift, b.states)
    return b


def solve_shifted(s: SpectrumQ, drift: DriftSpec, anchor_x: Array, h0: Array, T: float, steps: int,
                  noise: NoiseSource, directions: Optional[Array] = None,
                  n_paths: Optional[int] = None) -> PathBundle:
    """Trajectories of Z_x(t, h): the equation with drift F(. + e^{tA} x), started at h0."""
    sd = ShiftedDrift(drift, anchor_x, s)
    if directions is not None and not drift.has_differential:
        raise MissingDifferential(f"drift {drift.name!r} has no differential")
    drift_fn = lambda t, z: eval_shifted(sd, t, z)  # noqa: E731
    jac_fn = (lambda t, z, y: drift.differential(z + sd.shift(t), y)) if directions is not None else None
    n = _n_paths(noise, n_paths, h0)
    it = exp_euler_steps(s, drift_fn, h0, T, steps, noise, n, directions, jac_fn)
    key = noise.seed_path if isinstance(noise, NoiseRecord) else (str(noise) if isinstance(noise, StreamKey) else None)
    b = _collect(s, it, h0, T, steps, n, directions, "exp_euler", key)
    b.info["anchor_x"] = np.asarray(anchor_x, dtype=float)
    return b


def decomposition_gap(s: SpectrumQ, x_run: PathBundle, z_run: PathBundle, anchor_x: Array) -> float:
    """sup over grid and paths of ||X(t) - (Z(t) + e^{tA} x)||."""
    shift = np.stack([apply_semigroup(s, t, anchor_x) for t in x_run.times])  # (M+1, N)
    gap = x_run.states - (z_run.states + shift[:, None, :])
    return float(np.max(np.linalg.norm(gap, axis=-1)))


def _picard_segment(s: SpectrumQ, drift_fn: DriftFn, law: StepLaw, x_start: Array, conv: Array,
                    t0: float, tol: float, max_iter: int) -> Tuple[Array, int, List[float]]:
    steps = conv.shape[0]
    free = np.empty((steps + 1,) + x_start.shape)
    free[0] = x_start
    for m in range(steps):
        free[m + 1] = law.decay * free[m] + conv[m]
    y = free.copy()
    residuals: List[float] = []
    for it in range(1, max_iter + 1):
        new = np.empty_like(y)
        new[0] = free[0]
        acc = np.zeros_like(x_start)
        for m in range(steps):
            acc = law.decay * acc + law.drift_weight * drift_fn(t0 + m * law.dt, y[m])
            new[m + 1] = free[m + 1] + acc
        res = float(np.max(np.linalg.norm(new - y, axis=-1)))
        y = new
        residuals.append(res)
        if not np.isfinite(res):
            raise NonFiniteState("Picard iterate became non-finite")
        if res < tol:
            return y, it, residuals
    raise NoConvergence(f"no convergence in {max_iter} iterations (residual {res:.3g})", res, max_iter)


def solve_picard(s: SpectrumQ, drift: DriftSpec, x0: Array, T: float, steps: int, noise: NoiseRecord,
                 tol: float = 1e-12, max_iter: int = 100, split: bool = True) -> PathBundle:
    """Fixed point of the discretized Volterra map on the step grid.

    The drift integral freezes F at the left endpoint of each step and
    integrates the semigroup kernel exactly over the step; the stochastic
    term is rebuilt from ``noise``.  If an interval fails to contract within
    ``max_iter`` iterations it is halved and solved piecewise.
    """
    if not isinstance(noise, NoiseRecord):
        raise TypeError("solve_picard replays a NoiseRecord")
    if noise.steps != steps or not np.isclose(noise.horizon, T):
        raise DimMismatch("noise record does not match the requested grid")
    law = step_law(s, T / steps)
    drift_fn = lambda t, x: drift.evaluate(x)  # noqa: E731
    x_start = np.broadcast_to(check_dim(s, x0, "x0"), (noise.n_paths, s.dim)).copy()
    states = np.empty((steps + 1, noise.n_paths, s.dim))
    segments, iterations, residuals = [], [], []

    def solve(i0: int, i1: int, xs: Array) -> Array:
        try:
            y, n_it, res = _picard_segment(s, drift_fn, law, xs, noise.conv[i0:i1], i0 * law.dt, tol, max_iter)
        except NoConvergence:
            if not split or i1 - i0 < 2:
                raise
            mid = (i0 + i1) // 2
            xm = solve(i0, mid, xs)
            return solve(mid, i1, xm)
        states[i0:i1 + 1] = y
        segments.append((i0, i1))
        iterations.append(n_it)
        residuals.append(res)
        return y[-1]

    solve(0, steps, x_start)
    info = {"segments": segments, "iterations": iterations, "residuals": residuals,
            "branch_crossings": _branch_crossings(drift, states)}
    return PathBundle(_grid(T, steps), states, noise, "picard", np.asarray(x0, dtype=float), info=info)


@dataclass(frozen=True)
class VariationalReport:
    max_ratio: float
    bound: float
    violated: bool
    ratio_at_zero: float


def variational_bound_report(bundle: PathBundle, s: SpectrumQ, L: float, slack: float = 0.01) -> VariationalReport:
    """max ||Y(t,h)||_alpha / ||h||_alpha against e^{T L}."""
    if bundle.variational is None:
        raise MissingDifferential("bundle carries no variational trajectories")
    h = h_alpha_norm(s, bundle.directions)                    # (d,)
    ratios = h_alpha_norm(s, bundle.variational) / h          # (M+1, n, d)
    bound = float(np.exp(bundle.times[-1] * L))
    mx = float(np.max(ratios))
    return VariationalReport(mx, bound, bool(mx > bound * (1 + slack)), float(np.max(ratios[0])))
