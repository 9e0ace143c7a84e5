"""Acceptance checks shared by ``spdereg verify`` and the test suite.

Each ``criterion_N`` returns a :class:`CriterionResult`; none of them raise
on a failed check.  ``level="full"`` uses the stated sample sizes,
``"smoke"`` a reduced scale that finishes in about a minute.
"""
from __future__ import annotations

import contextlib
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence
from unittest import mock

import numpy as np
from scipy import stats

from . import engine, lab
from .config import build_drift, finite_rank_example
from .covariance import KernelSpec, build_frame
from .drifts import always_in, drift_gradient_type, drift_projection, quadratic_potential, zero_drift
from .engine import NoiseRecord, exp_euler_steps, solve_exp_euler, solve_picard, solve_shifted, decomposition_gap, \
    variational_bound_report
from .lab import LabConfig, bel_gradient, estimate_semigroup, fd_gradient, lipschitz_probe, \
    lipschitz_probe_x_directions, mehler_gradient
from .observables import sin_coord, sin_linear, tanh_coord
from .rng import StreamKey
from .spectral import check_hypothesis_pd, h_alpha_norm, make_spectrum, power_spectrum, q_t_covariance

__all__ = ["CriterionResult", "CRITERIA", "run_criterion", "verify_suite", "mutation", "MUTATIONS"]

SOLVER_TOL = 1e-10
SEED = 20240611


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    observed: str
    expected: str
    seconds: float = 0.0
    details: Dict[str, object] = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"[{tag}] criterion {self.number:>2} {self.title}: observed {self.observed}; "
                f"expected {self.expected} ({self.seconds:.1f}s)")


@dataclass(frozen=True)
class _Scale:
    c1: int
    c2: int
    c3_paths: int
    c4_paths: int
    c5_paths: int
    c6: int
    c7_min: int
    c7_max: int
    c8_mc: int


SCALES = {
    "full": _Scale(c1=100_000, c2=100_000, c3_paths=32, c4_paths=64, c5_paths=1000, c6=100_000,
                   c7_min=4096, c7_max=1 << 18, c8_mc=100_000),
    "smoke": _Scale(c1=100_000, c2=20_000, c3_paths=8, c4_paths=16, c5_paths=200, c6=40_000,
                    c7_min=4096, c7_max=1 << 16, c8_mc=20_000),
}


def _timed(fn):
    def wrapper(*args, **kwargs) -> CriterionResult:
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _wiener_frame(modes: int, grid: int = 128):
    return build_frame(KernelSpec("wiener"), grid, modes, 0.5)


def example_drifts(modes: int, grid: int = 128, membership: str = "heuristic"):
    """The six example drifts at truncation ``modes``: name -> (spectrum, drift, x0)."""
    frame = _wiener_frame(modes, grid)
    s_frame = frame.spectrum
    s_proj = power_spectrum(1.0, 2.0, modes, 0.25)
    s_zero = power_spectrum(1.0, 2.0, modes, 0.0)
    specs = {
        "projection": (s_proj, None, {"kind": "projection", "beta": 0.5, "pi": [1.0]}),
        "composition_right": (s_frame, frame, {"kind": "composition_right", "exponent": 2.0}),
        "composition_left": (s_frame, frame, {"kind": "composition_left", "amplitude": 1.0, "frequency": 1.0}),
        "gradient_type": (s_zero, None, {"kind": "gradient_type", "potential": "logcosh", "c": [0.5]}),
        "cahn_hilliard": (s_zero, None, {"kind": "cahn_hilliard", "amplitude": 1.0}),
        "finite_rank": (s_frame, frame, {"kind": "finite_rank", "rank": 2, "amplitude": 1.0}),
    }
    out = {}
    for name, (s, fr, spec) in specs.items():
        spec = dict(spec, membership=membership)
        out[name] = (s, build_drift(spec, s, fr), np.sqrt(s.eigenvalues))
    return out


# -- 1 -------------------------------------------------------------------------------

@_timed
def criterion_1(level: str = "full", workers: int = 1) -> CriterionResult:
    """Linear Gaussian oracle, single-threaded."""
    n = SCALES[level].c1
    s = make_spectrum([1.0], 0.5)
    cfg = LabConfig(s, 1.0, 10, seed=SEED, workers=1)
    t0 = time.perf_counter()
    est = estimate_semigroup(cfg, zero_drift(s), sin_coord(0), 1.0, np.array([1.0]), n)
    elapsed = time.perf_counter() - t0
    exact = math.exp(-(1 - math.exp(-1)) / 2) * math.sin(math.exp(-0.5))
    z = (est.value - exact) / est.stderr
    ok = abs(z) <= 4 and elapsed < 10
    return CriterionResult(1, "linear Gaussian oracle", ok,
                           f"{est.value:.6f} (z={z:+.2f}, {elapsed:.2f}s)",
                           f"{exact:.6f} within 4 stderr, under 10s",
                           details={"value": est.value, "stderr": est.stderr, "exact": exact, "z": z,
                                    "runtime": elapsed})


# -- 2 -------------------------------------------------------------------------------

@_timed
def criterion_2(level: str = "full", workers: int = 1) -> CriterionResult:
    """Per-mode law of the stochastic convolution at t = 0.25 from the engine."""
    n = SCALES[level].c2
    t, steps = 0.25, 5
    worst_z, worst_p, rows = 0.0, 1.0, []
    for alpha in (0.0, 0.25, 0.5):
        s = power_spectrum(1.0, 2.0, 4, alpha)
        *_, last = exp_euler_steps(s, lambda tt, x: np.zeros_like(x), np.zeros(s.dim), t, steps,
                                   StreamKey(SEED, f"convolution-law:{alpha}"), n)
        sample = last.x
        target = q_t_covariance(s, t)
        var = np.var(sample, axis=0, ddof=1)
        se = target * math.sqrt(2.0 / (n - 1))
        z = (var - target) / se
        p = [stats.kstest(sample[:, k] / math.sqrt(target[k]), "norm").pvalue for k in range(s.dim)]
        worst_z = max(worst_z, float(np.max(np.abs(z))))
        worst_p = min(worst_p, float(min(p)))
        rows.append({"alpha": alpha, "z": z.tolist(), "ks_p": p})
    ok = worst_z <= 3 and worst_p > 1e-3
    return CriterionResult(2, "stochastic convolution law", ok,
                           f"max |z| = {worst_z:.2f}, min KS p = {worst_p:.3g}",
                           "|z| <= 3 and KS p > 1e-3 on every mode", details={"rows": rows})


# -- 3 -------------------------------------------------------------------------------

@_timed
def criterion_3(level: str = "full", workers: int = 1) -> CriterionResult:
    """X(t,x) against Z_x(t,0) + e^{tA}x with shared noise."""
    n = SCALES[level].c3_paths
    gaps = {}
    for name, (s, drift, x0) in example_drifts(32).items():
        noise = NoiseRecord.draw(s, 1.0, 200, n, StreamKey(SEED, f"decomposition:{name}"))
        x_run = solve_exp_euler(s, drift, x0, 1.0, 200, noise)
        z_run = solve_shifted(s, drift, x0, np.zeros(s.dim), 1.0, 200, noise)
        gaps[name] = decomposition_gap(s, x_run, z_run, x0)
    worst = max(gaps.values())
    return CriterionResult(3, "mild-solution decomposition", worst < 10 * SOLVER_TOL,
                           f"max gap {worst:.2e}", f"< {10 * SOLVER_TOL:.0e} on all six drifts",
                           details={"gaps": gaps})


# -- 4 -------------------------------------------------------------------------------

@_timed
def criterion_4(level: str = "full", workers: int = 1) -> CriterionResult:
    """Picard against exponential Euler on one Brownian path per sample, four grids."""
    n = SCALES[level].c4_paths
    s = power_spectrum(1.0, 2.0, 16, 0.25)
    drift = drift_projection(s, 0.5, np.ones(16), membership=always_in)
    x0 = np.sqrt(s.eigenvalues)
    m0 = 50
    records = [NoiseRecord.draw(s, 1.0, 8 * m0, n, StreamKey(SEED, "cross-solver"))]
    for _ in range(3):
        records.append(records[-1].coarsen(s))
    gaps = []
    for rec in reversed(records):
        a = solve_exp_euler(s, drift, x0, 1.0, rec.steps, rec)
        b = solve_picard(s, drift, x0, 1.0, rec.steps, rec, tol=1e-12)
        gaps.append(float(np.max(np.linalg.norm(a.states - b.states, axis=-1))))
    ratios = [gaps[i] / gaps[i + 1] for i in range(3)]
    ok = all(1.6 <= r <= 2.5 for r in ratios)
    return CriterionResult(4, "cross-solver convergence", ok,
                           "gap ratios " + ", ".join(f"{r:.3f}" for r in ratios),
                           "each ratio in [1.6, 2.5]",
                           details={"steps": [r.steps for r in reversed(records)], "gaps": gaps, "ratios": ratios})


# -- 5 -------------------------------------------------------------------------------

def _random_h_alpha(s, count: int, norm: float, tag: str) -> np.ndarray:
    gen = StreamKey(SEED, tag).generator()
    u = gen.standard_normal((count, s.dim)) / np.arange(1, s.dim + 1)
    d = s.power(s.alpha) * u
    return norm * d / h_alpha_norm(s, d)[:, None]


@_timed
def criterion_5(level: str = "full", workers: int = 1) -> CriterionResult:
    """Variational process growth against e^{T L}."""
    n = SCALES[level].c5_paths
    s_proj = power_spectrum(1.0, 2.0, 16, 0.25)
    frame = _wiener_frame(16)
    cases = {
        "projection": (s_proj, drift_projection(s_proj, 0.5, np.ones(16))),
        "finite_rank": (frame.spectrum, finite_rank_example(frame, 2, 1.0)),
    }
    out, ok = {}, True
    for name, (s, drift) in cases.items():
        dirs = _random_h_alpha(s, 10, 1.0, f"variational:{name}")
        bundle = solve_exp_euler(s, drift, np.sqrt(s.eigenvalues), 1.0, 100,
                                 StreamKey(SEED, f"variational:{name}"), directions=dirs, n_paths=n)
        rep = variational_bound_report(bundle, s, float(drift.lipschitz()), slack=0.01)
        out[name] = {"max_ratio": rep.max_ratio, "bound": rep.bound}
        ok &= not rep.violated
    obs = ", ".join(f"{k} {v['max_ratio']:.4f} vs {v['bound']:.4f}" for k, v in out.items())
    return CriterionResult(5, "variational bound", ok, obs, "max ratio <= e^{TL} * 1.01", details=out)


# -- 6 -------------------------------------------------------------------------------

def _bel_fd_cases():
    s_lin = make_spectrum([1.0], 0.5)
    s_grad = power_spectrum(1.0, 2.0, 4, 0.0)
    grad, hess, lip = quadratic_potential(np.full(4, 0.5))
    w = np.array([1.0, 0.5, 0.3, 0.2])
    return {
        "linear": (LabConfig(s_lin, 1.0, 16, seed=SEED), zero_drift(s_lin), sin_coord(0),
                   np.zeros(1), np.ones(1)),
        "gradient_type": (LabConfig(s_grad, 1.0, 16, seed=SEED), drift_gradient_type(s_grad, grad, lip, hess),
                          sin_linear(w), np.zeros(4), np.array([1.0, 0.5, 0.25, 0.125])),
    }


@_timed
def criterion_6(level: str = "full", workers: int = 8) -> CriterionResult:
    """BEL against common-random-number finite differences."""
    n = SCALES[level].c6
    rows, ok = [], True
    t0 = time.perf_counter()
    for name, (cfg, drift, phi, x, h) in _bel_fd_cases().items():
        cfg = LabConfig(cfg.spectrum, cfg.T, cfg.steps, cfg.seed, workers)
        for t in (0.25, 1.0):
            b = bel_gradient(cfg, drift, phi, t, x, h, n)
            f = fd_gradient(cfg, drift, phi, t, x, h, [1e-2], n)[0]
            z = (b.value - f.value) / lab.pooled_stderr(b, f)
            rows.append({"case": name, "t": t, "bel": b.value, "fd": f.value, "z": z})
            ok &= abs(z) <= 4
    elapsed = time.perf_counter() - t0
    worst = max(abs(r["z"]) for r in rows)
    return CriterionResult(6, "BEL vs finite differences", ok and elapsed < 120,
                           f"max |z| = {worst:.2f} ({elapsed:.1f}s, workers={workers})",
                           "|z| <= 4 at t in {0.25, 1}, under 2 min",
                           details={"rows": rows, "runtime": elapsed, "workers": workers})


# -- 7 -------------------------------------------------------------------------------

@_timed
def criterion_7(level: str = "full", workers: int = 1) -> CriterionResult:
    """Two-point modulus against e^{LT}/sqrt(t) ||phi|| ||h||_alpha."""
    sc = SCALES[level]
    ts = (0.1, 0.5, 1.0)
    all_drifts = example_drifts(16)
    summary, ok = {}, True
    for name in ("projection", "composition_right", "composition_left"):
        s, drift, x0 = all_drifts[name]
        # near the origin L(x) stays moderate for the state-dependent drift
        x0 = 0.05 * x0
        phi = sin_linear(1.0 / np.arange(1, s.dim + 1))
        cfg = LabConfig(s, 1.0, 20, seed=SEED, workers=workers)
        dirs = _random_h_alpha(s, 20, 0.25, f"probe:{name}")
        rep = lipschitz_probe(cfg, drift, phi, ts, x0, dirs, n_samples=sc.c7_min, n_max=sc.c7_max,
                              purpose=f"probe:{name}")
        slack = rep.max_slack_fraction
        summary[name] = {"violations": rep.violations, "slack_fraction": slack, "n": rep.n_samples,
                         "L": rep.lipschitz, "max_ratio_to_bound": rep.max_ratio_to_bound}
        ok &= rep.violations == 0 and slack <= 0.1
    obs = "; ".join(f"{k}: {v['violations']} violations, slack {v['slack_fraction']:.3f}, n={v['n']}"
                    for k, v in summary.items())
    return CriterionResult(7, "semigroup modulus audit", ok, obs,
                           "0 violations and 4 stderr <= 10% of each bound", details=summary)


# -- 8 -------------------------------------------------------------------------------

@_timed
def criterion_8(level: str = "full", workers: int = 1) -> CriterionResult:
    """Modulus along e_N per X-norm grows with N; per H_{1/2}-norm it stays bounded."""
    t = 0.5
    moduli, half, mc = {}, {}, {}
    ok_mc = True
    for n_modes in (8, 32):
        s = power_spectrum(1.0, 2.0, n_modes, 0.5)
        k = n_modes - 1
        phi = tanh_coord(k, 1.0 / math.sqrt(s.eigenvalues[k]))
        e = np.zeros(n_modes)
        e[k] = 1.0
        g = abs(mehler_gradient(s, phi, t, np.zeros(n_modes), e, [k], quad_points=80))
        moduli[n_modes] = g
        half[n_modes] = g / float(h_alpha_norm(s, e))
        cfg = LabConfig(s, 1.0, 20, seed=SEED, workers=workers)
        est = bel_gradient(cfg, zero_drift(s), phi, t, np.zeros(n_modes), e, SCALES[level].c8_mc,
                           purpose=f"anisotropy:{n_modes}")
        mc[n_modes] = {"value": est.value, "stderr": est.stderr, "z": (est.value - g) / est.stderr}
        ok_mc &= abs(mc[n_modes]["z"]) <= 4
    growth = moduli[32] / moduli[8]
    bound = math.sqrt(1.0) / math.sqrt(t)
    ok = growth >= 4.0 and all(v <= bound for v in half.values()) and ok_mc
    return CriterionResult(8, "anisotropy at alpha = 1/2", ok,
                           f"X-modulus growth {growth:.4f}, H_1/2 moduli "
                           + ", ".join(f"{v:.4f}" for v in half.values())
                           + ", MC z " + ", ".join(f"{v['z']:+.2f}" for v in mc.values()),
                           f"growth >= 4, H_1/2 moduli <= {bound:.4f}, MC within 4 stderr",
                           details={"moduli_x": moduli, "moduli_half": half, "mc": mc})


# -- 9 -------------------------------------------------------------------------------

def criterion_9_alpha(alpha: float, modes: int = 4096) -> Dict[str, object]:
    rep = check_hypothesis_pd(power_spectrum(1.0, 2.0, modes, alpha), 0.5, 1.0, rtol=0.01)
    return {"alpha": alpha, "value": rep.integral_value, "relative_change": rep.relative_change,
            "converged": rep.converged}


@_timed
def criterion_9(level: str = "full", workers: int = 1) -> CriterionResult:
    """Trace-integral hypothesis with lambda_k = k^-2, gamma = 1/2, N = 4096 vs 2048."""
    rows = [criterion_9_alpha(a) for a in (0.0, 0.25, 0.5)]
    ok = all(r["converged"] for r in rows)
    return CriterionResult(9, "trace-integral convergence", ok,
                           ", ".join(f"alpha={r['alpha']}: change {r['relative_change']:.4f}" for r in rows),
                           "relative change < 0.01 for every alpha", details={"rows": rows})


# -- 10 ------------------------------------------------------------------------------

def _late_integrand(step, advance):
    return advance(step.x, step.y)


def _full_variance(s, dt):
    return np.broadcast_to(s.eigenvalues, (s.dim,)).astype(float)


MUTATIONS: Dict[str, Callable[[], contextlib.AbstractContextManager]] = {
    "bel_late_integrand": lambda: mock.patch.object(lab, "_bel_integrand", _late_integrand),
    "full_variance": lambda: mock.patch.object(engine, "convolution_variance", _full_variance),
}


@contextlib.contextmanager
def mutation(name: str) -> Iterator[None]:
    """Temporarily install one of the deliberate bugs."""
    with MUTATIONS[name]():
        yield


@_timed
def criterion_10(level: str = "full", workers: int = 1) -> CriterionResult:
    """Each deliberate bug must make some criterion fail."""
    caught = {}
    with mutation("bel_late_integrand"):
        r6 = criterion_6(level, workers)
    caught["bel_late_integrand"] = not r6.passed
    with mutation("full_variance"):
        r2 = criterion_2(level, workers)
    caught["full_variance"] = not r2.passed
    ok = all(caught.values())
    return CriterionResult(10, "mutation sensitivity", ok,
                           f"late BEL integrand -> criterion 6 {'fails' if caught['bel_late_integrand'] else 'passes'} "
                           f"({r6.observed}); full variance -> criterion 2 "
                           f"{'fails' if caught['full_variance'] else 'passes'} ({r2.observed})",
                           "both mutations detected", details=caught)


CRITERIA: Dict[int, Callable[..., CriterionResult]] = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
    6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10,
}


def run_criterion(number: int, level: str = "full", workers: int = 1) -> CriterionResult:
    if level not in SCALES:
        raise ValueError(f"unknown level {level!r} (smoke or full)")
    return CRITERIA[number](level, workers)


def verify_suite(level: str = "smoke", workers: int = 1, numbers: Optional[Sequence[int]] = None,
                 echo: Optional[Callable[[str], None]] = print) -> List[CriterionResult]:
    results = []
    for k in numbers or sorted(CRITERIA):
        res = run_criterion(k, level, workers)
        if echo:
            echo(res.line())
        results.append(res)
    return results
