"""Experiment configuration: YAML schema, validation and object builders.

Every field is checked before anything is computed; failures raise
``ConfigError`` carrying a dotted path such as ``probes.lipschitz.times[2]``.
The schema is documented in the README.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import yaml

from . import drifts as D
from . import observables as O
from .covariance import KernelSpec, SpectralFrame, build_frame, load_kernel_matrix
from .errors import ConfigError, SpderegError
from .rng import StreamKey
from .spectral import SpectrumQ, h_alpha_norm, make_spectrum, power_spectrum

__all__ = ["ExperimentConfig", "Built", "load_config", "parse_config", "build", "config_hash"]

DRIFT_KINDS = ("zero", "projection", "composition_right", "composition_left",
               "gradient_type", "cahn_hilliard", "finite_rank")
OBSERVABLE_KINDS = ("constant", "sin_coord", "cos_coord", "tanh_coord", "sin_linear",
                    "tanh_linear", "indicator", "quadratic_clip")


# -- small validators -------------------------------------------------------------

def _get(d: Mapping, key: str, path: str, default: Any = ...) -> Any:
    if not isinstance(d, Mapping):
        raise ConfigError(path, "expected a mapping")
    if key in d:
        return d[key]
    if default is ...:
        raise ConfigError(f"{path}.{key}" if path else key, "required field is missing")
    return default


def _num(v: Any, path: str, lo: Optional[float] = None, hi: Optional[float] = None,
         strict_lo: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    v = float(v)
    if not np.isfinite(v):
        raise ConfigError(path, "must be finite")
    if lo is not None and (v < lo or (strict_lo and v == lo)):
        raise ConfigError(path, f"must be {'>' if strict_lo else '>='} {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(path, f"must be <= {hi}, got {v}")
    return v


def _int(v: Any, path: str, lo: int = 0) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if v < lo:
        raise ConfigError(path, f"must be >= {lo}, got {v}")
    return int(v)


def _nums(v: Any, path: str, **kw) -> List[float]:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, (list, tuple)) or not v:
        raise ConfigError(path, "expected a non-empty list of numbers")
    return [_num(x, f"{path}[{i}]", **kw) for i, x in enumerate(v)]


def _choice(v: Any, path: str, options: Sequence[str]) -> str:
    if v not in options:
        raise ConfigError(path, f"expected one of {', '.join(options)}, got {v!r}")
    return v


# -- schema ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """A validated, normalized experiment description.

    ``data`` is plain JSON-compatible data; it re-validates to an equal
    config, which is what the manifest embeds.
    """

    data: Dict[str, Any]
    source: Optional[str] = None

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def horizon(self) -> float:
        return self.data["horizon"]

    @property
    def steps(self) -> int:
        return self.data["steps"]

    @property
    def probes(self) -> Dict[str, Any]:
        return self.data["probes"]

    @property
    def output(self) -> Optional[str]:
        return self.data.get("output")

    def with_overrides(self, seed: Optional[int] = None, output: Optional[str] = None) -> "ExperimentConfig":
        d = copy.deepcopy(self.data)
        if seed is not None:
            d["seed"] = _int(seed, "seed")
        if output is not None:
            d["output"] = str(output)
        return ExperimentConfig(d, self.source)


def config_hash(cfg: ExperimentConfig) -> str:
    """sha256 of the canonical JSON form, output location excluded."""
    d = {k: v for k, v in cfg.data.items() if k != "output"}
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError("<file>", f"config file {p} not found")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"YAML parse error: {exc}") from None
    return parse_config(raw, base_dir=p.parent, source=str(p))


def parse_config(raw: Any, base_dir: Union[str, Path, None] = None, source: Optional[str] = None) -> ExperimentConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("<root>", "config must be a mapping")
    known = {"name", "seed", "horizon", "steps", "frames", "spectrum", "drift",
             "observable", "x0", "probes", "output", "workers"}
    for k in raw:
        if k not in known:
            raise ConfigError(str(k), "unknown field")
    out: Dict[str, Any] = {}
    out["name"] = str(_get(raw, "name", "", "experiment"))
    out["seed"] = _int(_get(raw, "seed", ""), "seed")
    out["horizon"] = _num(_get(raw, "horizon", ""), "horizon", lo=0.0, strict_lo=True)
    out["steps"] = _int(_get(raw, "steps", ""), "steps", lo=1)
    out["frames"] = _parse_frames(_get(raw, "frames", "", {}) or {}, base_dir)
    out["spectrum"] = _parse_spectrum(_get(raw, "spectrum", ""), out["frames"])
    out["drift"] = _parse_drift(_get(raw, "drift", "", {"kind": "zero"}), out["spectrum"])
    out["observable"] = _parse_observable(_get(raw, "observable", ""))
    out["x0"] = _parse_x0(_get(raw, "x0", "", {"kind": "zeros"}))
    out["probes"] = _parse_probes(_get(raw, "probes", ""), out["horizon"], out["steps"])
    if raw.get("output") is not None:
        out["output"] = str(raw["output"])
    if "workers" in raw:
        out["workers"] = _int(raw["workers"], "workers", lo=1)
    return ExperimentConfig(out, source)


def _parse_frames(raw: Any, base_dir) -> Dict[str, Any]:
    if not isinstance(raw, Mapping):
        raise ConfigError("frames", "expected a mapping of frame names")
    out = {}
    for name, spec in raw.items():
        path = f"frames.{name}"
        kernel = _choice(_get(spec, "kernel", path), f"{path}.kernel", ("wiener", "wiener_max", "tabulated"))
        f = {"kernel": kernel, "grid_size": _int(_get(spec, "grid_size", path), f"{path}.grid_size", lo=2)}
        if kernel == "tabulated":
            file = Path(str(_get(spec, "file", path)))
            if base_dir is not None and not file.is_absolute():
                file = Path(base_dir) / file
            if not file.is_file():
                raise ConfigError(f"{path}.file", f"kernel file {file} not found")
            f["file"] = str(file)
        out[str(name)] = f
    return out


def _parse_spectrum(raw: Any, frames: Mapping[str, Any]) -> Dict[str, Any]:
    path = "spectrum"
    alpha = _num(_get(raw, "alpha", path), f"{path}.alpha", lo=0.0, hi=0.5)
    if "frame" in raw:
        name = str(raw["frame"])
        if name not in frames:
            raise ConfigError(f"{path}.frame", f"undefined frame {name!r}")
        modes = _int(_get(raw, "modes", path), f"{path}.modes", lo=1)
        if modes > frames[name]["grid_size"]:
            raise ConfigError(f"{path}.modes", f"{modes} modes exceed grid size {frames[name]['grid_size']}")
        return {"frame": name, "modes": modes, "alpha": alpha}
    if "eigenvalues" in raw:
        eig = _nums(raw["eigenvalues"], f"{path}.eigenvalues", lo=0.0, strict_lo=True)
        return {"eigenvalues": eig, "alpha": alpha}
    if "power" in raw:
        p = raw["power"]
        c = _num(_get(p, "c", f"{path}.power", 1.0), f"{path}.power.c", lo=0.0, strict_lo=True)
        e = _num(_get(p, "p", f"{path}.power"), f"{path}.power.p", lo=1.0, strict_lo=True)
        modes = _int(_get(raw, "modes", path), f"{path}.modes", lo=1)
        return {"power": {"c": c, "p": e}, "modes": modes, "alpha": alpha}
    raise ConfigError(path, "give one of 'frame', 'eigenvalues' or 'power'")


def _parse_drift(raw: Any, spectrum: Mapping[str, Any]) -> Dict[str, Any]:
    path = "drift"
    kind = _choice(_get(raw, "kind", path), f"{path}.kind", DRIFT_KINDS)
    out: Dict[str, Any] = {"kind": kind}
    membership = raw.get("membership", "heuristic")
    out["membership"] = _choice(membership, f"{path}.membership", ("heuristic", "always"))
    alpha = spectrum["alpha"]
    needs_frame = kind in ("composition_right", "composition_left", "finite_rank")
    if needs_frame and "frame" not in spectrum:
        raise ConfigError(f"{path}.kind", f"{kind} needs a spectrum built from a frame")
    if kind == "projection":
        out["beta"] = _num(_get(raw, "beta", path), f"{path}.beta", lo=alpha)
        out["pi"] = _nums(_get(raw, "pi", path, 1.0), f"{path}.pi")
    elif kind == "composition_right":
        out["exponent"] = _num(_get(raw, "exponent", path, 2.0), f"{path}.exponent", lo=0.0, strict_lo=True)
    elif kind == "composition_left":
        out["amplitude"] = _num(_get(raw, "amplitude", path, 1.0), f"{path}.amplitude", lo=0.0)
        out["frequency"] = _num(_get(raw, "frequency", path, 1.0), f"{path}.frequency", lo=0.0)
    elif kind == "gradient_type":
        out["potential"] = _choice(_get(raw, "potential", path, "quadratic"), f"{path}.potential",
                                   ("quadratic", "logcosh"))
        out["c"] = _nums(_get(raw, "c", path, 0.5), f"{path}.c", lo=0.0)
    elif kind == "cahn_hilliard":
        if alpha != 0.0:
            raise ConfigError("spectrum.alpha", "the cahn_hilliard drift needs alpha = 0")
        out["amplitude"] = _num(_get(raw, "amplitude", path, 1.0), f"{path}.amplitude", lo=0.0)
    elif kind == "finite_rank":
        out["rank"] = _int(_get(raw, "rank", path, 2), f"{path}.rank", lo=1)
        out["amplitude"] = _num(_get(raw, "amplitude", path, 1.0), f"{path}.amplitude", lo=0.0)
    if kind in ("composition_right", "composition_left", "finite_rank") and alpha != 0.5:
        raise ConfigError("spectrum.alpha", f"the {kind} drift needs alpha = 1/2")
    return out


def _parse_observable(raw: Any) -> Dict[str, Any]:
    path = "observable"
    kind = _choice(_get(raw, "kind", path), f"{path}.kind", OBSERVABLE_KINDS)
    out: Dict[str, Any] = {"kind": kind}
    if kind == "constant":
        out["c"] = _num(_get(raw, "c", path, 1.0), f"{path}.c")
    elif kind in ("sin_coord", "cos_coord", "tanh_coord"):
        out["coord"] = _int(_get(raw, "coord", path, 0), f"{path}.coord")
        out["scale"] = _num(_get(raw, "scale", path, 1.0), f"{path}.scale")
    elif kind in ("sin_linear", "tanh_linear", "indicator"):
        out["w"] = _nums(_get(raw, "w", path), f"{path}.w")
        if kind == "tanh_linear":
            out["scale"] = _num(_get(raw, "scale", path, 1.0), f"{path}.scale")
        if kind == "indicator":
            out["threshold"] = _num(_get(raw, "threshold", path, 0.0), f"{path}.threshold")
            out["ramp"] = _num(_get(raw, "ramp", path, 0.1), f"{path}.ramp", lo=0.0, strict_lo=True)
    elif kind == "quadratic_clip":
        out["coord"] = _int(_get(raw, "coord", path, 0), f"{path}.coord")
        out["cap"] = _num(_get(raw, "cap", path, 1.0), f"{path}.cap", lo=0.0, strict_lo=True)
    return out


def _parse_x0(raw: Any) -> Dict[str, Any]:
    if isinstance(raw, (list, tuple)):
        return {"kind": "explicit", "values": _nums(raw, "x0")}
    kind = _choice(_get(raw, "kind", "x0"), "x0.kind", ("zeros", "explicit", "unit", "sqrt_eigen"))
    out: Dict[str, Any] = {"kind": kind}
    if kind == "explicit":
        out["values"] = _nums(_get(raw, "values", "x0"), "x0.values")
    elif kind == "unit":
        out["mode"] = _int(_get(raw, "mode", "x0", 0), "x0.mode")
        out["scale"] = _num(_get(raw, "scale", "x0", 1.0), "x0.scale")
    elif kind == "sqrt_eigen":
        out["scale"] = _num(_get(raw, "scale", "x0", 1.0), "x0.scale")
    return out


def _parse_directions(raw: Any, path: str) -> Dict[str, Any]:
    if isinstance(raw, (list, tuple)):
        if not raw:
            raise ConfigError(path, "empty direction list")
        return {"kind": "explicit", "vectors": [_nums(v, f"{path}[{i}]") for i, v in enumerate(raw)]}
    kind = _choice(_get(raw, "kind", path), f"{path}.kind", ("explicit", "unit", "random"))
    out: Dict[str, Any] = {"kind": kind}
    if kind == "explicit":
        out["vectors"] = [_nums(v, f"{path}.vectors[{i}]") for i, v in enumerate(_get(raw, "vectors", path))]
    elif kind == "unit":
        out["modes"] = [_int(m, f"{path}.modes[{i}]") for i, m in enumerate(_get(raw, "modes", path))]
        out["norm"] = _num(_get(raw, "norm", path, 1.0), f"{path}.norm", lo=0.0)
    else:
        out["count"] = _int(_get(raw, "count", path), f"{path}.count", lo=1)
        out["norm"] = _num(_get(raw, "norm", path, 1.0), f"{path}.norm", lo=0.0)
        out["decay"] = _num(_get(raw, "decay", path, 1.0), f"{path}.decay", lo=0.0)
    return out


def _parse_times(raw: Any, path: str, horizon: float, steps: int) -> List[float]:
    ts = _nums(raw, path, lo=0.0, strict_lo=True)
    dt = horizon / steps
    for i, t in enumerate(ts):
        if t > horizon * (1 + 1e-12):
            raise ConfigError(f"{path}[{i}]", f"t={t} exceeds the horizon {horizon}")
        if abs(round(t / dt) * dt - t) > 1e-9 * horizon:
            raise ConfigError(f"{path}[{i}]", f"t={t} is not a multiple of the step {dt}")
    return ts


def _parse_probes(raw: Any, horizon: float, steps: int) -> Dict[str, Any]:
    if not isinstance(raw, Mapping) or not raw:
        raise ConfigError("probes", "declare at least one probe suite")
    out: Dict[str, Any] = {}
    for name, spec in raw.items():
        path = f"probes.{name}"
        if name == "semigroup":
            out[name] = {
                "times": _parse_times(_get(spec, "times", path), f"{path}.times", horizon, steps),
                "samples": _int(_get(spec, "samples", path), f"{path}.samples", lo=2),
                "oracle": bool(spec.get("oracle", False)),
                "quad_points": _int(spec.get("quad_points", 40), f"{path}.quad_points", lo=2),
            }
        elif name == "gradient":
            eps = _nums(_get(spec, "eps", path, [1e-2]), f"{path}.eps", lo=0.0, strict_lo=True)
            if any(b >= a for a, b in zip(eps, eps[1:])):
                raise ConfigError(f"{path}.eps", "must be strictly decreasing")
            out[name] = {
                "times": _parse_times(_get(spec, "times", path), f"{path}.times", horizon, steps),
                "directions": _parse_directions(_get(spec, "directions", path), f"{path}.directions"),
                "eps": eps,
                "samples": _int(_get(spec, "samples", path), f"{path}.samples", lo=2),
            }
        elif name == "lipschitz":
            samples = _int(_get(spec, "samples", path), f"{path}.samples", lo=2)
            out[name] = {
                "times": _parse_times(_get(spec, "times", path), f"{path}.times", horizon, steps),
                "directions": _parse_directions(_get(spec, "directions", path), f"{path}.directions"),
                "samples": samples,
                "max_samples": _int(spec.get("max_samples", samples), f"{path}.max_samples", lo=samples),
                "mode": _choice(spec.get("mode", "alpha"), f"{path}.mode", ("alpha", "x")),
            }
        else:
            raise ConfigError(path, "unknown probe suite (expected semigroup, gradient or lipschitz)")
    return out


# -- builders -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Built:
    spectrum: SpectrumQ
    frame: Optional[SpectralFrame]
    drift: D.DriftSpec
    observable: O.Observable
    x0: np.ndarray


def _build_frame(cfg: ExperimentConfig) -> Optional[SpectralFrame]:
    sp = cfg.data["spectrum"]
    if "frame" not in sp:
        return None
    f = cfg.data["frames"][sp["frame"]]
    if f["kernel"] == "tabulated":
        kernel = load_kernel_matrix(f["file"])
    else:
        kernel = KernelSpec(f["kernel"])
    try:
        return build_frame(kernel, f["grid_size"], sp["modes"], sp["alpha"])
    except SpderegError as exc:
        raise ConfigError(f"frames.{sp['frame']}", str(exc)) from exc


def _broadcast(v: Sequence[float], n: int, path: str) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.size == 1:
        return np.full(n, float(a[0]))
    if a.size != n:
        raise ConfigError(path, f"expected 1 or {n} values, got {a.size}")
    return a


def build_drift(spec: Mapping[str, Any], s: SpectrumQ, frame: Optional[SpectralFrame]) -> D.DriftSpec:
    kind = spec["kind"]
    mem = D.always_in if spec.get("membership") == "always" else None
    if kind == "zero":
        return D.zero_drift(s)
    if kind == "projection":
        return D.drift_projection(s, spec["beta"], _broadcast(spec["pi"], s.dim, "drift.pi"), mem)
    if kind == "composition_right":
        p = spec["exponent"]
        return D.drift_composition_right(frame, lambda u: np.asarray(u, dtype=float) ** p, mem)
    if kind == "composition_left":
        a, w = spec["amplitude"], spec["frequency"]
        return D.drift_composition_left(frame, lambda v: a * np.sin(w * v), lambda v: a * w * np.cos(w * v),
                                        a * w, a * w * w, mem)
    if kind == "gradient_type":
        c = _broadcast(spec["c"], s.dim, "drift.c")
        if spec["potential"] == "quadratic":
            grad, hess, lip = D.quadratic_potential(c)
        else:
            grad = lambda x: c * np.tanh(x)  # noqa: E731
            hess = lambda x, h: c * h / np.cosh(x) ** 2  # noqa: E731
            lip = float(np.max(c))
        return D.drift_gradient_type(s, grad, lip, hess)
    if kind == "cahn_hilliard":
        inner, jac, lip = D.sine_inner(s, spec["amplitude"])
        return D.drift_cahn_hilliard(s, inner, lip, jac)
    if kind == "finite_rank":
        return finite_rank_example(frame, spec["rank"], spec["amplitude"], mem)
    raise ConfigError("drift.kind", f"unknown drift {kind!r}")


def finite_rank_example(frame: SpectralFrame, rank: int, amplitude: float,
                        membership=None) -> D.DriftSpec:
    """f(xi, y) = a xi tanh(sum(y) / sqrt(n)) against n sine directions.

    Bounds: |f| <= a, |f_xi| <= a, |f_y| <= a/sqrt(n), |f_xi y| <= a/sqrt(n).
    """
    a, n = float(amplitude), int(rank)
    r = np.sqrt(n)

    def f(xi, y):
        return a * xi * np.tanh(np.sum(y, axis=-1) / r)[..., None]

    def df(xi, y):
        sech2 = 1.0 / np.cosh(np.sum(y, axis=-1) / r) ** 2
        col = a * xi * sech2[..., None] / r
        return np.repeat(col[..., None], n, axis=-1)

    bounds = {"f": a, "dxi": a, "dy": a / r, "dxidy": a / r}
    return D.drift_finite_rank(frame, D.sine_directions(frame.grid_size, n), f, df, bounds, membership)


def build_observable(spec: Mapping[str, Any]) -> O.Observable:
    kind = spec["kind"]
    if kind == "constant":
        return O.constant(spec["c"])
    if kind == "sin_coord":
        return O.sin_coord(spec["coord"], spec["scale"])
    if kind == "cos_coord":
        return O.cos_coord(spec["coord"], spec["scale"])
    if kind == "tanh_coord":
        return O.tanh_coord(spec["coord"], spec["scale"])
    if kind == "sin_linear":
        return O.sin_linear(spec["w"])
    if kind == "tanh_linear":
        return O.tanh_linear(spec["w"], spec["scale"])
    if kind == "indicator":
        return O.smoothed_indicator(spec["w"], spec["threshold"], spec["ramp"])
    return O.quadratic_clip(spec["coord"], spec["cap"])


def build_x0(spec: Mapping[str, Any], s: SpectrumQ) -> np.ndarray:
    kind = spec["kind"]
    if kind == "zeros":
        return np.zeros(s.dim)
    if kind == "explicit":
        v = np.asarray(spec["values"], dtype=float)
        if v.size != s.dim:
            raise ConfigError("x0.values", f"expected {s.dim} values, got {v.size}")
        return v
    if kind == "unit":
        if spec["mode"] >= s.dim:
            raise ConfigError("x0.mode", f"mode {spec['mode']} out of range for {s.dim} modes")
        v = np.zeros(s.dim)
        v[spec["mode"]] = spec["scale"]
        return v
    return spec["scale"] * np.sqrt(s.eigenvalues)


def build_directions(spec: Mapping[str, Any], s: SpectrumQ, seed: int, path: str) -> np.ndarray:
    """Directions as rows.  ``unit`` and ``random`` rows are scaled to the requested H_alpha norm."""
    kind = spec["kind"]
    if kind == "explicit":
        d = np.asarray(spec["vectors"], dtype=float)
        if d.ndim != 2 or d.shape[1] != s.dim:
            raise ConfigError(f"{path}.vectors", f"each direction needs {s.dim} entries")
        return d
    if kind == "unit":
        d = np.zeros((len(spec["modes"]), s.dim))
        for i, m in enumerate(spec["modes"]):
            if m >= s.dim:
                raise ConfigError(f"{path}.modes[{i}]", f"mode {m} out of range for {s.dim} modes")
            d[i, m] = 1.0
    else:
        gen = StreamKey(seed, f"directions:{path}").generator()
        u = gen.standard_normal((spec["count"], s.dim)) / np.arange(1, s.dim + 1) ** spec["decay"]
        d = s.power(s.alpha) * u
    return spec["norm"] * d / h_alpha_norm(s, d)[:, None]


def build(cfg: ExperimentConfig) -> Built:
    frame = _build_frame(cfg)
    sp = cfg.data["spectrum"]
    if frame is not None:
        s = frame.spectrum
    elif "eigenvalues" in sp:
        s = make_spectrum(sp["eigenvalues"], sp["alpha"])
    else:
        s = power_spectrum(sp["power"]["c"], sp["power"]["p"], sp["modes"], sp["alpha"])
    try:
        drift = build_drift(cfg.data["drift"], s, frame)
    except SpderegError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("drift", str(exc)) from exc
    obs = build_observable(cfg.data["observable"])
    x0 = build_x0(cfg.data["x0"], s)
    c = cfg.data["observable"].get("coord")
    if c is not None and c >= s.dim:
        raise ConfigError("observable.coord", f"coordinate {c} out of range for {s.dim} modes")
    w = cfg.data["observable"].get("w")
    if w is not None and len(w) != s.dim:
        raise ConfigError("observable.w", f"expected {s.dim} weights, got {len(w)}")
    return Built(s, frame, drift, obs, x0)
