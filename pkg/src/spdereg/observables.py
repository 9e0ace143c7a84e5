"""Bounded observables phi: X -> R with a declared sup norm.

Every evaluation is audited against ``sup_bound``; an observable that
exceeds its declared bound aborts the run.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Sequence

import numpy as np

from .errors import ObservableUnbounded

__all__ = [
    "Observable",
    "constant",
    "sin_coord",
    "cos_coord",
    "tanh_coord",
    "sin_linear",
    "tanh_linear",
    "smoothed_indicator",
    "quadratic_clip",
]


@dataclass(frozen=True, eq=False)
class Observable:
    fn: Callable[[np.ndarray], np.ndarray]
    sup_bound: float
    kind: str
    params: Dict[str, object] = field(default_factory=dict)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        v = np.asarray(self.fn(x), dtype=float)
        worst = float(np.max(np.abs(v))) if v.size else 0.0
        if not np.isfinite(worst) or worst > self.sup_bound * (1 + 1e-12):
            raise ObservableUnbounded(f"{self.kind}: |phi| reached {worst:.6g} > sup_bound {self.sup_bound}")
        return v

    __call__ = evaluate


def constant(c: float = 1.0) -> Observable:
    return Observable(lambda x: np.full(np.shape(x)[:-1], float(c)), abs(float(c)) or 1.0, "constant", {"c": c})


def sin_coord(i: int, scale: float = 1.0) -> Observable:
    return Observable(lambda x: np.sin(scale * x[..., i]), 1.0, "sin", {"coord": i, "scale": scale})


def cos_coord(i: int, scale: float = 1.0) -> Observable:
    return Observable(lambda x: np.cos(scale * x[..., i]), 1.0, "cos", {"coord": i, "scale": scale})


def tanh_coord(i: int, scale: float = 1.0) -> Observable:
    return Observable(lambda x: np.tanh(scale * x[..., i]), 1.0, "tanh", {"coord": i, "scale": scale})


def sin_linear(w: Sequence[float]) -> Observable:
    """sin(<w, x>)."""
    w = np.asarray(w, dtype=float)
    return Observable(lambda x: np.sin(x @ w), 1.0, "sin_linear", {"w": w.tolist()})


def tanh_linear(w: Sequence[float], scale: float = 1.0) -> Observable:
    w = np.asarray(w, dtype=float)
    return Observable(lambda x: np.tanh(scale * (x @ w)), 1.0, "tanh_linear", {"w": w.tolist(), "scale": scale})


def smoothed_indicator(w: Sequence[float], threshold: float = 0.0, ramp: float = 0.1) -> Observable:
    """1{<w,x> > threshold} with the jump replaced by a linear ramp of width ``ramp``."""
    w = np.asarray(w, dtype=float)
    if ramp <= 0:
        raise ValueError("ramp must be positive")
    return Observable(lambda x: np.clip((x @ w - threshold) / ramp + 0.5, 0.0, 1.0), 1.0,
                      "indicator", {"w": w.tolist(), "threshold": threshold, "ramp": ramp})


def quadratic_clip(i: int, cap: float = 1.0) -> Observable:
    """min(x_i^2, cap): curved near the origin, handy for finite-difference diagnostics."""
    return Observable(lambda x: np.minimum(x[..., i] ** 2, cap), float(cap), "quadratic_clip",
                      {"coord": i, "cap": cap})
