"""Kernel covariance operators on L^2([0,1]) reduced to spectral form.

The kernel is sampled on the midpoint grid xi_i = (i - 1/2)/M and the
operator is discretized as K/M (midpoint rule, uniform weights).  Its
eigenvectors, scaled by sqrt(M), are orthonormal for the discrete inner
product <f, g> = mean(f * g) and become the columns of ``basis``.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

import numpy as np

from .errors import AsymmetricKernel, DimMismatch, IndefiniteKernel, TooManyModes
from .spectral import SpectrumQ, h_alpha_norm, make_spectrum

__all__ = [
    "GridFunction",
    "KernelSpec",
    "SpectralFrame",
    "grid_nodes",
    "wiener_kernel_matrix",
    "max_kernel_matrix",
    "load_kernel_matrix",
    "build_frame",
    "to_coeffs",
    "from_coeffs",
    "w12_seminorm",
    "save_frame",
    "load_frame",
    "norm_equivalence_ratios",
]

EIG_TOL = 1e-12


def grid_nodes(m: int) -> np.ndarray:
    return (np.arange(m, dtype=float) + 0.5) / m


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Samples on the midpoint grid; leading axes, if any, are batch axes."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 0 or v.shape[-1] < 2:
            raise DimMismatch("a grid function needs at least two nodes")
        object.__setattr__(self, "values", v)

    @property
    def grid_size(self) -> int:
        return int(self.values.shape[-1])

    @property
    def nodes(self) -> np.ndarray:
        return grid_nodes(self.grid_size)

    @classmethod
    def from_callable(cls, f: Callable[[np.ndarray], np.ndarray], m: int) -> "GridFunction":
        return cls(np.asarray(f(grid_nodes(m)), dtype=float))

    def l2_norm(self) -> np.ndarray:
        return np.sqrt(np.mean(self.values ** 2, axis=-1))


def _values(f: Union[GridFunction, np.ndarray]) -> np.ndarray:
    return f.values if isinstance(f, GridFunction) else np.asarray(f, dtype=float)


def wiener_kernel_matrix(m: int) -> np.ndarray:
    """min(xi, eta) on the midpoint grid: the covariance of Brownian motion."""
    xi = grid_nodes(m)
    return np.minimum.outer(xi, xi)


def max_kernel_matrix(m: int) -> np.ndarray:
    """max(xi, eta) on the midpoint grid.  Indefinite; kept for diagnostics."""
    xi = grid_nodes(m)
    return np.maximum.outer(xi, xi)


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """``kind`` is ``"wiener"`` (alias ``"wiener_max"``) or ``"user_tabulated"``."""

    kind: str
    matrix: Optional[np.ndarray] = None

    def sample(self, m: int) -> np.ndarray:
        if self.kind in ("wiener", "wiener_max"):
            return wiener_kernel_matrix(m)
        if self.kind == "user_tabulated":
            if self.matrix is None:
                raise ValueError("user_tabulated kernel needs a matrix")
            k = np.asarray(self.matrix, dtype=float)
            if k.shape != (m, m):
                raise DimMismatch(f"kernel matrix is {k.shape}, grid size is {m}")
            return k
        raise ValueError(f"unknown kernel kind {self.kind!r}")


def load_kernel_matrix(path: Union[str, Path]) -> KernelSpec:
    """Whitespace-separated square matrix, one row per line."""
    k = np.loadtxt(path, dtype=float, ndmin=2)
    if k.shape[0] != k.shape[1]:
        raise DimMismatch(f"kernel file {path} is not square: {k.shape}")
    return KernelSpec("user_tabulated", k)


@dataclass(frozen=True, eq=False)
class SpectralFrame:
    spectrum: SpectrumQ
    basis: np.ndarray
    grid_size: int
    dropped_trace: float = 0.0
    kernel_kind: str = "user_tabulated"

    @property
    def nodes(self) -> np.ndarray:
        return grid_nodes(self.grid_size)

    @property
    def dim(self) -> int:
        return int(self.basis.shape[1])

    # raw-array versions of to_coeffs/from_coeffs used on hot paths
    def analysis(self, values: np.ndarray) -> np.ndarray:
        return values @ self.basis / self.grid_size

    def synthesis(self, coeffs: np.ndarray) -> np.ndarray:
        return coeffs @ self.basis.T


def build_frame(kernel: KernelSpec, grid_size: int, keep_modes: int, alpha: float,
                eig_tol: float = EIG_TOL) -> SpectralFrame:
    """Eigendecompose the midpoint discretization of ``kernel`` and keep N modes.

    Eigenvalues within ``eig_tol * lambda_1`` of zero are dropped; anything
    more negative than that raises ``IndefiniteKernel``.
    """
    m, n = int(grid_size), int(keep_modes)
    if m < 2:
        raise DimMismatch("grid_size must be at least 2")
    if n < 1 or n > m:
        raise TooManyModes(f"keep_modes={n} must lie in [1, grid_size={m}]")
    k = kernel.sample(m)
    scale = float(np.max(np.abs(k))) or 1.0
    if np.max(np.abs(k - k.T)) > 1e-12 * scale:
        raise AsymmetricKernel("kernel matrix is not symmetric")
    w, u = np.linalg.eigh(0.5 * (k + k.T) / m)
    w, u = w[::-1], u[:, ::-1]
    if w[0] <= 0:
        raise IndefiniteKernel(f"largest eigenvalue {w[0]:.3g} is not positive")
    eps = eig_tol * w[0]
    if w[-1] < -eps:
        raise IndefiniteKernel(
            f"eigenvalue {w[-1]:.6g} below clip tolerance -{eps:.3g} ({int(np.sum(w < -eps))} negative)")
    positive = int(np.sum(w > eps))
    if n > positive:
        raise TooManyModes(f"only {positive} eigenvalues exceed the clip tolerance, asked for {n}")
    basis = np.sqrt(m) * u[:, :n]
    # fix the sign so the first non-negligible entry of each column is positive
    lead = np.argmax(np.abs(basis) > 1e-8 * np.max(np.abs(basis), axis=0), axis=0)
    basis = basis * np.sign(basis[lead, np.arange(n)])
    basis.setflags(write=False)
    dropped = float(np.sum(w[n:positive]))
    spectrum = make_spectrum(w[:n], alpha, declared_tail_trace=dropped)
    return SpectralFrame(spectrum, basis, m, dropped, kernel.kind)


def to_coeffs(frame: SpectralFrame, f: Union[GridFunction, np.ndarray]) -> np.ndarray:
    v = _values(f)
    if v.shape[-1] != frame.grid_size:
        raise DimMismatch(f"grid function has {v.shape[-1]} nodes, frame has {frame.grid_size}")
    return frame.analysis(v)


def from_coeffs(frame: SpectralFrame, x: np.ndarray) -> GridFunction:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != frame.dim:
        raise DimMismatch(f"coefficient vector has {x.shape[-1]} modes, frame has {frame.dim}")
    return GridFunction(frame.synthesis(x))


def w12_seminorm(f: Union[GridFunction, np.ndarray]) -> np.ndarray:
    """Forward-difference approximation of ||f'||_{L^2}."""
    v = _values(f)
    m = v.shape[-1]
    return np.sqrt(m * np.sum(np.diff(v, axis=-1) ** 2, axis=-1))


def norm_equivalence_ratios(frame: SpectralFrame, functions: Iterable[GridFunction]) -> np.ndarray:
    """||P_N f||_{1/2} / ||f'|| for each test function (frame constants, not assumed)."""
    s12 = frame.spectrum.with_alpha(0.5)
    out = []
    for f in functions:
        out.append(float(h_alpha_norm(s12, to_coeffs(frame, f)) / w12_seminorm(f)))
    return np.asarray(out)


_HEADER = "spdereg-frame v1"


def save_frame(frame: SpectralFrame, path: Union[str, Path]) -> None:
    """Plain-text cache: header, one line of eigenvalues, then the basis rows."""
    lines = [
        f"# {_HEADER}",
        f"# grid_size {frame.grid_size}",
        f"# modes {frame.dim}",
        f"# alpha {frame.spectrum.alpha!r}",
        f"# dropped_trace {frame.dropped_trace!r}",
        f"# kernel {frame.kernel_kind}",
    ]
    buf = io.StringIO()
    np.savetxt(buf, frame.spectrum.eigenvalues[None, :], fmt="%.17g")
    np.savetxt(buf, frame.basis, fmt="%.17g")
    Path(path).write_text("\n".join(lines) + "\n" + buf.getvalue())


def load_frame(path: Union[str, Path]) -> SpectralFrame:
    text = Path(path).read_text().splitlines()
    meta = {}
    for line in text:
        if not line.startswith("#"):
            break
        parts = line[1:].split(None, 1)
        if len(parts) == 2:
            meta[parts[0]] = parts[1].strip()
    if _HEADER.split()[0] not in meta or meta[_HEADER.split()[0]] != _HEADER.split()[1]:
        raise ValueError(f"{path} is not a frame cache")
    data = np.loadtxt(path, dtype=float, ndmin=2)
    lam, basis = data[0], data[1:]
    m, n = int(meta["grid_size"]), int(meta["modes"])
    if basis.shape != (m, n) or lam.shape != (n,):
        raise DimMismatch(f"frame cache {path} has inconsistent shapes")
    basis.setflags(write=False)
    dropped = float(meta.get("dropped_trace", 0.0))
    spectrum = make_spectrum(lam, float(meta["alpha"]), declared_tail_trace=dropped)
    return SpectralFrame(spectrum, basis, m, dropped, meta.get("kernel", "user_tabulated"))
