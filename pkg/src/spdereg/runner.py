"""Batch runs: execute the probe suites of a config and write result tables.

Outputs in the run directory:

- ``semigroup.csv``, ``gradient.csv``, ``lipschitz.csv``: one row per probe
- ``records.jsonl``: the same rows as one JSON object per line
- ``summary.txt``: human-readable, flagged rows first
- ``manifest.json``: config hash, version, seed, paths, wall clock, workers
  and the normalized config
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from . import __version__
from .config import ExperimentConfig, build, build_directions, config_hash, load_config, parse_config
from .errors import SpderegError
from .lab import (
    LabConfig,
    bel_gradient,
    estimate_semigroup,
    fd_gradient,
    lipschitz_probe,
    lipschitz_probe_x_directions,
    mehler_oracle,
    pooled_stderr,
)
from .drifts import HeuristicMembership
from .spectral import h_alpha_norm

__all__ = ["RunManifest", "ProbeFailure", "run_experiment", "list_examples", "bundled_config", "CATALOG"]

TABLE_COLUMNS = ["t", "direction", "h_norm", "estimate", "stderr", "bound", "flag"]


class ProbeFailure(SpderegError, RuntimeError):
    """An estimator error inside a probe suite; the message names the probe."""


@dataclass
class RunManifest:
    config_hash: str
    version: str
    seed: int
    outputs: Dict[str, str]
    wall_clock: float
    workers: int
    flags: int
    config: Dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


# -- catalog -------------------------------------------------------------------------

CATALOG = [
    {"name": "projection", "topic": "projection drift on H_alpha, alpha in [0, 1/2)", "alpha": 0.25,
     "bound_family": "h_alpha_lipschitz",
     "expected": "no modulus violations; bound e^{LT}/sqrt(t) with L = max|pi| lambda_1^beta"},
    {"name": "composition_right", "topic": "right composition on the Wiener space, alpha = 1/2", "alpha": 0.5,
     "bound_family": "h_alpha_lipschitz",
     "expected": "no modulus violations with L = sqrt(L_g)"},
    {"name": "composition_left", "topic": "left composition with a base-point constant, alpha = 1/2",
     "alpha": 0.5, "bound_family": "pointwise_lipschitz",
     "expected": "no modulus violations with L(x) = sqrt(2) max(L_g, L_g' ||x'||_inf)"},
    {"name": "gradient_type", "topic": "gradient-type perturbation Q^alpha DU, alpha = 0", "alpha": 0.0,
     "bound_family": "x_lipschitz",
     "expected": "finite modulus in X directions; BEL and finite differences agree"},
    {"name": "cahn_hilliard", "topic": "Cahn-Hilliard type drift (-A)^{1/2} f, alpha = 0", "alpha": 0.0,
     "bound_family": "h_alpha_lipschitz",
     "expected": "no modulus violations with L = L_f / sqrt(2)"},
    {"name": "finite_rank", "topic": "finite-rank nonlinearity on the Wiener space, alpha = 1/2",
     "alpha": 0.5, "bound_family": "x_lipschitz",
     "expected": "H_1/2 modulus within e^{L_F T} lambda_1^{1/2} / sqrt(t)"},
]


def bundled_config(name: str) -> Path:
    path = resources.files("spdereg") / "configs" / f"{name}.yaml"
    if not path.is_file():
        raise FileNotFoundError(f"no bundled config named {name!r}")
    return Path(str(path))


def list_examples() -> List[Dict[str, Any]]:
    """The six bundled example configs with their metadata."""
    return [dict(e, config=str(bundled_config(e["name"]))) for e in CATALOG]


# -- formatting ----------------------------------------------------------------------

def _f(v: Any) -> Any:
    """Floats via repr so that tables are bit-exact round trips."""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else repr(v))
    return v


def _json_value(v: Any) -> Any:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


# -- suites --------------------------------------------------------------------------

def _semigroup_suite(cfg, b, lc, spec) -> List[Dict[str, Any]]:
    rows = []
    for t in spec["times"]:
        est = estimate_semigroup(lc, b.drift, b.observable, t, b.x0, spec["samples"])
        row = {"suite": "semigroup", "t": t, "direction": -1, "h_norm": 0.0, "estimate": est.value,
               "stderr": est.stderr, "bound": b.observable.sup_bound, "flag": ""}
        if spec["oracle"]:
            oracle = mehler_oracle(b.spectrum, b.observable, t, b.x0, quadrature_modes=min(b.spectrum.dim, 3),
                                   quad_points=spec["quad_points"])
            row["oracle"] = oracle
            if abs(est.value - oracle) > 4 * est.stderr:
                row["flag"] = "oracle_mismatch"
        rows.append(row)
    return rows


def _gradient_suite(cfg, b, lc, spec) -> List[Dict[str, Any]]:
    s = b.spectrum
    dirs = build_directions(spec["directions"], s, cfg.seed, "probes.gradient.directions")
    lip = float(b.drift.lipschitz(b.x0)) if b.drift.state_dependent else float(b.drift.lipschitz())
    rows = []
    for t in spec["times"]:
        for j, h in enumerate(dirs):
            hn = float(h_alpha_norm(s, h))
            bel = bel_gradient(lc, b.drift, b.observable, t, b.x0, h, spec["samples"], purpose=f"bel:{j}")
            fd = fd_gradient(lc, b.drift, b.observable, t, b.x0, h, spec["eps"], spec["samples"], purpose=f"fd:{j}")
            bound = math.exp(lip * cfg.horizon) / math.sqrt(t) * b.observable.sup_bound * hn
            z = (bel.value - fd[-1].value) / (pooled_stderr(bel, fd[-1]) or 1.0)
            flags = []
            if abs(z) > 4:
                flags.append("bel_fd_disagree")
            rel = bel.stderr / abs(bel.value) if bel.value else 0.0
            if abs(bel.value) > bound * (1 + 4 * rel):
                flags.append("magnitude_bound")
            if any(fd.curvature):
                flags.append("curvature")
            rows.append({"suite": "gradient", "t": t, "direction": j, "h_norm": hn, "estimate": bel.value,
                         "stderr": bel.stderr, "bound": bound, "flag": "|".join(flags),
                         "fd": [e.value for e in fd], "fd_stderr": [e.stderr for e in fd],
                         "eps": spec["eps"], "richardson": fd.richardson, "z": z})
    return rows


def _lipschitz_suite(cfg, b, lc, spec) -> List[Dict[str, Any]]:
    dirs = build_directions(spec["directions"], b.spectrum, cfg.seed, "probes.lipschitz.directions")
    probe = lipschitz_probe if spec["mode"] == "alpha" else lipschitz_probe_x_directions
    rep = probe(lc, b.drift, b.observable, spec["times"], b.x0, dirs,
                n_samples=spec["samples"], n_max=spec["max_samples"])
    # constants that are only reported (not asserted) mark rows without flagging the run
    over = "violation" if rep.bound_asserted else "reported"
    rows = []
    for r in rep.rows:
        rows.append({"suite": "lipschitz", "t": r.t, "direction": r.direction, "h_norm": r.h_norm,
                     "estimate": r.delta, "stderr": r.stderr, "bound": r.bound,
                     "flag": over if r.violated else "",
                     "ratio": r.ratio, "ratio_x": r.ratio_x, "normalization": rep.normalization,
                     "n_samples": rep.n_samples})
    return rows


_SUITES = {"semigroup": _semigroup_suite, "gradient": _gradient_suite, "lipschitz": _lipschitz_suite}


# -- run -----------------------------------------------------------------------------

def _write_table(path: Path, rows: List[Dict[str, Any]]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for r in rows:
            w.writerow([_f(r[c]) for c in TABLE_COLUMNS])


def _membership_note(drift) -> Optional[str]:
    if not drift.branching:
        return None
    if isinstance(drift.membership, HeuristicMembership):
        return (f"membership: heuristic (x counts as outside H_alpha when its norm over N modes exceeds "
                f"{drift.membership.ratio:g} times the norm over N/2 modes)")
    return f"membership: {getattr(drift.membership, '__name__', 'custom')}"


def _summary(cfg: ExperimentConfig, rows: List[Dict[str, Any]], chash: str, drift=None) -> str:
    flagged = [r for r in rows if r["flag"] and r["flag"] != "reported"]
    lines = [f"flags: {len(flagged)}"]
    for r in flagged:
        lines.append(f"  FLAG {r['flag']}: {r['suite']} t={r['t']} direction={r['direction']} "
                     f"estimate={r['estimate']:.6g} stderr={r['stderr']:.3g} bound={r['bound']:.6g}")
    lines += ["", f"experiment: {cfg.name}", f"config hash: {chash}", f"seed: {cfg.seed}"]
    note = _membership_note(drift) if drift is not None else None
    if note:
        lines.append(note)
    lines.append("")
    for suite in _SUITES:
        sel = [r for r in rows if r["suite"] == suite]
        if not sel:
            continue
        lines.append(f"[{suite}] {len(sel)} rows")
        for r in sel:
            lines.append(f"  t={r['t']:<6g} dir={r['direction']:<3d} estimate={r['estimate']:+.6f} "
                         f"stderr={r['stderr']:.2e} bound={r['bound']:.4g} {r['flag']}")
        lines.append("")
    return "\n".join(lines)


def run_experiment(config: Union[str, Path, ExperimentConfig, Dict[str, Any]], workers: Optional[int] = None,
                   seed: Optional[int] = None, out: Optional[Union[str, Path]] = None) -> RunManifest:
    """Validate, run every declared probe suite, and write the outputs.

    ``seed`` and ``out`` override the config.  The output directory defaults
    to ``runs/<name>`` under the current directory.
    """
    if isinstance(config, ExperimentConfig):
        cfg = config
    elif isinstance(config, dict):
        cfg = parse_config(config)
    else:
        cfg = load_config(config)
    cfg = cfg.with_overrides(seed=seed, output=str(out) if out is not None else None)
    n_workers = int(workers or cfg.data.get("workers", 1))
    b = build(cfg)
    lc = LabConfig(b.spectrum, cfg.horizon, cfg.steps, seed=cfg.seed, workers=n_workers)
    out_dir = Path(cfg.output or Path("runs") / cfg.name)
    out_dir.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    rows: List[Dict[str, Any]] = []
    outputs: Dict[str, str] = {}
    for suite, spec in cfg.probes.items():
        try:
            suite_rows = _SUITES[suite](cfg, b, lc, spec)
        except SpderegError as exc:
            raise ProbeFailure(f"probe suite {suite!r} failed: {type(exc).__name__}: {exc}") from exc
        path = out_dir / f"{suite}.csv"
        _write_table(path, suite_rows)
        outputs[suite] = str(path)
        rows += suite_rows
    wall = time.perf_counter() - t0

    rec_path = out_dir / "records.jsonl"
    with rec_path.open("w") as fh:
        for r in rows:
            fh.write(json.dumps({k: (list(map(_json_value, v)) if isinstance(v, list) else _json_value(v))
                                 for k, v in r.items()}, sort_keys=True) + "\n")
    outputs["records"] = str(rec_path)
    chash = config_hash(cfg)
    summary_path = out_dir / "summary.txt"
    summary_path.write_text(_summary(cfg, rows, chash, b.drift) + "\n")
    outputs["summary"] = str(summary_path)
    flags = sum(1 for r in rows if r["flag"] and r["flag"] != "reported")
    manifest = RunManifest(chash, __version__, cfg.seed, outputs, wall, n_workers, flags, cfg.data)
    (out_dir / "manifest.json").write_text(manifest.to_json() + "\n")
    return manifest
