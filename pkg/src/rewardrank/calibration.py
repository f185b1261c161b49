"""Frozen domination constants and the calibration run that produces them.

Rate claims of the form ``X < n^{-beta}`` hide their constants, so each one
is measured once over a seed grid, inflated by a safety margin, written to a
constants file and then used unchanged by every assertion.
"""
from __future__ import annotations

import datetime as _dt
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import ensembles as ens
from . import spectra as sp
from .errors import CalibrationError, ConfigurationError

__all__ = [
    "EXPONENTS",
    "Constants",
    "load_constants",
    "default_constants_path",
    "calibration_cell",
    "calibrate",
    "DEFAULT_Z_GRID",
    "MIN_CALIBRATION_SEEDS",
]

SCHEMA = "rewardrank.constants/1"
MIN_CALIBRATION_SEEDS = 20
DEFAULT_MARGIN = 1.5

# constant name -> (rate exponent beta, description)
EXPONENTS = {
    "K_W": (0.25, "max_{j<n} |s_j(P - I) - 1|"),
    "K_D": (0.5, "||D - I||"),
    "K_B": (0.25, "||B - Btilde||"),
    "K_lambda": (2.0 / 3.0, "|lambda_1(QQ^T) - 4|"),
    "K_rig": (0.0, "top-k scaled rigidity deviation"),
    "K_L": (0.0, "local-law deviation / Psi(z)"),
}

DEFAULT_Z_GRID = tuple(complex(E, eta) for E in (3.0, 3.5, 4.0, 4.5, 5.0) for eta in (1.0, 0.5))


@dataclass(frozen=True)
class Constants:
    values: dict[str, float]
    margin: float = DEFAULT_MARGIN
    provenance: dict = field(default_factory=dict)
    source: str = ""

    def __getitem__(self, name: str) -> float:
        try:
            return self.values[name]
        except KeyError:
            raise ConfigurationError(f"constants file lacks {name}") from None

    def bound(self, name: str, n: int) -> float:
        """``K * n^{-beta}`` for the named constant."""
        return self[name] * n ** (-EXPONENTS[name][0])

    def with_overrides(self, overrides: dict[str, float]) -> Constants:
        vals = dict(self.values)
        vals.update({k: float(v) for k, v in overrides.items() if k in EXPONENTS})
        return Constants(vals, self.margin, self.provenance, self.source)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "constants": self.values,
            "exponents": {k: EXPONENTS[k][0] for k in self.values},
            "margin": self.margin,
            "provenance": self.provenance,
        }


def default_constants_path():
    return resources.files("rewardrank") / "data" / "constants.json"


def load_constants(path: str | Path | None = None) -> Constants:
    src = default_constants_path() if path is None else Path(path)
    try:
        data = json.loads(src.read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"constants file {src} not found") from None
    if data.get("schema") != SCHEMA:
        raise ConfigurationError(f"{src}: unknown constants schema {data.get('schema')!r}")
    return Constants({k: float(v) for k, v in data["constants"].items()},
                     float(data.get("margin", DEFAULT_MARGIN)), data.get("provenance", {}),
                     str(src))


def calibration_cell(n: int, seed: int, top_k: int = 100, z_grid: Sequence[complex] = (),
                     zero_tol: float = sp.DEFAULT_ZERO_TOL) -> dict[str, float]:
    """Scaled observations ``value * n^beta`` for one uninformative sample."""
    spec = ens.EnsembleSpec(n, seed=seed)
    x = ens.sample_raw(spec)
    rep = sp.singular_spectrum(ens.subtract_identity(ens.build_transition(x, spec)),
                               zero_tol, symmetric=False)
    cm = ens.center_and_scale(x)
    gaps = sp.verify_lemma_bounds(cm)
    eigs = sp.covariance_eigenvalues(cm.Q)
    out = {
        "K_W": rep.max_dev_from_one * n ** EXPONENTS["K_W"][0],
        "K_D": gaps.d_minus_identity * n ** EXPONENTS["K_D"][0],
        "K_B": gaps.b_asymmetry * n ** EXPONENTS["K_B"][0],
        "K_lambda": gaps.top_eigenvalue_gap * n ** EXPONENTS["K_lambda"][0],
        "K_rig": sp.rigidity_check(eigs, sp.mp_quantiles(n), min(top_k, n)),
        "d_inverse_norm": gaps.d_inverse_norm,
    }
    if z_grid:
        out["K_L"] = max(p.worst_ratio for p in sp.local_law_probe(cm, z_grid))
    return out


def calibrate(sizes: Iterable[int], seeds: Sequence[int], out_path: str | Path,
              overwrite: bool = False, margin: float = DEFAULT_MARGIN, top_k: int = 100,
              local_law_sizes: Iterable[int] = (400,), z_grid: Sequence[complex] = DEFAULT_Z_GRID,
              progress: Callable[[str], None] | None = None,
              today: str | None = None) -> Constants:
    """Measure every constant over ``sizes x seeds`` and write the constants file.

    Each constant is ``margin`` times the largest scaled observation, so it
    dominates every calibration point.
    """
    sizes = sorted(set(int(n) for n in sizes))
    seeds = list(seeds)
    if not sizes:
        raise CalibrationError("calibration needs at least one size")
    if len(seeds) < MIN_CALIBRATION_SEEDS:
        raise CalibrationError(
            f"calibration needs >= {MIN_CALIBRATION_SEEDS} seeds per size, got {len(seeds)}")
    if margin < 1.0:
        raise CalibrationError("margin below 1 would not dominate the calibration data")
    out_path = Path(out_path)
    if out_path.exists() and not overwrite:
        raise CalibrationError(f"{out_path} exists; pass overwrite to replace it")
    ll_sizes = set(int(n) for n in local_law_sizes)
    observed: dict[str, dict[int, float]] = {}
    for n in sizes:
        for seed in seeds:
            cell = calibration_cell(n, seed, top_k, z_grid if n in ll_sizes else ())
            for name, v in cell.items():
                slot = observed.setdefault(name, {})
                slot[n] = max(slot.get(n, -np.inf), v)
            if progress:
                progress(f"calibrated n={n} seed={seed}")
    if "K_L" not in observed:
        raise CalibrationError("no local-law size among the calibration sizes")
    values = {name: margin * max(observed[name].values()) for name in EXPONENTS}
    provenance = {
        "sizes": sizes,
        "seeds": seeds,
        "local_law_sizes": sorted(ll_sizes & set(sizes)),
        "z_grid": [[z.real, z.imag] for z in z_grid],
        "top_k": top_k,
        "date": today or _dt.date.today().isoformat(),
        "observed_max_scaled": {k: {str(n): v for n, v in d.items()}
                                for k, d in observed.items()},
    }
    consts = Constants(values, margin, provenance, str(out_path))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(consts.to_dict(), indent=2, sort_keys=True) + "\n")
    return consts
