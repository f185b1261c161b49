"""Experiment definitions for the command-line runner.

Each experiment evaluates one ``(size, seed)`` cell at a time and then
aggregates across cells.  Both stages return named :class:`Check` results;
the run passes only if every check passes.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import numpy as np

from . import ensembles as ens
from . import mazeworld as mz
from . import spectra as sp
from . import transferability as tr
from .calibration import DEFAULT_Z_GRID, EXPONENTS, Constants
from .errors import ConfigurationError

__all__ = ["Check", "CellResult", "Experiment", "EXPERIMENTS", "DEFAULT_PARAMS"]

REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    observed: Any = None
    bound: Any = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CellResult:
    experiment: str
    size: int
    seed: int
    report: dict
    checks: list[Check]
    rows: list[dict] | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"schema_version": REPORT_SCHEMA_VERSION, "experiment": self.experiment,
                "size": self.size, "seed": self.seed, "passed": self.passed,
                "checks": [c.to_dict() for c in self.checks], "report": self.report}


DEFAULT_PARAMS: dict[str, Any] = {
    "zero_tol": sp.DEFAULT_ZERO_TOL,
    "row_sum_tol": 1e-12,
    "top_k": 100,
    "ks_tol": 0.02,
    "trace_tol": 1e-10,
    "omegas": [0.9, 0.7, 0.5],
    "informative_row_fraction": 0.1,
    "z_grid": [[z.real, z.imag] for z in DEFAULT_Z_GRID],
    "n_targets": 20,
    "n_potentials": 5,
    "potential_scale": 10.0,
    "maze_gamma": 0.9,
    "maze_slip": 0.1,
    "tie_tol": tr.TIE_TOL,
    "return_gap_tol": 1e-8,
    "policy_pairs": 1000,
    "expectation_tol": 1e-12,
    "y_mean": 1.0,
    "y_var": 1.0,
    "learning_rate": 0.1,
}


def _uninformative(n: int, seed: int):
    spec = ens.EnsembleSpec(n, seed=seed)
    x = ens.sample_raw(spec)
    return spec, x


def _non_decreasing(seq) -> bool:
    return all(b >= a for a, b in zip(seq, seq[1:]))


def _by_size(cells: list[CellResult], key: str) -> dict[int, list[float]]:
    out: dict[int, list[float]] = {}
    for c in cells:
        out.setdefault(c.size, []).append(c.report[key])
    return out


# -- spectra_uninformative --------------------------------------------------

def _spectra_uninformative(n, seed, p, k: Constants) -> CellResult:
    spec, x = _uninformative(n, seed)
    w = ens.subtract_identity(ens.build_transition(x, spec))
    rep = sp.singular_spectrum(w, p["zero_tol"], symmetric=False)
    row_sum = float(np.max(np.abs(w.sum(axis=1))))
    bound = k.bound("K_W", n)
    checks = [
        Check("row_sums_zero", row_sum <= p["row_sum_tol"], row_sum, p["row_sum_tol"]),
        Check("single_zero_singular_value", rep.zero_count == 1, rep.zero_count, 1),
        Check("rank_condition", sp.rank_condition_holds(rep), rep.rank_estimate, n - 1),
        Check("max_dev_within_K_W", rep.max_dev_from_one <= bound, rep.max_dev_from_one, bound),
    ]
    rows = sp.spectrum_rows(singular_values=rep.singular_values,
                            deviations=np.abs(rep.singular_values - 1.0))
    return CellResult("spectra_uninformative", n, seed, rep.to_dict(include_values=False),
                      checks, rows)


def _spectra_uninformative_agg(cells, p, k) -> list[Check]:
    means = {n: float(np.mean(v)) for n, v in sorted(_by_size(cells, "max_dev_from_one").items())}
    if len(means) < 2:
        return []
    seq = list(means.values())
    return [Check("mean_max_dev_decreases_in_n", all(b < a for a, b in zip(seq, seq[1:])),
                  {str(n): v for n, v in means.items()})]


# -- spectra_informative ----------------------------------------------------

def informative_rows(n: int, fraction: float) -> range:
    return range(max(1, math.ceil(fraction * n)))


def _spectra_informative(n, seed, p, k) -> CellResult:
    rows = informative_rows(n, p["informative_row_fraction"])
    devs, checks = {}, []
    for omega in p["omegas"]:
        spec = ens.EnsembleSpec.with_prefix_mask(n, rows, omega, seed=seed)
        tm = ens.build_transition(ens.sample_raw(spec), spec)
        rep = sp.singular_spectrum(ens.subtract_identity(tm), p["zero_tol"], symmetric=False)
        devs[str(omega)] = rep.max_dev_from_one
        checks.append(Check(f"rank_condition_omega_{omega}", sp.rank_condition_holds(rep),
                            rep.rank_estimate, n - 1))
    report = {"informative_rows": len(rows), "max_dev_by_omega": devs}
    return CellResult("spectra_informative", n, seed, report, checks)


def _spectra_informative_agg(cells, p, k) -> list[Check]:
    checks = []
    omegas = sorted(p["omegas"], reverse=True)
    for n in sorted({c.size for c in cells}):
        sel = [c for c in cells if c.size == n]
        means = [float(np.mean([c.report["max_dev_by_omega"][str(o)] for c in sel]))
                 for o in omegas]
        checks.append(Check(f"n{n}_mean_max_dev_non_decreasing_as_omega_drops",
                            _non_decreasing(means), dict(zip(map(str, omegas), means))))
    return checks


# -- mp_rigidity -----------------------------------------------------------

def _mp_rigidity(n, seed, p, k) -> CellResult:
    _, x = _uninformative(n, seed)
    cm = ens.center_and_scale(x)
    eigs = sp.covariance_eigenvalues(cm.Q)
    gam = sp.mp_quantiles(n)
    top = min(p["top_k"], n)
    dev = sp.rigidity_deviations(eigs, gam, top)
    ks = sp.kolmogorov_distance(eigs, sp.mp_cdf)
    checks = [
        Check("gamma_1_equals_4", gam[0] == 4.0, float(gam[0]), 4.0),
        Check("rigidity_within_K_rig", float(dev.max()) <= k["K_rig"], float(dev.max()), k["K_rig"]),
        Check("global_law_ks", ks <= p["ks_tol"], ks, p["ks_tol"]),
    ]
    rows = sp.spectrum_rows(eigenvalues=eigs[:top], quantiles=gam[:top], deviations=dev)
    report = {"top_k": top, "max_scaled_deviation": float(dev.max()), "ks_distance": ks,
              "top_eigenvalues": eigs[:top].tolist(), "quantiles": gam[:top].tolist()}
    return CellResult("mp_rigidity", n, seed, report, checks, rows)


# -- lemma_probes -----------------------------------------------------------

_PROBED = (("d_minus_identity", "K_D"), ("b_asymmetry", "K_B"), ("top_eigenvalue_gap", "K_lambda"))


def _lemma_probes(n, seed, p, k) -> CellResult:
    _, x = _uninformative(n, seed)
    gaps = sp.verify_lemma_bounds(ens.center_and_scale(x))
    checks = [Check("non_degenerate", not gaps.degenerate)]
    for attr, const in _PROBED:
        v = getattr(gaps, attr)
        checks.append(Check(f"{attr}_within_{const}", v <= k.bound(const, n), v, k.bound(const, n)))
    return CellResult("lemma_probes", n, seed, gaps.to_dict(), checks)


def _lemma_probes_agg(cells, p, k) -> list[Check]:
    live = [c for c in cells if not c.report["degenerate"]]
    checks = []
    for attr, const in _PROBED:
        probe = sp.domination_probe(attr, EXPONENTS[const][0], _by_size(live, attr), k[const])
        checks.append(Check(f"probe_{attr}", probe.passed, probe.to_dict()))
        if len(probe.sizes) > 1:
            checks.append(Check(f"probe_{attr}_decreasing", probe.decreasing,
                                {str(n): v for n, v in probe.observed_max.items()}))
    dinv = _by_size(live, "d_inverse_norm")
    checks.append(Check("d_inverse_norm_observed", True,
                        {str(n): max(v) for n, v in sorted(dinv.items())}))
    return checks


# -- local_law --------------------------------------------------------------

def _local_law(n, seed, p, k) -> CellResult:
    _, x = _uninformative(n, seed)
    grid = [complex(a, b) for a, b in p["z_grid"]]
    pts = sp.local_law_probe(ens.center_and_scale(x), grid)
    trace = max(pt.trace_identity_error for pt in pts)
    worst = max(pt.worst_ratio for pt in pts)
    checks = [Check("trace_identity", trace <= p["trace_tol"], trace, p["trace_tol"]),
              Check("local_law_within_K_L", worst <= k["K_L"], worst, k["K_L"])]
    return CellResult("local_law", n, seed, {"points": [pt.to_dict() for pt in pts]}, checks)


# -- transfer_study ---------------------------------------------------------

def _maze_side(n: int) -> int:
    side = math.isqrt(n)
    if side * side != n:
        raise ConfigurationError(f"maze experiments need a square state count, got {n}")
    return side


def _transfer_study(n, seed, p, k) -> CellResult:
    side = _maze_side(n)
    maze = mz.MazeSpec(side, side, goal_state=side - 1, slip_prob=p["maze_slip"])
    mdp = mz.build_maze_mdp(maze, gamma=p["maze_gamma"])
    rng = np.random.default_rng([seed, n])
    diag = tr.diagnose_transferability(mdp)
    pots = tr.recoverable_potentials(diag, n, p["n_potentials"], rng, p["potential_scale"],
                                     gamma=p["maze_gamma"])
    targets = tr.random_target_kernels(mdp, p["n_targets"], rng)
    study = tr.transfer_study(mdp, targets, pots, p["tie_tol"])
    checks = [
        Check("nullspace_dim_one", diag.nullspace_dim == 1, diag.nullspace_dim, 1),
        Check("nullspace_constant", diag.nullspace_is_constants),
        Check("target_policy_match", study.min_target_match == 1.0, study.min_target_match, 1.0),
        Check("return_gap", study.max_return_gap <= p["return_gap_tol"],
              study.max_return_gap, p["return_gap_tol"]),
    ]
    return CellResult("transfer_study", n, seed, study.to_dict(), checks)


# -- barrier_sweep ----------------------------------------------------------

def _barrier_sweep(n, seed, p, k) -> CellResult:
    side = _maze_side(n)
    devs, widths, checks = {}, {}, []
    for label, maze in mz.barrier_sweep_specs(side, side, slip_prob=p["maze_slip"]):
        spec = mz.barrier_masked_ensemble(maze, ens.EnsembleSpec(n, seed=seed))
        tm = ens.build_transition(ens.sample_raw(spec), spec)
        rep = sp.singular_spectrum(ens.subtract_identity(tm), p["zero_tol"], symmetric=False)
        devs[label] = rep.max_dev_from_one
        widths[label] = maze.total_barrier_width
        checks.append(Check(f"rank_condition_{label}", sp.rank_condition_holds(rep),
                            rep.rank_estimate, n - 1))
    return CellResult("barrier_sweep", n, seed, {"max_dev": devs, "barrier_width": widths}, checks)


def _barrier_sweep_agg(cells, p, k) -> list[Check]:
    checks = []
    for n in sorted({c.size for c in cells}):
        sel = [c for c in cells if c.size == n]
        labels = sorted(sel[0].report["barrier_width"], key=sel[0].report["barrier_width"].get)
        means = [float(np.mean([c.report["max_dev"][lab] for c in sel])) for lab in labels]
        checks.append(Check(f"n{n}_mean_max_dev_non_decreasing_in_barrier_width",
                            _non_decreasing(means), dict(zip(labels, means))))
    return checks


# -- variance_demo ----------------------------------------------------------

def _variance_demo(n, seed, p, k) -> CellResult:
    """``size`` is the number of actions here."""
    rng = np.random.default_rng([seed, n])
    pairs = rng.dirichlet(np.ones(n), size=(p["policy_pairs"], 2))
    worst_mean, min_var, min_excess = 0.0, np.inf, np.inf
    for pi, pi_b in pairs:
        st = tr.importance_ratio_stats(pi, pi_b)
        worst_mean = max(worst_mean, abs(st.expectation - 1.0))
        min_var = min(min_var, st.variance)
        off = tr.update_variance_decomposition(pi, pi_b, p["y_mean"], p["y_var"], p["learning_rate"])
        on = tr.update_variance_decomposition(pi_b, pi_b, p["y_mean"], p["y_var"], p["learning_rate"])
        min_excess = min(min_excess, off.total - on.total)
    on_var = max(tr.importance_ratio_stats(pb, pb).variance for _, pb in pairs)
    checks = [
        Check("ratio_mean_is_one", worst_mean <= p["expectation_tol"], worst_mean, p["expectation_tol"]),
        Check("ratio_variance_nonnegative", min_var >= 0.0, min_var, 0.0),
        Check("on_policy_variance_zero", on_var == 0.0, on_var, 0.0),
        Check("off_policy_update_variance_dominates", min_excess >= 0.0, min_excess, 0.0),
    ]
    report = {"pairs": int(p["policy_pairs"]), "max_abs_mean_error": worst_mean,
              "min_variance": min_var, "min_off_minus_on": min_excess}
    return CellResult("variance_demo", n, seed, report, checks)


@dataclass(frozen=True)
class Experiment:
    name: str
    cell: Callable[..., CellResult]
    aggregate: Callable[..., list[Check]] = field(default=lambda cells, p, k: [])


EXPERIMENTS: dict[str, Experiment] = {
    e.name: e for e in (
        Experiment("spectra_uninformative", _spectra_uninformative, _spectra_uninformative_agg),
        Experiment("spectra_informative", _spectra_informative, _spectra_informative_agg),
        Experiment("mp_rigidity", _mp_rigidity),
        Experiment("lemma_probes", _lemma_probes, _lemma_probes_agg),
        Experiment("local_law", _local_law),
        Experiment("transfer_study", _transfer_study),
        Experiment("barrier_sweep", _barrier_sweep, _barrier_sweep_agg),
        Experiment("variance_demo", _variance_demo),
    )
}
