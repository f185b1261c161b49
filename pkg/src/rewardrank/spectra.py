"""Spectra of sampled transition models and the Marchenko-Pastur reference law.

The reference law here is the square (ratio one) Marchenko-Pastur law with
unit variance: density ``sqrt((4 - x) x) / (2 pi x)`` on ``(0, 4]``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg

from .ensembles import CenteredMatrices
from .errors import DomainError, NumericError

__all__ = [
    "DEFAULT_ZERO_TOL",
    "SpectrumReport",
    "MPLaw",
    "DominationProbe",
    "NormGaps",
    "LocalLawPoint",
    "singular_spectrum",
    "rank_condition_holds",
    "esd",
    "EmpiricalSpectralDistribution",
    "kolmogorov_distance",
    "esd_sup_distance",
    "stieltjes_empirical",
    "mp_density",
    "mp_cdf",
    "mp_stieltjes",
    "mp_quantiles",
    "psi",
    "covariance_eigenvalues",
    "rigidity_deviations",
    "rigidity_check",
    "verify_lemma_bounds",
    "local_law_probe",
    "fit_domination_constant",
    "domination_probe",
    "elimination_rank",
    "spectrum_rows",
    "write_spectrum_csv",
    "SPECTRUM_CSV_COLUMNS",
]

DEFAULT_ZERO_TOL = 1e-8
MP_RIGHT_EDGE = 4.0


def _check_finite(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise NumericError("matrix has non-finite entries")
    return a


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    singular_values: np.ndarray
    eigenvalues: np.ndarray | None
    rank_estimate: int
    zero_count: int
    max_dev_from_one: float
    matrix_size: int
    zero_tol: float = DEFAULT_ZERO_TOL

    def to_dict(self, include_values: bool = True) -> dict:
        out = {
            "matrix_size": self.matrix_size,
            "rank_estimate": self.rank_estimate,
            "zero_count": self.zero_count,
            "max_dev_from_one": self.max_dev_from_one,
            "zero_tol": self.zero_tol,
            "smallest_singular_value": float(self.singular_values[-1]),
        }
        if include_values:
            out["singular_values"] = self.singular_values.tolist()
            out["eigenvalues"] = None if self.eigenvalues is None else self.eigenvalues.tolist()
        return out


def singular_spectrum(A: np.ndarray, zero_tol: float = DEFAULT_ZERO_TOL,
                      symmetric: bool | None = None) -> SpectrumReport:
    """Full singular spectrum of ``A`` plus rank bookkeeping.

    ``max_dev_from_one`` is taken over all but the smallest singular value.
    Eigenvalues are reported when ``A`` is symmetric (detected exactly unless
    ``symmetric`` is given).
    """
    a = _check_finite(A)
    n = a.shape[0]
    s = np.linalg.svd(a, compute_uv=False)
    if symmetric is None:
        symmetric = a.shape[0] == a.shape[1] and np.array_equal(a, a.T)
    eig = np.linalg.eigvalsh(a)[::-1].copy() if symmetric else None
    rank = int(np.count_nonzero(s > zero_tol))
    dev = float(np.max(np.abs(s[:-1] - 1.0))) if s.size > 1 else 0.0
    return SpectrumReport(s, eig, rank, s.size - rank, dev, n, zero_tol)


def rank_condition_holds(report: SpectrumReport) -> bool:
    """True iff the matrix (meant to be ``P - I``) has rank exactly ``n - 1``."""
    return report.rank_estimate == report.matrix_size - 1


class EmpiricalSpectralDistribution:
    """Right-continuous step CDF placing mass ``1/n`` on each value."""

    def __init__(self, values: Iterable[float]):
        self.values = np.sort(np.asarray(values, dtype=np.float64).ravel())
        self.n = self.values.size

    def __call__(self, x):
        return np.searchsorted(self.values, x, side="right") / self.n


def esd(values: Iterable[float]) -> EmpiricalSpectralDistribution:
    return EmpiricalSpectralDistribution(values)


def kolmogorov_distance(values: Iterable[float], cdf: Callable) -> float:
    """``sup_x |F_n(x) - F(x)|`` for a continuous reference CDF ``F``."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = v.size
    f = np.asarray(cdf(v), dtype=np.float64)
    k = np.arange(1, n + 1)
    return float(max(np.max(k / n - f), np.max(f - (k - 1) / n)))


def esd_sup_distance(values_a: Iterable[float], values_b: Iterable[float]) -> tuple[int, float]:
    """Exact sup distance between two ESDs of equal size.

    Returns ``(count, count / n)`` where ``count`` is the largest absolute
    difference of ``#{lambda <= x}`` over all ``x``.
    """
    a = np.sort(np.asarray(values_a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(values_b, dtype=np.float64).ravel())
    if a.size != b.size:
        raise ValueError("ESDs must have the same number of atoms")
    pts = np.concatenate([a, b])
    diff = np.searchsorted(a, pts, side="right") - np.searchsorted(b, pts, side="right")
    count = int(np.max(np.abs(diff)))
    return count, count / a.size


def _require_upper(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.complex128)
    if np.any(~(z.imag > 0)):
        raise DomainError("spectral parameter must satisfy Im z > 0")
    return z


def stieltjes_empirical(eigenvalues: Iterable[float], z: complex) -> complex:
    """``n^{-1} sum_j 1 / (lambda_j - z)``."""
    z = complex(_require_upper(z))
    lam = np.asarray(eigenvalues, dtype=np.float64).ravel()
    return complex(np.mean(1.0 / (lam - z)))


def mp_density(x):
    x = np.asarray(x, dtype=np.float64)
    inside = (x > 0) & (x <= MP_RIGHT_EDGE)
    safe = np.where(inside, x, 1.0)
    out = np.sqrt(np.clip((MP_RIGHT_EDGE - safe) * safe, 0.0, None)) / (2 * np.pi * safe)
    return np.where(inside, out, 0.0)


def _theta_cdf(theta):
    # F(4 sin^2 t) = (4/pi) * int_0^t cos^2 = (2/pi) (t + sin t cos t)
    return (2.0 / np.pi) * (theta + np.sin(theta) * np.cos(theta))


def mp_cdf(x):
    """CDF of the Marchenko-Pastur law, via the substitution ``x = 4 sin^2 t``."""
    x = np.asarray(x, dtype=np.float64)
    theta = np.arcsin(np.sqrt(np.clip(x, 0.0, MP_RIGHT_EDGE) / MP_RIGHT_EDGE))
    return np.where(x >= MP_RIGHT_EDGE, 1.0, _theta_cdf(theta))


def mp_stieltjes(z):
    """Stieltjes transform ``(-z + sqrt((z - 2)^2 - 4)) / (2 z)``.

    The square-root branch is picked per point so that the result lies in the
    upper half-plane.
    """
    z = _require_upper(z)
    root = np.sqrt((z - 2.0) ** 2 - 4.0)
    m = (-z + root) / (2.0 * z)
    other = (-z - root) / (2.0 * z)
    m = np.where(m.imag > 0, m, other)
    return complex(m) if m.ndim == 0 else m


def mp_quantiles(n: int) -> np.ndarray:
    """Descending ``gamma_1 >= ... >= gamma_n`` with ``F(gamma_j) = (n - j + 1) / n``."""
    if n < 1:
        raise ValueError("n must be positive")
    p = (n - np.arange(1, n + 1) + 1) / n
    target = p * (np.pi / 2.0)
    lo = np.zeros(n)
    hi = np.full(n, np.pi / 2.0)
    # t + sin t cos t is increasing on [0, pi/2]; 90 halvings reach float resolution
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        below = mid + np.sin(mid) * np.cos(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    gamma = MP_RIGHT_EDGE * np.sin(0.5 * (lo + hi)) ** 2
    gamma[0] = MP_RIGHT_EDGE
    return gamma


@dataclass(frozen=True)
class MPLaw:
    """Square Marchenko-Pastur law; a thin namespace over the module functions."""

    edge_left: float = 0.0
    edge_right: float = MP_RIGHT_EDGE

    density = staticmethod(mp_density)
    cdf = staticmethod(mp_cdf)
    stieltjes = staticmethod(mp_stieltjes)
    quantiles = staticmethod(mp_quantiles)


def psi(z: complex, n: int) -> float:
    """Local-law error scale ``sqrt(Im m / (n eta)) + 1 / (n eta)``."""
    eta = complex(z).imag
    return math.sqrt(mp_stieltjes(z).imag / (n * eta)) + 1.0 / (n * eta)


def covariance_eigenvalues(Q: np.ndarray) -> np.ndarray:
    """Eigenvalues of ``Q Q^T`` in descending order."""
    q = _check_finite(Q)
    return np.linalg.eigvalsh(q @ q.T)[::-1].copy()


def rigidity_deviations(eigenvalues: Sequence[float], quantiles: Sequence[float],
                        top_k: int) -> np.ndarray:
    """``|lambda_i - gamma_i| / (n^{-2/3} min(i, n + 1 - i)^{-1/3})`` for ``i <= top_k``."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    gam = np.asarray(quantiles, dtype=np.float64)
    n = lam.size
    if gam.size != n:
        raise ValueError("eigenvalues and quantiles must have equal length")
    if not 1 <= top_k <= n:
        raise ValueError("top_k must lie in [1, n]")
    i = np.arange(1, top_k + 1)
    scale = n ** (-2.0 / 3.0) * np.minimum(i, n + 1 - i) ** (-1.0 / 3.0)
    return np.abs(lam[:top_k] - gam[:top_k]) / scale


def rigidity_check(eigenvalues, quantiles, top_k: int) -> float:
    return float(np.max(rigidity_deviations(eigenvalues, quantiles, top_k)))


@dataclass(frozen=True)
class NormGaps:
    """Observed sizes of the quantities bounded in the proof chain."""

    size: int
    d_minus_identity: float      # ||D - I|| = max_i |xbar_i - 1|
    b_asymmetry: float           # ||B - Btilde||
    top_eigenvalue: float        # lambda_1(Q Q^T)
    top_eigenvalue_gap: float    # |lambda_1(Q Q^T) - 4|
    d_inverse_norm: float        # ||D^{-1}||
    degenerate: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _top_gram_eigenvalue(a: np.ndarray) -> float:
    """``lambda_1(a a^T) = ||a||^2``, from a partial symmetric eigensolve."""
    n = a.shape[0]
    return float(scipy.linalg.eigvalsh(a @ a.T, subset_by_index=[n - 1, n - 1])[0])


def verify_lemma_bounds(cm: CenteredMatrices, variance_floor: float = 1e-12) -> NormGaps:
    """Measure ``||D-I||``, ``||B-Btilde||``, ``|lambda_1(QQ^T)-4|`` and ``||D^-1||``.

    Samples whose centred rows carry (almost) no variance are flagged
    ``degenerate``; rate probes should skip them.
    """
    n = cm.size
    xbar = cm.row_means
    q = cm.Q
    top = _top_gram_eigenvalue(q)
    return NormGaps(
        size=n,
        d_minus_identity=float(np.max(np.abs(xbar - 1.0))),
        b_asymmetry=math.sqrt(max(_top_gram_eigenvalue(cm.B - cm.Btilde), 0.0)),
        top_eigenvalue=top,
        top_eigenvalue_gap=abs(top - MP_RIGHT_EDGE),
        d_inverse_norm=float(np.max(1.0 / xbar)),
        degenerate=bool(np.sum(q * q) / n < variance_floor),
    )


@dataclass(frozen=True)
class LocalLawPoint:
    z: complex
    psi: float
    max_offdiag: float
    max_diag_dev: float
    stieltjes_dev: float
    trace_identity_error: float

    @property
    def worst_ratio(self) -> float:
        return max(self.max_offdiag, self.max_diag_dev, self.stieltjes_dev) / self.psi

    def to_dict(self) -> dict:
        d = asdict(self)
        d["z"] = [self.z.real, self.z.imag]
        d["worst_ratio"] = self.worst_ratio
        return d


def local_law_probe(Q: np.ndarray | CenteredMatrices, z_grid: Iterable[complex],
                    c: float = 1.0, c_plus: float = 6.0, eps: float = 0.1) -> list[LocalLawPoint]:
    """Resolvent ``G(z) = (Q Q^T - z)^{-1}`` against the Marchenko-Pastur law.

    Each ``z = E + i eta`` must satisfy ``4 - c <= E <= c_plus`` and
    ``n^{-1+eps} <= eta <= 1``.
    """
    q = Q.Q if isinstance(Q, CenteredMatrices) else _check_finite(Q)
    n = q.shape[0]
    s = q @ q.T
    lam = np.linalg.eigvalsh(s)
    eye = np.eye(n)
    out = []
    for z in z_grid:
        z = complex(z)
        if not z.imag > 0:
            raise DomainError(f"z = {z} is not in the upper half-plane")
        if not (MP_RIGHT_EDGE - c <= z.real <= c_plus and n ** (-1 + eps) <= z.imag <= 1.0):
            raise DomainError(f"z = {z} outside the local-law domain")
        g = np.linalg.solve(s - z * eye, eye.astype(np.complex128))
        m = mp_stieltjes(z)
        diag = np.diag(g)
        off = g - np.diag(diag)
        mean_diag = complex(np.mean(diag))
        m_n = stieltjes_empirical(lam, z)
        out.append(LocalLawPoint(
            z=z,
            psi=psi(z, n),
            max_offdiag=float(np.max(np.abs(off))),
            max_diag_dev=float(np.max(np.abs(diag - m))),
            stieltjes_dev=abs(m_n - m),
            trace_identity_error=abs(mean_diag - m_n),
        ))
    return out


@dataclass(frozen=True)
class DominationProbe:
    """Empirical check of ``quantity <= K n^{-beta}`` over several sizes."""

    quantity_name: str
    exponent_beta: float
    sizes: tuple[int, ...]
    seeds_per_size: int
    observed_max: dict[int, float]
    constant: float
    passed: bool
    decreasing: bool
    observed_constant: float = field(default=float("nan"))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["observed_max"] = {str(k): v for k, v in self.observed_max.items()}
        return d


def fit_domination_constant(observations: Mapping[int, Sequence[float]], beta: float) -> float:
    """Smallest ``K`` with ``max(obs_n) <= K n^{-beta}`` for every probed ``n``."""
    return max(max(v) * n ** beta for n, v in observations.items())


def domination_probe(name: str, beta: float, observations: Mapping[int, Sequence[float]],
                     constant: float) -> DominationProbe:
    sizes = tuple(sorted(observations))
    obs_max = {n: float(max(observations[n])) for n in sizes}
    passed = all(obs_max[n] <= constant * n ** (-beta) for n in sizes)
    seq = [obs_max[n] for n in sizes]
    decreasing = all(b < a for a, b in zip(seq, seq[1:]))
    seeds = min(len(observations[n]) for n in sizes)
    return DominationProbe(name, beta, sizes, seeds, obs_max, float(constant), passed,
                           decreasing, fit_domination_constant(observations, beta))


def elimination_rank(A: np.ndarray, pivot_tol: float = 1e-10) -> int:
    """Rank by Gaussian elimination with complete pivoting.

    Elimination stops when the largest remaining entry falls below
    ``pivot_tol`` times the largest entry of ``A``.  Independent of any SVD.
    """
    a = _check_finite(A).copy()
    m, n = a.shape
    scale = np.max(np.abs(a)) if a.size else 0.0
    if scale == 0.0:
        return 0
    thresh = pivot_tol * scale
    rank = 0
    for k in range(min(m, n)):
        sub = np.abs(a[k:, k:])
        idx = int(np.argmax(sub))
        pi, pj = divmod(idx, sub.shape[1])
        if sub[pi, pj] <= thresh:
            break
        pi += k
        pj += k
        a[[k, pi], :] = a[[pi, k], :]
        a[:, [k, pj]] = a[:, [pj, k]]
        factors = a[k + 1:, k] / a[k, k]
        a[k + 1:, k:] -= np.outer(factors, a[k, k:])
        rank += 1
    return rank


SPECTRUM_CSV_COLUMNS = ("index", "singular_value", "eigenvalue", "quantile", "deviation")


def spectrum_rows(singular_values=None, eigenvalues=None, quantiles=None,
                  deviations=None) -> list[dict]:
    """Rows for the plot-ready spectrum CSV; missing columns are left blank."""
    cols = {"singular_value": singular_values, "eigenvalue": eigenvalues,
            "quantile": quantiles, "deviation": deviations}
    length = max(len(v) for v in cols.values() if v is not None)
    rows = []
    for i in range(length):
        row = {"index": i + 1}
        for name, v in cols.items():
            row[name] = repr(float(v[i])) if v is not None and i < len(v) else ""
        rows.append(row)
    return rows


def write_spectrum_csv(path: str | Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SPECTRUM_CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
