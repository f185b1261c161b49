"""Random row-stochastic transition ensembles and the matrices derived from them.

A flat Dirichlet row is obtained by normalising i.i.d. Exp(1) draws.  The
informative (obstacle) prior forces a set of entries of chosen rows to zero
and normalises each such row over its remaining support.

Every replicate draws from its own PCG64 stream, keyed by ``(seed,
replicate_index)`` through :class:`numpy.random.SeedSequence`, so replicates
can be generated in any order or in parallel and still match bit for bit.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .errors import ConfigurationError, DegenerateSampleError

__all__ = [
    "InformativeRow",
    "EnsembleSpec",
    "TransitionModel",
    "CenteredMatrices",
    "replicate_rng",
    "sample_raw",
    "build_transition",
    "sample_transition",
    "center_and_scale",
    "subtract_identity",
    "write_matrix_binary",
    "read_matrix_binary",
    "write_matrix_csv",
    "read_matrix_csv",
]

_MASK_64 = (1 << 64) - 1


@dataclass(frozen=True)
class InformativeRow:
    """Obstacle prior for a single row.

    Either ``omega`` (keep the first ``omega * n`` columns, zero the rest) or
    an explicit ``zero_columns`` set is given.
    """

    row: int
    omega: float | None = None
    zero_columns: tuple[int, ...] | None = None

    def __post_init__(self):
        if (self.omega is None) == (self.zero_columns is None):
            raise ConfigurationError(
                "informative row needs exactly one of omega / zero_columns")
        if self.zero_columns is not None:
            object.__setattr__(self, "zero_columns",
                               tuple(sorted(set(int(c) for c in self.zero_columns))))

    def masked_columns(self, n: int) -> np.ndarray:
        if self.zero_columns is not None:
            return np.asarray(self.zero_columns, dtype=np.intp)
        return np.arange(_kept_count(self.omega, n), n, dtype=np.intp)

    def effective_omega(self, n: int) -> float:
        """Fraction of unmasked entries in the row."""
        if self.omega is not None:
            return float(self.omega)
        return 1.0 - len(self.zero_columns) / n

    def to_dict(self) -> dict[str, Any]:
        if self.omega is not None:
            return {"row": self.row, "omega": self.omega}
        return {"row": self.row, "zero_columns": list(self.zero_columns)}


def _kept_count(omega: float, n: int) -> int:
    if not 0.0 < omega <= 1.0:
        raise ConfigurationError(f"omega must lie in (0, 1], got {omega!r}")
    kept = omega * n
    k = int(round(kept))
    if abs(kept - k) > 1e-9 * max(1.0, kept) or k < 1:
        raise ConfigurationError(
            f"omega * n must be a positive integer, got {omega} * {n} = {kept}")
    return k


@dataclass(frozen=True)
class EnsembleSpec:
    """Description of a transition-matrix ensemble.

    Parameters
    ----------
    size : int
        Number of states ``n``.
    informative : sequence of InformativeRow
        Rows carrying an obstacle mask.  Empty means the uninformative
        flat-Dirichlet prior.
    replicates : int
        Number of independent samples described by this spec.
    seed : int
        Root seed; reduced modulo 2**64.
    """

    size: int
    informative: tuple[InformativeRow, ...] = ()
    replicates: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "informative", tuple(self.informative))
        n = self.size
        if not isinstance(n, (int, np.integer)) or n < 2:
            raise ConfigurationError(f"size must be an integer >= 2, got {n!r}")
        if self.replicates < 1:
            raise ConfigurationError("replicates must be positive")
        seen = set()
        for info in self.informative:
            if not 0 <= info.row < n:
                raise ConfigurationError(f"informative row {info.row} out of range")
            if info.row in seen:
                raise ConfigurationError(f"row {info.row} declared twice")
            seen.add(info.row)
            if info.omega is not None:
                _kept_count(info.omega, n)
            else:
                cols = info.zero_columns
                if cols and (cols[0] < 0 or cols[-1] >= n):
                    raise ConfigurationError(f"zero column out of range in row {info.row}")
                if len(cols) >= n:
                    raise ConfigurationError(f"row {info.row} would be fully masked")

    @classmethod
    def uninformative(cls, size: int, replicates: int = 1, seed: int = 0) -> EnsembleSpec:
        return cls(size=size, replicates=replicates, seed=seed)

    @classmethod
    def with_prefix_mask(cls, size: int, rows: Iterable[int], omega: float,
                         replicates: int = 1, seed: int = 0) -> EnsembleSpec:
        """Every row in ``rows`` keeps only its first ``omega * size`` columns."""
        info = tuple(InformativeRow(int(r), omega=omega) for r in rows)
        return cls(size=size, informative=info, replicates=replicates, seed=seed)

    @property
    def prior(self) -> str:
        return "informative" if self.informative else "uninformative"

    def zero_mask(self) -> np.ndarray:
        """Boolean ``n x n`` array, True on structurally zero entries."""
        mask = np.zeros((self.size, self.size), dtype=bool)
        for info in self.informative:
            mask[info.row, info.masked_columns(self.size)] = True
        return mask

    def to_dict(self) -> dict[str, Any]:
        return {
            "size": int(self.size),
            "prior": self.prior,
            "informative": [info.to_dict() for info in self.informative],
            "replicates": int(self.replicates),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> EnsembleSpec:
        info = tuple(
            InformativeRow(int(d["row"]), omega=d.get("omega"),
                           zero_columns=tuple(d["zero_columns"]) if "zero_columns" in d else None)
            for d in data.get("informative", ()))
        return cls(size=int(data["size"]), informative=info,
                   replicates=int(data.get("replicates", 1)), seed=int(data.get("seed", 0)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> EnsembleSpec:
        return cls.from_dict(json.loads(text))


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class TransitionModel:
    """Row-stochastic matrix together with its structural zero mask."""

    matrix: np.ndarray
    zero_mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        mask = np.asarray(self.zero_mask, dtype=bool)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or mask.shape != m.shape:
            raise ConfigurationError("transition matrix and mask must be square and aligned")
        if np.any(m < 0):
            raise ConfigurationError("transition matrix has negative entries")
        if np.any(m[mask] != 0):
            raise ConfigurationError("masked entries must be exactly zero")
        if np.max(np.abs(m.sum(axis=1) - 1.0)) > 1e-12:
            raise ConfigurationError("rows of a transition matrix must sum to 1")
        object.__setattr__(self, "matrix", _frozen(m.copy()))
        object.__setattr__(self, "zero_mask", _frozen(mask.copy()))

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def dense(cls, matrix) -> TransitionModel:
        """Wrap an explicit stochastic matrix; the mask marks its exact zeros."""
        m = np.asarray(matrix, dtype=np.float64)
        return cls(m, m == 0)


@dataclass(frozen=True, eq=False)
class CenteredMatrices:
    """Centred and rescaled versions of one raw sample ``X``.

    For a row with ``m`` unmasked entries and mean ``xbar`` over them::

        Q[i, j]      = n**-0.5 * (X[i, j] - xbar[i])          (0 when masked)
        Qtilde[i, j] = Q[i, j] / xbar[i]
        B[i, j]      = sqrt(n) / m * Qtilde[i, j]  = P[i, j] - 1/m

    so for unmasked rows ``B = n**-0.5 * Qtilde = P - ee^T / n``.  ``Btilde``
    mirrors the upper triangle of ``B`` (diagonal included) below it.
    """

    X: np.ndarray
    row_means: np.ndarray
    Q: np.ndarray
    Qtilde: np.ndarray
    B: np.ndarray
    Btilde: np.ndarray

    @property
    def D(self) -> np.ndarray:
        return np.diag(self.row_means)

    @property
    def size(self) -> int:
        return self.X.shape[0]


def replicate_rng(seed: int, replicate_index: int) -> np.random.Generator:
    """Independent generator for one replicate of a seeded ensemble."""
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK_64,
                                spawn_key=(int(replicate_index),))
    return np.random.Generator(np.random.PCG64(ss))


def sample_raw(spec: EnsembleSpec, replicate_index: int = 0) -> np.ndarray:
    """Draw the raw Exp(1) matrix ``X`` for one replicate.

    Exponentials come from the inverse CDF ``-log(1 - u)``; masked entries
    are zeroed after drawing so the unmasked draws do not depend on the mask.
    """
    if not 0 <= replicate_index < spec.replicates:
        raise ConfigurationError(
            f"replicate_index {replicate_index} outside [0, {spec.replicates})")
    n = spec.size
    u = replicate_rng(spec.seed, replicate_index).random((n, n))
    x = -np.log1p(-u)
    if spec.informative:
        x[spec.zero_mask()] = 0.0
    return x


def build_transition(X: np.ndarray, spec: EnsembleSpec | None = None) -> TransitionModel:
    """Normalise each row of ``X`` over its unmasked support."""
    x = np.array(X, dtype=np.float64)
    mask = spec.zero_mask() if spec is not None else np.zeros(x.shape, dtype=bool)
    x[mask] = 0.0
    sums = x.sum(axis=1)
    bad = np.flatnonzero(~(sums > 0))
    if bad.size:
        raise DegenerateSampleError(f"rows {bad[:5].tolist()} have zero sum over the support")
    p = x / sums[:, None]
    return TransitionModel(p, mask)


def sample_transition(spec: EnsembleSpec, replicate_index: int = 0) -> TransitionModel:
    return build_transition(sample_raw(spec, replicate_index), spec)


def center_and_scale(X: np.ndarray, zero_mask: np.ndarray | None = None) -> CenteredMatrices:
    x = np.array(X, dtype=np.float64)
    n = x.shape[0]
    if x.ndim != 2 or x.shape[1] != n:
        raise ConfigurationError("X must be square")
    if zero_mask is None:
        keep = np.ones_like(x, dtype=bool)
    else:
        keep = ~np.asarray(zero_mask, dtype=bool)
        x[~keep] = 0.0
    counts = keep.sum(axis=1)
    if np.any(counts == 0):
        raise DegenerateSampleError("a row has no unmasked entries")
    row_means = x.sum(axis=1) / counts
    if np.any(~(row_means > 0)):
        raise DegenerateSampleError("nonpositive row mean")
    q = np.where(keep, (x - row_means[:, None]) / np.sqrt(n), 0.0)
    qt = q / row_means[:, None]
    b = qt * (np.sqrt(n) / counts)[:, None]
    bt = np.triu(b) + np.triu(b, 1).T
    return CenteredMatrices(*(_frozen(a) for a in (x, row_means, q, qt, b, bt)))


def subtract_identity(P: TransitionModel | np.ndarray) -> np.ndarray:
    """``W = P - I``; its rows sum to zero."""
    m = P.matrix if isinstance(P, TransitionModel) else np.asarray(P, dtype=np.float64)
    return m - np.eye(m.shape[0])


# -- serialisation ---------------------------------------------------------

_MAGIC = b"RRMATRX1"
_HEADER = struct.Struct("<8sQ4s")  # magic, n, dtype tag
_DTYPE_TAG = b"<f8\x00"


def write_matrix_binary(path: str | Path, matrix: np.ndarray) -> None:
    """Square float64 matrix as a little-endian header plus row-major body."""
    m = np.ascontiguousarray(matrix, dtype="<f8")
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigurationError("only square matrices are serialised")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, m.shape[0], _DTYPE_TAG))
        fh.write(m.tobytes(order="C"))


def read_matrix_binary(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ConfigurationError(f"{path}: truncated header")
        magic, n, tag = _HEADER.unpack(head)
        if magic != _MAGIC or tag != _DTYPE_TAG:
            raise ConfigurationError(f"{path}: not a matrix file")
        body = fh.read()
    if len(body) != 8 * n * n:
        raise ConfigurationError(f"{path}: body holds {len(body)} bytes, expected {8 * n * n}")
    return np.frombuffer(body, dtype="<f8").reshape(n, n).astype(np.float64)


def write_matrix_csv(path: str | Path, matrix: np.ndarray) -> None:
    m = np.asarray(matrix, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in m:
            w.writerow([repr(float(v)) for v in row])


def read_matrix_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in r] for r in csv.reader(fh) if r]
    return np.array(rows, dtype=np.float64)
