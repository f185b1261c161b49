"""Tabular reward shaping and transfer under entropy-regularised planning.

A state-only reward ``r'`` recovered from an expert in a source environment
has the form ``r' = r + gamma P f - f`` for some potential ``f`` (``P`` being
the expert-induced state kernel).  Whether ``r'`` keeps the optimal policy
in every other environment hinges on the null space of ``P - I``: if it is
spanned by the constant vector, ``f`` is constant and ``r'`` differs from
``r`` by a constant.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .ensembles import read_matrix_binary
from .errors import ConfigurationError, InfiniteVarianceError, IterationLimitError
from .spectra import DEFAULT_ZERO_TOL

__all__ = [
    "TabularMDP",
    "SoftSolution",
    "ShapingPotential",
    "PotentialSolution",
    "RankDiagnosis",
    "TransferReport",
    "RatioStats",
    "UpdateVariance",
    "soft_value_iteration",
    "induced_state_kernel",
    "policy_evaluation",
    "greedy_action_sets",
    "policy_match",
    "shape_reward",
    "potential_system_solve",
    "diagnose_transferability",
    "recoverable_potentials",
    "run_transfer",
    "TransferStudy",
    "transfer_study",
    "deterministic_kernels",
    "find_transfer_counterexample",
    "random_target_kernels",
    "importance_ratio_stats",
    "update_variance_decomposition",
]

ANGLE_TOL = 1e-6
TIE_TOL = 1e-9


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Finite MDP with a state-only reward.

    ``kernel[a, s, t]`` is ``p(t | s, a)``.  ``excluded_states`` are states
    left out of rank diagnostics (e.g. unreachable barrier cells); nothing in
    the included set may transition into them.
    """

    kernel: np.ndarray
    reward: np.ndarray
    gamma: float
    init_dist: np.ndarray | None = None
    alpha: float = 1.0
    excluded_states: tuple[int, ...] = ()

    def __post_init__(self):
        k = _readonly(self.kernel)
        if k.ndim != 3 or k.shape[1] != k.shape[2]:
            raise ConfigurationError("kernel must have shape (n_actions, n_states, n_states)")
        n = k.shape[1]
        if np.any(k < 0) or np.max(np.abs(k.sum(axis=2) - 1.0)) > 1e-12:
            raise ConfigurationError("every kernel slice must be row-stochastic")
        r = _readonly(self.reward)
        if r.shape != (n,):
            raise ConfigurationError(f"reward must have shape ({n},)")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError("gamma must lie in (0, 1)")
        if not self.alpha > 0:
            raise ConfigurationError("entropy temperature must be positive")
        d0 = np.full(n, 1.0 / n) if self.init_dist is None else self.init_dist
        d0 = _readonly(d0)
        if d0.shape != (n,) or np.any(d0 < 0) or abs(d0.sum() - 1.0) > 1e-12:
            raise ConfigurationError("init_dist must be a probability vector")
        excl = tuple(sorted(set(int(s) for s in self.excluded_states)))
        if excl and (excl[0] < 0 or excl[-1] >= n):
            raise ConfigurationError("excluded state out of range")
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "init_dist", d0)
        object.__setattr__(self, "excluded_states", excl)

    @property
    def n_states(self) -> int:
        return self.kernel.shape[1]

    @property
    def n_actions(self) -> int:
        return self.kernel.shape[0]

    @property
    def included_states(self) -> np.ndarray:
        keep = np.ones(self.n_states, dtype=bool)
        keep[list(self.excluded_states)] = False
        return np.flatnonzero(keep)

    def with_kernel(self, kernel) -> TabularMDP:
        return replace(self, kernel=kernel)

    def with_reward(self, reward) -> TabularMDP:
        return replace(self, reward=reward)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "kernel": self.kernel.tolist(),
            "reward": self.reward.tolist(),
            "gamma": self.gamma,
            "init_dist": self.init_dist.tolist(),
            "alpha": self.alpha,
            "excluded_states": list(self.excluded_states),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: str | Path | None = None) -> TabularMDP:
        """Inverse of :meth:`to_dict`.

        ``kernel`` may instead be given as ``kernel_files``: one matrix file
        per action in the binary matrix format, relative to ``base_dir``.
        """
        if "kernel" in data:
            kernel = np.asarray(data["kernel"], dtype=np.float64)
        elif "kernel_files" in data:
            base = Path(base_dir) if base_dir is not None else Path(".")
            kernel = np.stack([read_matrix_binary(base / p) for p in data["kernel_files"]])
        else:
            raise ConfigurationError("MDP config needs 'kernel' or 'kernel_files'")
        return cls(kernel=kernel, reward=data["reward"], gamma=float(data["gamma"]),
                   init_dist=data.get("init_dist"), alpha=float(data.get("alpha", 1.0)),
                   excluded_states=tuple(data.get("excluded_states", ())))

    @classmethod
    def load(cls, path: str | Path) -> TabularMDP:
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent)


@dataclass(frozen=True, eq=False)
class SoftSolution:
    Q: np.ndarray
    V: np.ndarray
    policy: np.ndarray
    residual: float
    iterations: int
    residual_history: np.ndarray = field(repr=False, default=None)


def soft_value_iteration(mdp: TabularMDP, tol: float = 1e-10, max_iters: int = 100_000,
                         reward: np.ndarray | None = None) -> SoftSolution:
    """Fixed point of the soft Bellman operator.

    ``Q(s, a) = r(s) + gamma sum_t p(t|s,a) V(t)`` and
    ``V(s) = alpha log sum_a exp(Q(s, a) / alpha)``; iterates from ``V = 0``
    until the sup-norm change falls to ``tol``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    r = mdp.reward if reward is None else np.asarray(reward, dtype=np.float64)
    k, g, alpha = mdp.kernel, mdp.gamma, mdp.alpha
    v = np.zeros(mdp.n_states)
    history = []
    for it in range(1, max_iters + 1):
        q = r[:, None] + g * (k @ v).T
        v_new = alpha * logsumexp(q / alpha, axis=1)
        res = float(np.max(np.abs(v_new - v)))
        history.append(res)
        v = v_new
        if res <= tol:
            break
    else:
        raise IterationLimitError(
            f"soft value iteration stopped at residual {res:.3e} after {max_iters} sweeps")
    pi = np.exp((q - v[:, None]) / alpha)
    pi /= pi.sum(axis=1, keepdims=True)
    return SoftSolution(q, v, pi, res, it, np.asarray(history))


def induced_state_kernel(mdp: TabularMDP | np.ndarray, policy: np.ndarray) -> np.ndarray:
    """``P(s, t) = sum_a pi(a|s) p(t|s,a)``."""
    k = mdp.kernel if isinstance(mdp, TabularMDP) else np.asarray(mdp, dtype=np.float64)
    return np.einsum("sa,ast->st", np.asarray(policy, dtype=np.float64), k)


def policy_evaluation(mdp: TabularMDP, policy: np.ndarray, reward: np.ndarray | None = None,
                      entropy_bonus: bool = False) -> tuple[np.ndarray, float]:
    """Exact discounted value of a stationary policy and its expected return under ``d_0``."""
    r = mdp.reward if reward is None else np.asarray(reward, dtype=np.float64)
    pi = np.asarray(policy, dtype=np.float64)
    r_pi = r.copy()
    if entropy_bonus:
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = -np.sum(np.where(pi > 0, pi * np.log(pi), 0.0), axis=1)
        r_pi = r_pi + mdp.alpha * ent
    p = induced_state_kernel(mdp, pi)
    v = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p, r_pi)
    return v, float(mdp.init_dist @ v)


def greedy_action_sets(Q: np.ndarray, tie_tol: float = TIE_TOL) -> np.ndarray:
    """Boolean ``(n_states, n_actions)`` mask of actions within ``tie_tol`` of the best."""
    q = np.asarray(Q, dtype=np.float64)
    best = q.max(axis=1, keepdims=True)
    return q >= best - tie_tol * (1.0 + np.abs(best))


def policy_match(Q_a: np.ndarray, Q_b: np.ndarray, tie_tol: float = TIE_TOL) -> float:
    """Fraction of states whose greedy action sets intersect."""
    hit = np.any(greedy_action_sets(Q_a, tie_tol) & greedy_action_sets(Q_b, tie_tol), axis=1)
    return float(np.mean(hit))


@dataclass(frozen=True, eq=False)
class ShapingPotential:
    f: np.ndarray
    gamma: float

    def __post_init__(self):
        f = _readonly(self.f)
        if f.ndim != 1 or not np.all(np.isfinite(f)):
            raise ConfigurationError("potential must be a finite vector")
        object.__setattr__(self, "f", f)


def shape_reward(r_gt: np.ndarray, f: ShapingPotential, P: np.ndarray) -> np.ndarray:
    """``r'(s) = r(s) + gamma E_{s' ~ P(s, .)} f(s') - f(s)``."""
    r = np.asarray(r_gt, dtype=np.float64)
    p = np.asarray(P, dtype=np.float64)
    if r.shape != f.f.shape or p.shape != (r.size, r.size):
        raise ConfigurationError("reward, potential and kernel dimensions disagree")
    return r + f.gamma * (p @ f.f) - f.f


@dataclass(frozen=True, eq=False)
class PotentialSolution:
    """Solutions of ``(gamma P - I) X = b``.

    ``particular`` solves the discounted system (least squares, ``None`` when
    inconsistent).  The null-space fields describe the undiscounted limit
    operator ``P - I``; the solution family of the limit system is
    ``particular + span(nullspace_basis)``.
    """

    particular: np.ndarray | None
    consistent: bool
    residual: float
    nullspace_basis: np.ndarray
    nullspace_dim: int
    nullspace_is_constants: bool
    nullspace_angle: float
    limit_singular_values: np.ndarray = field(repr=False)


def _nullspace(a: np.ndarray, zero_tol: float) -> tuple[np.ndarray, np.ndarray]:
    _, s, vt = np.linalg.svd(a)
    dim = int(np.count_nonzero(s <= zero_tol))
    return vt[a.shape[0] - dim:].T.copy(), s


def _constant_angle(basis: np.ndarray) -> float:
    if basis.shape[1] == 0:
        return float("nan")
    e = np.ones((basis.shape[0], 1))
    return float(np.max(scipy.linalg.subspace_angles(basis, e)))


def _limit_nullspace(p: np.ndarray, zero_tol: float, angle_tol: float):
    basis, s = _nullspace(p - np.eye(p.shape[0]), zero_tol)
    angle = _constant_angle(basis)
    return basis, s, angle, bool(basis.shape[1] == 1 and angle <= angle_tol)


def potential_system_solve(P: np.ndarray, gamma: float, b: np.ndarray,
                           zero_tol: float = DEFAULT_ZERO_TOL,
                           angle_tol: float = ANGLE_TOL) -> PotentialSolution:
    p = np.asarray(P, dtype=np.float64)
    n = p.shape[0]
    b = np.asarray(b, dtype=np.float64)
    if p.shape != (n, n) or b.shape != (n,):
        raise ConfigurationError("dimension mismatch in potential system")
    a = gamma * p - np.eye(n)
    x, *_ = np.linalg.lstsq(a, b, rcond=None)
    residual = float(np.linalg.norm(a @ x - b))
    consistent = residual <= 1e-9 * max(1.0, float(np.linalg.norm(b)))
    basis, s, angle, is_const = _limit_nullspace(p, zero_tol, angle_tol)
    dim = basis.shape[1]
    return PotentialSolution(
        particular=x if consistent else None,
        consistent=consistent,
        residual=residual,
        nullspace_basis=basis,
        nullspace_dim=dim,
        nullspace_is_constants=is_const,
        nullspace_angle=angle,
        limit_singular_values=s,
    )


@dataclass(frozen=True, eq=False)
class RankDiagnosis:
    nullspace_dim: int
    nullspace_is_constants: bool
    nullspace_basis: np.ndarray = field(repr=False)
    states: np.ndarray = field(repr=False)
    smallest_singular_values: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {"nullspace_dim": self.nullspace_dim,
                "nullspace_is_constants": self.nullspace_is_constants,
                "smallest_singular_values": list(self.smallest_singular_values)}


def diagnose_transferability(mdp: TabularMDP, hard: bool = False,
                             zero_tol: float = DEFAULT_ZERO_TOL,
                             solution: SoftSolution | None = None) -> RankDiagnosis:
    """Null space of ``P - I`` for the kernel induced by the expert policy.

    The expert is the soft-optimal policy for ``mdp.reward``; ``hard=True``
    uses its greedy (lowest-index argmax) version instead.  Excluded states
    are dropped before the analysis.
    """
    sol = solution if solution is not None else soft_value_iteration(mdp)
    pi = sol.policy
    if hard:
        pi = np.zeros_like(pi)
        pi[np.arange(mdp.n_states), np.argmax(sol.Q, axis=1)] = 1.0
    p = induced_state_kernel(mdp, pi)
    keep = mdp.included_states
    sub = p[np.ix_(keep, keep)]
    basis, s, _, is_const = _limit_nullspace(sub, zero_tol, ANGLE_TOL)
    return RankDiagnosis(basis.shape[1], is_const, basis, keep,
                         tuple(float(v) for v in np.sort(s)[:3]))


def recoverable_potentials(diagnosis: RankDiagnosis, n_states: int, count: int,
                           rng: np.random.Generator, scale: float = 1.0,
                           gamma: float = 0.99) -> list[ShapingPotential]:
    """Random potentials drawn from the null space of ``P - I``.

    Excluded states get potential zero.
    """
    out = []
    for _ in range(count):
        c = rng.normal(scale=scale, size=diagnosis.nullspace_basis.shape[1])
        f = np.zeros(n_states)
        f[diagnosis.states] = diagnosis.nullspace_basis @ c
        out.append(ShapingPotential(f, gamma))
    return out


@dataclass(frozen=True)
class TransferReport:
    source_policy_match: float
    target_policy_match: float
    target_return_gap: float
    rank_diagnosis: dict

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def summary(self) -> str:
        d = self.rank_diagnosis
        return (f"source match {self.source_policy_match:6.1%}  "
                f"target match {self.target_policy_match:6.1%}  "
                f"return gap {self.target_return_gap:.3e}  "
                f"nullspace dim {d['nullspace_dim']} "
                f"({'constant' if d['nullspace_is_constants'] else 'non-constant'})")


def run_transfer(source: TabularMDP, target: TabularMDP, f: ShapingPotential,
                 tie_tol: float = TIE_TOL, tol: float = 1e-11,
                 source_solution: SoftSolution | None = None,
                 target_solution: SoftSolution | None = None,
                 diagnosis: RankDiagnosis | None = None) -> TransferReport:
    """Shape the reward with ``f`` in ``source`` and replan with it in ``target``.

    The return gap compares the soft-optimal target policies for the shaped
    and the true reward, both evaluated exactly under the true reward.
    Precomputed solutions for the true reward may be passed to save work.
    """
    if (source.n_states, source.n_actions) != (target.n_states, target.n_actions):
        raise ConfigurationError("source and target must share state and action spaces")
    if not np.array_equal(source.reward, target.reward):
        raise ConfigurationError("source and target must share the ground-truth reward")
    if f.f.shape != (source.n_states,):
        raise ConfigurationError("potential has the wrong length")
    src = source_solution or soft_value_iteration(source, tol=tol)
    p = induced_state_kernel(source, src.policy)
    shaped = shape_reward(source.reward, f, p)
    src_shaped = soft_value_iteration(source, tol=tol, reward=shaped)
    tgt = target_solution or soft_value_iteration(target, tol=tol)
    tgt_shaped = soft_value_iteration(target, tol=tol, reward=shaped)
    _, ret_true = policy_evaluation(target, tgt.policy)
    _, ret_shaped = policy_evaluation(target, tgt_shaped.policy)
    diag = diagnosis or diagnose_transferability(source, solution=src)
    return TransferReport(
        source_policy_match=policy_match(src.Q, src_shaped.Q, tie_tol),
        target_policy_match=policy_match(tgt.Q, tgt_shaped.Q, tie_tol),
        target_return_gap=abs(ret_shaped - ret_true),
        rank_diagnosis=diag.to_dict(),
    )


@dataclass(frozen=True)
class TransferStudy:
    diagnosis: dict
    reports: tuple[TransferReport, ...]

    @property
    def min_target_match(self) -> float:
        return min(r.target_policy_match for r in self.reports)

    @property
    def max_return_gap(self) -> float:
        return max(r.target_return_gap for r in self.reports)

    def to_dict(self) -> dict:
        return {"diagnosis": self.diagnosis,
                "min_target_match": self.min_target_match,
                "max_return_gap": self.max_return_gap,
                "reports": [r.to_dict() for r in self.reports]}


def transfer_study(source: TabularMDP, target_kernels: Sequence[np.ndarray],
                   potentials: Sequence[ShapingPotential], tie_tol: float = TIE_TOL,
                   tol: float = 1e-11) -> TransferStudy:
    """Every (target, potential) pair, sharing the solves that do not depend on the pair."""
    src = soft_value_iteration(source, tol=tol)
    diag = diagnose_transferability(source, solution=src)
    p = induced_state_kernel(source, src.policy)
    shaped = [shape_reward(source.reward, f, p) for f in potentials]
    src_shaped = [soft_value_iteration(source, tol=tol, reward=r) for r in shaped]
    reports = []
    for kern in target_kernels:
        target = source.with_kernel(kern)
        tgt = soft_value_iteration(target, tol=tol)
        _, ret_true = policy_evaluation(target, tgt.policy)
        for r, ss in zip(shaped, src_shaped):
            ts = soft_value_iteration(target, tol=tol, reward=r)
            _, ret = policy_evaluation(target, ts.policy)
            reports.append(TransferReport(policy_match(src.Q, ss.Q, tie_tol),
                                          policy_match(tgt.Q, ts.Q, tie_tol),
                                          abs(ret - ret_true), diag.to_dict()))
    return TransferStudy(diag.to_dict(), tuple(reports))


def deterministic_kernels(n_states: int, n_actions: int) -> Iterator[np.ndarray]:
    """Every deterministic kernel on the given spaces (``n^(n*A)`` of them)."""
    cells = n_states * n_actions
    for nxt in itertools.product(range(n_states), repeat=cells):
        k = np.zeros((n_actions, n_states, n_states))
        for idx, t in enumerate(nxt):
            a, s = divmod(idx, n_states)
            k[a, s, t] = 1.0
        yield k


def find_transfer_counterexample(source: TabularMDP, potentials: Iterable[ShapingPotential],
                                 targets: Iterable[np.ndarray], tie_tol: float = TIE_TOL):
    """Brute-force search for a potential/target pair that breaks transfer.

    Returns ``(potential, target_kernel, report)`` for the first pair with
    target policy match below one, or ``None``.
    """
    targets = list(targets)
    src = soft_value_iteration(source, tol=1e-12)
    diag = diagnose_transferability(source, solution=src)
    for f in potentials:
        for kern in targets:
            tgt = source.with_kernel(kern)
            rep = run_transfer(source, tgt, f, tie_tol, source_solution=src, diagnosis=diag)
            if rep.target_policy_match < 1.0:
                return f, kern, rep
    return None


def random_target_kernels(mdp: TabularMDP, count: int, rng: np.random.Generator,
                          mix_range: tuple[float, float] = (0.1, 0.9)) -> list[np.ndarray]:
    """Perturbed dynamics: convex mixtures of ``mdp.kernel`` with flat-Dirichlet kernels.

    Rows of excluded states keep their original dynamics and no included
    state gains a transition into an excluded one.
    """
    a, n = mdp.n_actions, mdp.n_states
    keep = mdp.included_states
    out = []
    for _ in range(count):
        w = rng.uniform(*mix_range)
        noise = np.zeros((a, n, n))
        noise[:, :, keep] = rng.dirichlet(np.ones(keep.size), size=(a, n))
        k = (1.0 - w) * mdp.kernel + w * noise
        k[:, list(mdp.excluded_states), :] = mdp.kernel[:, list(mdp.excluded_states), :]
        k /= k.sum(axis=2, keepdims=True)
        out.append(k)
    return out


# -- importance sampling ---------------------------------------------------

@dataclass(frozen=True)
class RatioStats:
    expectation: float
    variance: float
    second_moment: float


def _prob_vector(p, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ConfigurationError(f"{name} must be a probability vector")
    return p


def importance_ratio_stats(pi, pi_b) -> RatioStats:
    """Mean and variance of ``rho = pi(a) / pi_b(a)`` for ``a ~ pi_b``."""
    pi = _prob_vector(pi, "pi")
    pi_b = _prob_vector(pi_b, "pi_b")
    if pi.shape != pi_b.shape:
        raise ConfigurationError("policies act on different action sets")
    support = pi_b > 0
    if np.any(pi[~support] > 0):
        raise InfiniteVarianceError("pi puts mass on actions the behavior policy never takes")
    rho = pi[support] / pi_b[support]
    w = pi_b[support]
    mean = float(np.sum(w * rho))
    var = float(np.sum(w * (rho - 1.0) ** 2))
    return RatioStats(mean, var, float(np.sum(w * rho * rho)))


@dataclass(frozen=True)
class UpdateVariance:
    total: float
    from_y_variance: float
    from_ratio_variance: float
    cross_term: float


def update_variance_decomposition(pi, pi_b, y_mean: float, y_var: float,
                                  learning_rate: float) -> UpdateVariance:
    """Variance of ``lr * rho * Y`` for independent ``rho`` and ``Y``, with ``E[rho] = 1``."""
    if y_var < 0:
        raise ValueError("y_var must be nonnegative")
    stats = importance_ratio_stats(pi, pi_b)
    lr2 = learning_rate ** 2
    t1 = lr2 * y_var
    t2 = lr2 * y_mean ** 2 * stats.variance
    t3 = lr2 * stats.variance * y_var
    return UpdateVariance(t1 + t2 + t3, t1, t2, t3)
