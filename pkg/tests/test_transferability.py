import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rewardrank import ensembles as ens
from rewardrank import spectra as sp
from rewardrank import transferability as tr
from rewardrank.errors import ConfigurationError, InfiniteVarianceError, IterationLimitError

from oracles import backward_induction_values, monte_carlo_ratio, random_mdp

FIXTURES = Path(__file__).parent / "fixtures"


def _mdp(kernel, reward, gamma=0.9, **kw):
    return tr.TabularMDP(kernel=np.asarray(kernel, float), reward=np.asarray(reward, float),
                         gamma=gamma, **kw)


def two_block_mdp(gamma=0.9):
    """Four states in two closed pairs; every action stays inside its pair."""
    stay = np.kron(np.eye(2), np.array([[0.7, 0.3], [0.3, 0.7]]))
    swap = np.kron(np.eye(2), np.array([[0.1, 0.9], [0.9, 0.1]]))
    return _mdp([stay, swap], [1.0, 0.0, 0.2, 0.5], gamma)


# -- TabularMDP -----------------------------------------------------------

def test_mdp_validation():
    with pytest.raises(ConfigurationError):
        _mdp([[[0.5, 0.6], [0.5, 0.5]]], [0, 0])
    with pytest.raises(ConfigurationError):
        _mdp([np.eye(2)], [0, 0], gamma=1.0)
    with pytest.raises(ConfigurationError):
        _mdp([np.eye(2)], [0, 0, 0])
    with pytest.raises(ConfigurationError):
        _mdp([np.eye(2)], [0, 0], alpha=0.0)
    with pytest.raises(ConfigurationError):
        _mdp([np.eye(2)], [0, 0], init_dist=[0.2, 0.2])
    m = _mdp([np.eye(2)], [0, 0])
    assert m.init_dist.tolist() == [0.5, 0.5]
    with pytest.raises(ValueError):
        m.kernel[0, 0, 0] = 2.0


def test_mdp_json_round_trip_inline_and_binary(tmp_path, rng):
    m = random_mdp(rng, 4, 2)
    back = tr.TabularMDP.from_dict(json.loads(json.dumps(m.to_dict())))
    assert np.array_equal(back.kernel, m.kernel) and back.gamma == m.gamma
    for a in range(2):
        ens.write_matrix_binary(tmp_path / f"k{a}.bin", m.kernel[a])
    cfg = {"kernel_files": ["k0.bin", "k1.bin"], "reward": m.reward.tolist(),
           "gamma": m.gamma, "alpha": m.alpha}
    (tmp_path / "mdp.json").write_text(json.dumps(cfg))
    loaded = tr.TabularMDP.load(tmp_path / "mdp.json")
    assert np.array_equal(loaded.kernel, m.kernel)
    with pytest.raises(ConfigurationError):
        tr.TabularMDP.from_dict({"reward": [0], "gamma": 0.5})


# -- soft value iteration ---------------------------------------------------

def test_soft_vi_single_state():
    sol = tr.soft_value_iteration(_mdp([[[1.0]]], [1.0], 0.9), tol=1e-12)
    assert sol.V[0] == pytest.approx(10.0, abs=1e-10)
    assert sol.policy[0, 0] == 1.0


def test_soft_vi_two_identical_actions():
    sol = tr.soft_value_iteration(_mdp([[[1.0]], [[1.0]]], [0.0], 0.5), tol=1e-13)
    assert np.allclose(sol.policy, 0.5)
    assert sol.V[0] == pytest.approx(2 * np.log(2), abs=1e-10)


def test_soft_vi_matches_backward_induction(rng):
    m = random_mdp(rng, 4, 2)
    sol = tr.soft_value_iteration(m)
    assert np.max(np.abs(sol.V - backward_induction_values(m))) <= 1e-6


def test_soft_solution_invariants(rng):
    m = random_mdp(rng, 6, 3)
    sol = tr.soft_value_iteration(m, tol=1e-11)
    assert sol.residual <= 1e-11
    assert np.max(np.abs(sol.policy.sum(axis=1) - 1)) <= 1e-12
    from scipy.special import logsumexp
    assert np.max(np.abs(sol.V - m.alpha * logsumexp(sol.Q / m.alpha, axis=1))) <= 1e-10
    h = sol.residual_history
    assert np.all(np.diff(h[5:]) <= 1e-15)


def test_soft_vi_iteration_limit(rng):
    with pytest.raises(IterationLimitError):
        tr.soft_value_iteration(random_mdp(rng, 3, 2, gamma=0.99), max_iters=3)
    with pytest.raises(ValueError):
        tr.soft_value_iteration(random_mdp(rng, 3, 2), tol=0.0)


def test_constant_reward_shift_keeps_policy(rng):
    m = random_mdp(rng, 5, 3)
    a = tr.soft_value_iteration(m, tol=1e-12)
    b = tr.soft_value_iteration(m, tol=1e-12, reward=m.reward + 3.7)
    assert tr.policy_match(a.Q, b.Q) == 1.0
    assert np.allclose(a.policy, b.policy, atol=1e-10)
    assert np.allclose(b.V - a.V, 3.7 / (1 - m.gamma), atol=1e-8)


# -- induced kernel and shaping ---------------------------------------------

def test_induced_kernel_examples(rng):
    m = random_mdp(rng, 3, 1)
    assert np.array_equal(tr.induced_state_kernel(m, np.ones((3, 1))), m.kernel[0])
    m2 = random_mdp(rng, 3, 2)
    p = tr.induced_state_kernel(m2, np.full((3, 2), 0.5))
    assert np.allclose(p, (m2.kernel[0] + m2.kernel[1]) / 2, atol=1e-15)
    pol = rng.dirichlet(np.ones(2), size=3)
    assert np.max(np.abs(tr.induced_state_kernel(m2, pol).sum(axis=1) - 1)) <= 1e-12


def test_shape_reward_examples():
    p = np.array([[0.0, 1.0], [1.0, 0.0]])
    r = np.zeros(2)
    assert tr.shape_reward(r, tr.ShapingPotential([1.0, 0.0], 0.5), p).tolist() == [-1.0, 0.5]
    assert np.array_equal(tr.shape_reward(r + 2, tr.ShapingPotential(np.zeros(2), 0.5), p), r + 2)
    with pytest.raises(ConfigurationError):
        tr.shape_reward(np.zeros(3), tr.ShapingPotential([1.0, 0.0], 0.5), p)
    with pytest.raises(ConfigurationError):
        tr.ShapingPotential([np.inf, 0.0], 0.5)


@settings(max_examples=40, deadline=None)
@given(c=st.floats(-100, 100), gamma=st.floats(0.01, 0.99), seed=st.integers(0, 10**6))
def test_property_constant_potential_shifts_uniformly(c, gamma, seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(5), size=5)
    r = rng.normal(size=5)
    out = tr.shape_reward(r, tr.ShapingPotential(np.full(5, c), gamma), p)
    assert np.allclose(out, r + (gamma - 1) * c, atol=1e-12 * (1 + abs(c)))


def test_action_independent_potential_shifts_q_by_f():
    m = two_block_mdp()
    f = np.array([3.0, 3.0, -2.0, -2.0])  # constant on each closed block
    src = tr.soft_value_iteration(m, tol=1e-13)
    p = tr.induced_state_kernel(m, src.policy)
    shaped = tr.shape_reward(m.reward, tr.ShapingPotential(f, m.gamma), p)
    sol = tr.soft_value_iteration(m, tol=1e-13, reward=shaped)
    assert np.max(np.abs(sol.Q - (src.Q - f[:, None]))) <= 1e-6
    assert tr.policy_match(sol.Q, src.Q) == 1.0


def test_greedy_sets_and_ties():
    q = np.array([[1.0, 1.0 + 1e-12, 0.0], [0.0, 2.0, 1.0]])
    sets = tr.greedy_action_sets(q)
    assert sets.tolist() == [[True, True, False], [False, True, False]]
    assert tr.policy_match(q, np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])) == 0.5


# -- potential system -----------------------------------------------------

def test_potential_system_uniform_two_states():
    sol = tr.potential_system_solve(np.full((2, 2), 0.5), 0.99, np.array([-0.01, -0.01]))
    assert sol.consistent and np.allclose(sol.particular, [1.0, 1.0], atol=1e-12)
    assert sol.nullspace_dim == 1 and sol.nullspace_is_constants
    assert sol.nullspace_angle <= 1e-12


def test_potential_system_block_diagonal():
    p = np.kron(np.eye(2), np.full((2, 2), 0.5))
    sol = tr.potential_system_solve(p, 0.999, np.zeros(4))
    assert sol.nullspace_dim == 2 and not sol.nullspace_is_constants


def test_potential_system_inconsistent_is_reported():
    sol = tr.potential_system_solve(np.full((3, 3), 1 / 3), 1.0, np.ones(3))
    assert not sol.consistent and sol.particular is None and sol.residual > 0.1
    with pytest.raises(ConfigurationError):
        tr.potential_system_solve(np.eye(2), 0.9, np.zeros(3))


@pytest.mark.parametrize("seed", range(3))
def test_potential_system_random_dirichlet_n50(seed):
    p = ens.sample_transition(ens.EnsembleSpec(50, seed=seed)).matrix
    sol = tr.potential_system_solve(p, 0.9, np.ones(50))
    assert sol.nullspace_dim == 1 and sol.nullspace_is_constants
    assert sp.elimination_rank(p - np.eye(50)) == 49


def test_gamma_sweep_approaches_constant_nullspace():
    p = ens.sample_transition(ens.EnsembleSpec(30, seed=1)).matrix
    e = np.ones((30, 1)) / np.sqrt(30)
    angles, smallest = [], []
    for g in (0.9, 0.99, 0.999):
        _, s, vt = np.linalg.svd(g * p - np.eye(30))
        smallest.append(s[-1])
        angles.append(float(np.arccos(min(1.0, abs(vt[-1] @ e[:, 0])))))
    assert smallest[0] > smallest[1] > smallest[2]
    assert angles[0] > angles[1] > angles[2]
    assert angles[2] < 1e-3


# -- diagnosis -------------------------------------------------------------

def test_diagnosis_two_regions():
    d = tr.diagnose_transferability(two_block_mdp())
    assert d.nullspace_dim == 2 and not d.nullspace_is_constants
    assert d.to_dict()["nullspace_dim"] == 2


def test_diagnosis_connected_and_permutation_invariant(rng):
    m = random_mdp(rng, 7, 2)
    d = tr.diagnose_transferability(m)
    assert d.nullspace_dim == 1 and d.nullspace_is_constants
    perm = rng.permutation(7)
    pk = m.kernel[:, perm][:, :, perm]
    pm = tr.TabularMDP(kernel=pk, reward=m.reward[perm], gamma=m.gamma, alpha=m.alpha)
    dp = tr.diagnose_transferability(pm)
    assert dp.nullspace_dim == d.nullspace_dim and dp.nullspace_is_constants
    assert np.allclose(dp.smallest_singular_values, d.smallest_singular_values, atol=1e-10)
    assert tr.diagnose_transferability(m, hard=True).nullspace_dim >= 1


def test_recoverable_potentials_lie_in_nullspace():
    m = two_block_mdp()
    d = tr.diagnose_transferability(m)
    sol = tr.soft_value_iteration(m)
    p = tr.induced_state_kernel(m, sol.policy)
    for f in tr.recoverable_potentials(d, 4, 5, np.random.default_rng(0)):
        assert np.allclose(p @ f.f, f.f, atol=1e-10)


# -- transfer -------------------------------------------------------------

def test_transfer_constant_and_zero_potentials(rng):
    src = random_mdp(rng, 5, 3)
    for kern in tr.random_target_kernels(src, 4, rng):
        tgt = src.with_kernel(kern)
        rep = tr.run_transfer(src, tgt, tr.ShapingPotential(np.full(5, -4.2), src.gamma))
        assert rep.source_policy_match == 1.0 and rep.target_policy_match == 1.0
        assert rep.target_return_gap <= 1e-8
        rep0 = tr.run_transfer(src, tgt, tr.ShapingPotential(np.zeros(5), src.gamma))
        assert rep0.target_policy_match == 1.0 and rep0.target_return_gap == 0.0
    assert "target match" in rep.summary()
    assert json.loads(rep.to_json())["rank_diagnosis"]["nullspace_dim"] == 1


def test_transfer_dimension_checks(rng):
    a = random_mdp(rng, 3, 2)
    with pytest.raises(ConfigurationError):
        tr.run_transfer(a, random_mdp(rng, 4, 2), tr.ShapingPotential(np.zeros(3), 0.9))
    with pytest.raises(ConfigurationError):
        tr.run_transfer(a, a.with_reward(a.reward + 1), tr.ShapingPotential(np.zeros(3), 0.9))
    with pytest.raises(ConfigurationError):
        tr.run_transfer(a, a, tr.ShapingPotential(np.zeros(2), 0.9))


def test_sufficiency_on_random_small_mdps(rng):
    for _ in range(3):
        src = random_mdp(rng, 6, 2, gamma=0.9)
        d = tr.diagnose_transferability(src)
        assert d.nullspace_dim == 1 and d.nullspace_is_constants
        pots = tr.recoverable_potentials(d, 6, 3, rng, scale=5.0, gamma=src.gamma)
        study = tr.transfer_study(src, tr.random_target_kernels(src, 5, rng), pots)
        assert study.min_target_match == 1.0 and study.max_return_gap <= 1e-8
        assert len(study.reports) == 15


def test_random_targets_keep_excluded_rows(rng):
    k = np.stack([np.eye(3), np.eye(3)])
    k[:, 0] = [0.5, 0.5, 0.0]
    k[:, 1] = [0.5, 0.5, 0.0]
    m = tr.TabularMDP(kernel=k, reward=np.zeros(3), gamma=0.9, excluded_states=(2,))
    for t in tr.random_target_kernels(m, 3, rng):
        assert np.array_equal(t[:, 2], m.kernel[:, 2])
        assert np.all(t[:, :2, 2] == 0)
        assert np.max(np.abs(t.sum(axis=2) - 1)) <= 1e-12


def test_deterministic_kernel_enumeration():
    kernels = list(tr.deterministic_kernels(2, 2))
    assert len(kernels) == 16
    assert len({k.tobytes() for k in kernels}) == 16
    assert all(np.all(k.sum(axis=2) == 1) for k in kernels)


def test_necessity_witness_fixture():
    data = json.loads((FIXTURES / "necessity_witness.json").read_text())
    src = tr.TabularMDP.from_dict(data["source"])
    d = tr.diagnose_transferability(src)
    assert d.nullspace_dim == 2 == data["nullspace_dim"]
    f = tr.ShapingPotential(np.array(data["potential"]), src.gamma)
    assert abs(f.f[0] - f.f[1]) > 0  # non-constant
    rep = tr.run_transfer(src, src.with_kernel(np.array(data["target_kernel"])), f)
    assert rep.source_policy_match == 1.0
    assert rep.target_policy_match < 1.0
    assert rep.target_policy_match == data["target_policy_match"]


def test_counterexample_search_finds_none_for_constants():
    src = tr.TabularMDP(kernel=np.stack([np.eye(2), np.eye(2)]), reward=np.array([1.0, 0.0]),
                        gamma=0.9)
    pots = [tr.ShapingPotential(np.full(2, c), 0.9) for c in (1.0, -5.0)]
    assert tr.find_transfer_counterexample(src, pots, tr.deterministic_kernels(2, 2)) is None


# -- importance ratios ----------------------------------------------------

def test_ratio_examples():
    st_on = tr.importance_ratio_stats([0.2, 0.8], [0.2, 0.8])
    assert st_on.variance == 0.0 and st_on.expectation == 1.0
    st_det = tr.importance_ratio_stats([1.0, 0.0], [0.5, 0.5])
    assert st_det.second_moment == pytest.approx(2.0) and st_det.variance == pytest.approx(1.0)
    with pytest.raises(InfiniteVarianceError):
        tr.importance_ratio_stats([0.5, 0.5], [1.0, 0.0])
    with pytest.raises(ConfigurationError):
        tr.importance_ratio_stats([0.5, 0.6], [0.5, 0.5])


def test_ratio_variance_formula_and_monte_carlo():
    rng = np.random.default_rng(5)
    pi, pi_b = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
    stats = tr.importance_ratio_stats(pi, pi_b)
    assert stats.variance == pytest.approx(np.sum(pi ** 2 / pi_b) - 1, abs=1e-12)
    mean, var, se_mean, se_var = monte_carlo_ratio(pi, pi_b, rng)
    assert abs(mean - stats.expectation) <= 3 * se_mean
    assert abs(var - stats.variance) <= 3 * se_var


def test_update_variance_examples():
    on = tr.update_variance_decomposition([0.3, 0.7], [0.3, 0.7], 2.0, 1.5, 0.1)
    assert on.total == pytest.approx(0.01 * 1.5)
    d = tr.update_variance_decomposition([1.0, 0.0], [0.5, 0.5], 1.0, 0.0, 1.0)
    assert d.total == pytest.approx(1.0)
    assert d.total == pytest.approx(d.from_y_variance + d.from_ratio_variance + d.cross_term)
    with pytest.raises(ValueError):
        tr.update_variance_decomposition([1.0], [1.0], 0.0, -1.0, 0.1)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), k=st.integers(1, 8), y_mean=st.floats(-5, 5),
       y_var=st.floats(0, 5), lr=st.floats(1e-3, 1.0))
def test_property_ratio_and_update_variance(seed, k, y_mean, y_var, lr):
    rng = np.random.default_rng(seed)
    pi, pi_b = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
    s = tr.importance_ratio_stats(pi, pi_b)
    assert abs(s.expectation - 1.0) <= 1e-12 and s.variance >= 0
    off = tr.update_variance_decomposition(pi, pi_b, y_mean, y_var, lr)
    on = tr.update_variance_decomposition(pi_b, pi_b, y_mean, y_var, lr)
    assert off.total >= on.total
