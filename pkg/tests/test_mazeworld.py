import numpy as np
import pytest

from rewardrank import ensembles as ens
from rewardrank import mazeworld as mz
from rewardrank import spectra as sp
from rewardrank import transferability as tr
from rewardrank.errors import ConfigurationError


def test_one_by_two_deterministic():
    m = mz.build_maze_mdp(mz.MazeSpec(2, 1, goal_state=1, slip_prob=0.0))
    assert np.all(np.isin(m.kernel, (0.0, 1.0)))
    assert np.all(m.kernel.sum(axis=2) == 1)
    east, west = 1, 3
    assert m.kernel[east, 0, 1] == 1 and m.kernel[west, 0, 0] == 1


def test_slip_distribution_and_bounce():
    spec = mz.MazeSpec(3, 3, goal_state=2, slip_prob=0.3)
    m = mz.build_maze_mdp(spec)
    # centre cell: four legal moves, slip shared by the other three
    north = m.kernel[0, 4]
    assert north[1] == pytest.approx(0.7) and north[[3, 5, 7]] == pytest.approx([0.1] * 3)
    # corner 0 moving north bounces back; slip goes to the two legal moves
    row = m.kernel[0, 0]
    assert row[0] == pytest.approx(0.7) and row[1] == pytest.approx(0.15)
    assert row[3] == pytest.approx(0.15)
    assert np.max(np.abs(m.kernel.sum(axis=2) - 1)) <= 1e-12
    assert m.reward[2] == 1.0 and m.reward.sum() == 1.0


def test_geometry_is_deterministic():
    spec = mz.MazeSpec(4, 3, 11, (mz.Barrier.band(1, 0, 2),), slip_prob=0.2)
    a, b = mz.build_maze_mdp(spec), mz.build_maze_mdp(spec)
    assert a.kernel.tobytes() == b.kernel.tobytes()
    assert mz.MazeSpec.from_dict(spec.to_dict()) == spec


def test_barrier_cells_absorbing_and_excluded():
    spec = mz.MazeSpec(3, 3, 0, (mz.Barrier.from_cells([(1, 1)]),))
    m = mz.build_maze_mdp(spec)
    assert m.excluded_states == (4,)
    assert np.all(m.kernel[:, 4, 4] == 1)
    free = [s for s in range(9) if s != 4]
    assert np.all(m.kernel[:, free, 4] == 0)
    assert m.init_dist[4] == 0 and m.init_dist.sum() == pytest.approx(1)


def test_full_middle_barrier_splits_maze():
    spec = mz.MazeSpec(3, 3, 0, (mz.Barrier.band(1, 0, 3),))
    with pytest.warns(mz.DisconnectedMazeWarning):
        m = mz.build_maze_mdp(spec)
    d = tr.diagnose_transferability(m)
    assert d.nullspace_dim == 2 and not d.nullspace_is_constants


@pytest.mark.parametrize("kwargs", [
    dict(width=0, height=3, goal_state=0),
    dict(width=3, height=3, goal_state=9),
    dict(width=3, height=3, goal_state=0, slip_prob=1.0),
    dict(width=3, height=3, goal_state=4, barriers=(mz.Barrier.from_cells([(1, 1)]),)),
    dict(width=3, height=3, goal_state=0, barriers=(mz.Barrier.from_cells([(5, 5)]),)),
])
def test_invalid_maze_specs(kwargs):
    with pytest.raises(ConfigurationError):
        mz.MazeSpec(**kwargs)


def test_connected_30x30_nullspace_matches_elimination():
    m = mz.build_maze_mdp(mz.MazeSpec(30, 30, goal_state=29), gamma=0.95)
    sol = tr.soft_value_iteration(m)
    d = tr.diagnose_transferability(m, solution=sol)
    assert d.nullspace_dim == 1 and d.nullspace_is_constants
    p = tr.induced_state_kernel(m, sol.policy)
    assert sp.elimination_rank(p - np.eye(900)) == 899


def test_masked_ensemble_no_barrier_is_identity():
    base = ens.EnsembleSpec(9, seed=3)
    assert mz.barrier_masked_ensemble(mz.MazeSpec(3, 3, 0), base) is base


def test_masked_ensemble_one_cell_barrier():
    spec = mz.MazeSpec(3, 3, 0, (mz.Barrier.from_cells([(1, 1)]),))
    out = mz.barrier_masked_ensemble(spec, ens.EnsembleSpec(9, seed=3))
    rows = {info.row: info.zero_columns for info in out.informative}
    assert rows == {1: (4,), 3: (4,), 5: (4,), 7: (4,)}
    mask = out.zero_mask()
    assert mask.sum() == 4 and np.all(mask[:, 4][[1, 3, 5, 7]])
    assert out.informative[0].effective_omega(9) == pytest.approx(8 / 9)


def test_masked_ensemble_merges_existing_masks():
    spec = mz.MazeSpec(3, 3, 0, (mz.Barrier.from_cells([(1, 1)]),))
    base = ens.EnsembleSpec(9, (ens.InformativeRow(1, zero_columns=(8,)),
                                ens.InformativeRow(0, zero_columns=(2,))), seed=1)
    out = mz.barrier_masked_ensemble(spec, base)
    rows = {info.row: info.zero_columns for info in out.informative}
    assert rows[1] == (4, 8) and rows[0] == (2,)
    with pytest.raises(ConfigurationError):
        mz.barrier_masked_ensemble(spec, ens.EnsembleSpec(10))


def test_sweep_layouts_grow():
    layouts = mz.barrier_sweep_specs(30, 30)
    widths = [m.total_barrier_width for _, m in layouts]
    assert [name for name, _ in layouts] == ["none", "one_barrier", "two_barriers"]
    assert widths[0] == 0 and widths[0] < widths[1] < widths[2]
    for _, m in layouts[1:]:
        assert len(m.reachable_from_goal()) == m.n_states - m.total_barrier_width


def test_two_barriers_exceed_one_barrier_30x30():
    devs = {"one_barrier": [], "two_barriers": []}
    for seed in range(10):
        for name, maze in mz.barrier_sweep_specs(30, 30)[1:]:
            spec = mz.barrier_masked_ensemble(maze, ens.EnsembleSpec(900, seed=seed))
            w = ens.subtract_identity(ens.sample_transition(spec))
            devs[name].append(sp.singular_spectrum(w).max_dev_from_one)
    assert np.mean(devs["two_barriers"]) > np.mean(devs["one_barrier"])


def test_render_ascii():
    spec = mz.MazeSpec(3, 2, 2, (mz.Barrier.from_cells([(1, 1)]),))
    assert mz.render_ascii(spec) == "..G\n.#."
    pol = np.zeros((6, 4))
    pol[:, 1] = 1
    assert mz.render_ascii(spec, pol) == ">>G\n>#>"
