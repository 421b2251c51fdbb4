import numpy as np
import pytest

from asyncfp import fpcore, lapjac, mdpvi, ppscf
from asyncfp.fpcore import BlockPartition, IterateState


class TestBlockPartition:
    def test_valid(self):
        p = BlockPartition(4, (np.array([0, 1]), np.array([2, 3])))
        assert p.num_blocks == 2

    def test_rejects_overlap(self):
        with pytest.raises(ValueError):
            BlockPartition(4, (np.array([0, 1]), np.array([1, 2, 3])))

    def test_rejects_gap(self):
        with pytest.raises(ValueError):
            BlockPartition(4, (np.array([0, 1]), np.array([3]),))

    def test_rejects_empty_block(self):
        with pytest.raises(ValueError):
            BlockPartition(2, (np.array([0, 1]), np.array([], dtype=int)))


class TestIterateState:
    def test_vintage_bookkeeping(self):
        part = BlockPartition(4, (np.array([0, 1]), np.array([2, 3])))
        st = IterateState.fresh(np.zeros(4), 2)
        st.apply_block(part, 1, np.array([5.0, 6.0]))
        assert st.global_step == 1
        assert list(st.block_vintage) == [0, 1]
        st.apply_block(part, 0, np.array([1.0, 2.0]))
        assert st.global_step == 2
        assert list(st.block_vintage) == [2, 1]
        assert np.all(st.block_vintage <= st.global_step)

    def test_vintage_never_decreases(self):
        part = BlockPartition(4, (np.array([0, 1]), np.array([2, 3])))
        st = IterateState.fresh(np.zeros(4), 2)
        prev = st.block_vintage.copy()
        rng = np.random.default_rng(0)
        for _ in range(20):
            j = int(rng.integers(0, 2))
            st.apply_block(part, j, rng.standard_normal(2))
            assert np.all(st.block_vintage >= prev)
            prev = st.block_vintage.copy()

    def test_full_update_touches_all_blocks(self):
        part = BlockPartition(4, (np.array([0, 1]), np.array([2, 3])))
        st = IterateState.fresh(np.zeros(4), 2)
        st.apply_full(np.ones(4))
        assert st.global_step == 1
        assert list(st.block_vintage) == [1, 1]


@pytest.fixture(scope="module")
def jacobi_small():
    return lapjac.make_problem(10, 10, 5, n_sweeps=1)


@pytest.fixture(scope="module")
def vi_small():
    mdp, v_star = mdpvi.make_gridworld(5, 0.9)
    part = mdpvi.make_state_partition(mdp.num_states, 5)
    return mdpvi.VIProblem(mdp, part), v_star


class TestEvaluateBlock:
    def test_fixed_point_restriction_jacobi(self, jacobi_small):
        prob = jacobi_small
        x_star = prob.system.x_star
        for j in range(prob.partition.num_blocks):
            vals = fpcore.evaluate_block(prob, j, x_star)
            assert vals == pytest.approx(x_star[prob.partition.blocks[j]], abs=1e-12)

    def test_one_step_from_zero_small_grid(self):
        # 2x2 grid: one update from zero returns b / 4 on the block
        prob = lapjac.make_problem(2, 2, 1, n_sweeps=1)
        for j in range(prob.partition.num_blocks):
            vals = fpcore.evaluate_block(prob, j, np.zeros(4))
            expected = prob.system.b[prob.partition.blocks[j]] / 4.0
            assert vals == pytest.approx(expected, abs=1e-14)

    def test_gridworld_fixed_point(self, vi_small):
        prob, v_star = vi_small
        for j in range(prob.partition.num_blocks):
            vals = fpcore.evaluate_block(prob, j, v_star)
            assert vals == pytest.approx(v_star[prob.partition.blocks[j]], abs=1e-10)

    def test_rejects_bad_inputs(self, jacobi_small):
        with pytest.raises(ValueError):
            fpcore.evaluate_block(jacobi_small, 0, np.full(100, np.nan))
        with pytest.raises(ValueError):
            fpcore.evaluate_block(jacobi_small, 99, np.zeros(100))
        with pytest.raises(ValueError):
            fpcore.evaluate_block(jacobi_small, 0, np.zeros(7))


class TestApplyFullMap:
    def test_composition_equals_block_concatenation(self, jacobi_small):
        prob = jacobi_small
        rng = np.random.default_rng(1)
        x = rng.standard_normal(prob.n)
        full = fpcore.apply_full_map(prob, x)
        for j, blk in enumerate(prob.partition.blocks):
            assert full[blk] == pytest.approx(prob.evaluate_block(j, x), abs=1e-14)

    def test_fixed_point(self, jacobi_small):
        prob = jacobi_small
        assert fpcore.apply_full_map(prob, prob.system.x_star) == pytest.approx(
            prob.system.x_star, abs=1e-12)

    def test_jacobi_contraction_toward_solution(self, jacobi_small):
        prob = jacobi_small
        rho = np.cos(np.pi / 11.0)     # closed form for the 10x10 grid
        rng = np.random.default_rng(2)
        for _ in range(10):
            x = prob.system.x_star + rng.standard_normal(prob.n)
            err0 = np.linalg.norm(x - prob.system.x_star)
            err1 = np.linalg.norm(fpcore.apply_full_map(prob, x) - prob.system.x_star)
            assert err1 <= (rho + 1e-6) * err0


class TestResidualNorm:
    def test_zero_at_solution(self, jacobi_small):
        assert fpcore.residual_norm(jacobi_small, jacobi_small.system.x_star) \
            == pytest.approx(0.0, abs=1e-12)

    def test_relative_one_at_zero(self, jacobi_small):
        assert fpcore.residual_norm(jacobi_small, np.zeros(jacobi_small.n)) \
            == pytest.approx(1.0, abs=1e-14)

    def test_bellman_residual_bounded_by_max_reward(self):
        mdp = mdpvi.make_garnet(0, 50, 3, 4, 0.9)
        part = mdpvi.make_state_partition(50, 2)
        prob = mdpvi.VIProblem(mdp, part)
        res = fpcore.residual_norm(prob, np.zeros(50))
        assert res == pytest.approx(np.max(mdp.rewards), abs=1e-14)
        assert res <= 1.0

    def test_nonfinite_gives_inf(self, jacobi_small):
        assert fpcore.residual_norm(jacobi_small, np.full(jacobi_small.n, np.inf)) \
            == float("inf")


class TestCouplingFraction:
    def test_single_block_is_one(self):
        for prob in (lapjac.make_problem(10, 10, 10),
                     ppscf.make_problem(4, 2.0, 1)):
            vals = fpcore.coupling_fraction(prob, prob.partition)
            assert vals == pytest.approx(np.ones(len(vals)), abs=1e-14)

    def test_band_values_against_reported_ranges(self):
        system = lapjac.assemble_laplacian(100, 100)
        for rows, lo, hi in ((1, 0.60, 0.90), (2, 0.60, 0.90),
                             (5, 0.93, 0.99), (10, 0.93, 0.99)):
            part = lapjac.make_row_block_partition(100, 100, rows)
            prob = lapjac.JacobiProblem(system, part)
            mean = float(np.mean(fpcore.coupling_fraction(prob, part)))
            assert lo <= mean <= hi, (rows, mean)

    def test_invariant_under_block_relabeling(self):
        system = lapjac.assemble_laplacian(20, 20)
        part = lapjac.make_row_block_partition(20, 20, 5)
        prob = lapjac.JacobiProblem(system, part)
        vals = fpcore.coupling_fraction(prob, part)
        reordered = BlockPartition(part.n, tuple(reversed(part.blocks)))
        vals_r = fpcore.coupling_fraction(prob, reordered)
        assert vals_r == pytest.approx(vals[::-1], abs=1e-14)

    def test_values_in_unit_interval(self):
        mdp = mdpvi.make_garnet(1, 60, 3, 5, 0.9)
        part = mdpvi.make_state_partition(60, 4)
        prob = mdpvi.VIProblem(mdp, part)
        vals = fpcore.coupling_fraction(prob, part)
        assert np.all(vals >= 0) and np.all(vals <= 1)


class TestContractionProperty:
    def test_bellman_gamma_contraction(self):
        mdp = mdpvi.make_garnet(4, 80, 3, 5, 0.9)
        part = mdpvi.make_state_partition(80, 4)
        prob = mdpvi.VIProblem(mdp, part)
        rng = np.random.default_rng(0)
        for _ in range(50):
            v1 = rng.uniform(-5, 5, 80)
            v2 = rng.uniform(-5, 5, 80)
            lhs = np.max(np.abs(prob.apply_full_map(v1) - prob.apply_full_map(v2)))
            assert lhs <= 0.9 * np.max(np.abs(v1 - v2)) + 1e-12

    def test_jacobi_l2_contraction(self, jacobi_small):
        prob = jacobi_small
        rho = np.cos(np.pi / 11.0)
        rng = np.random.default_rng(9)
        for _ in range(20):
            x = rng.standard_normal(prob.n)
            y = rng.standard_normal(prob.n)
            lhs = np.linalg.norm(prob.apply_full_map(x) - prob.apply_full_map(y))
            assert lhs <= (rho + 1e-6) * np.linalg.norm(x - y)
