import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asyncfp import accel, numkit, ppscf
from asyncfp.accel import AccelMode, AndersonWindow, anderson_candidate, damped_mix, safeguarded_step


class TestAccelMode:
    def test_valid_modes(self):
        AccelMode()
        AccelMode(kind="coordinator_accel")
        AccelMode(kind="periodic_accel", period=5, alpha=0.3)
        AccelMode(kind="damped_only", alpha=0.3)

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            AccelMode(kind="turbo")
        with pytest.raises(ValueError):
            AccelMode(kind="periodic_accel", period=0)
        with pytest.raises(ValueError):
            AccelMode(kind="periodic_accel", alpha=0.0)
        with pytest.raises(ValueError):
            AccelMode(kind="periodic_accel", alpha=1.5)


class TestWindowDiscipline:
    def test_capacity_and_order(self):
        win = AndersonWindow(m=2)
        for k in range(6):
            v = np.full(3, float(k))
            win.push(v, v + 1, v + 2)
        entries = win.entries()
        assert len(entries) == 3          # m + 1
        assert entries[-1][0][0] == 5.0   # newest last
        assert entries[0][0][0] == 3.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 5), st.integers(1, 12))
    def test_never_exceeds_m_plus_one(self, m, pushes):
        win = AndersonWindow(m=m)
        for k in range(pushes):
            v = np.array([float(k)])
            win.push(v, v, v)
            assert len(win) <= m + 1
        newest = win.entries()[-1][0][0]
        assert newest == pushes - 1

    def test_rejects_nonfinite_and_mismatched(self):
        win = AndersonWindow(m=2)
        win.push(np.ones(2), np.ones(2), np.ones(2))
        with pytest.raises(ValueError):
            win.push(np.ones(3), np.ones(3), np.ones(3))
        with pytest.raises(ValueError):
            win.push(np.array([np.nan, 1.0]), np.ones(2), np.ones(2))

    def test_rejects_bad_params(self):
        with pytest.raises(ValueError):
            AndersonWindow(m=-1)
        with pytest.raises(ValueError):
            AndersonWindow(m=2, fire_every=0)
        with pytest.raises(ValueError):
            AndersonWindow(m=2, mixing_beta=0.0)


class TestAndersonCandidate:
    def test_single_entry_returns_map_value(self):
        win = AndersonWindow(m=3)
        x = np.array([1.0, 2.0])
        gx = np.array([3.0, 4.0])
        win.push(x, gx, gx - x)
        cand, info = anderson_candidate(win)
        assert cand == pytest.approx(gx)
        assert info.coefficients == pytest.approx([1.0])

    def test_two_entry_scalar_exact(self):
        # G(x) = 0.5 x + 0.5 with history x = {0, 0.5}: residuals
        # {0.5, 0.25}, weights (-1, 2), candidate = 1.0 = the fixed point
        win = AndersonWindow(m=3)
        win.push(np.array([0.0]), np.array([0.5]), np.array([0.5]))
        win.push(np.array([0.5]), np.array([0.75]), np.array([0.25]))
        cand, info = anderson_candidate(win)
        assert info.coefficients == pytest.approx([-1.0, 2.0], abs=1e-12)
        assert cand == pytest.approx([1.0], abs=1e-12)

    def test_mixing_beta_blends_iterates(self):
        win = AndersonWindow(m=3, mixing_beta=0.5)
        win.push(np.array([0.0]), np.array([1.0]), np.array([1.0]))
        cand, _ = anderson_candidate(win)
        assert cand == pytest.approx([0.5])

    def test_empty_window_raises(self):
        with pytest.raises(ValueError):
            anderson_candidate(AndersonWindow(m=2))


class _LinearProblem:
    """Affine contraction used to gate candidates in safeguard tests."""

    name = "linear"
    native_norm = "l2"
    evaluation_kind = "partial-update"

    def __init__(self, m, b):
        self.m = m
        self.b = b
        self.n = b.size

    def apply_full_map(self, x):
        return self.m @ x + self.b

    def residual_vector(self, x):
        return self.apply_full_map(x) - x

    def residual_norm(self, x):
        if not np.all(np.isfinite(x)):
            return float("inf")
        return float(np.linalg.norm(self.residual_vector(x)))

    def accel_candidate_to_iterate(self, mixed):
        return mixed


@pytest.fixture(scope="module")
def linear_problem():
    rng = np.random.default_rng(42)
    m = rng.standard_normal((20, 20))
    m *= 0.9 / np.linalg.norm(m, 2)
    return _LinearProblem(m, rng.standard_normal(20))


class TestWalkerNiEquivalence:
    def test_untruncated_matches_gmres(self, linear_problem):
        # per-iteration constrained least-squares residual norms equal the
        # reference Krylov residual history on (I - M) x = b
        prob = linear_problem
        win = AndersonWindow(m=20, safeguard=False)
        x = np.zeros(prob.n)
        ls_norms = []
        for _ in range(15):
            gx = prob.apply_full_map(x)
            win.push(x, gx, gx - x)
            cand, info = anderson_candidate(win)
            assert not info.fallback
            ls_norms.append(info.ls_residual_norm)
            x = cand
        gm = numkit.gmres_reference(lambda v: v - prob.m @ v, prob.b, 15)
        for a, g in zip(ls_norms, gm):
            assert abs(a - g) < 1e-8

    def test_exactness_at_dimension(self, linear_problem):
        prob = linear_problem
        win = AndersonWindow(m=25, safeguard=False)
        x = np.zeros(prob.n)
        for _ in range(prob.n + 1):
            gx = prob.apply_full_map(x)
            win.push(x, gx, gx - x)
            x, _ = anderson_candidate(win)
        assert prob.residual_norm(x) < 1e-8


class TestSafeguard:
    def test_accepts_candidate_at_fixed_point(self, linear_problem):
        prob = linear_problem
        x_star = np.linalg.solve(np.eye(prob.n) - prob.m, prob.b)
        win = AndersonWindow(m=2)
        # craft a history whose extrapolation is exactly the fixed point
        win.push(x_star, x_star, np.zeros(prob.n))
        x0 = x_star + 0.5
        res = safeguarded_step(prob, win, x0)
        assert res.accepted
        assert res.candidate_residual < res.current_residual

    def test_rejects_inflated_candidate(self, linear_problem):
        prob = linear_problem
        rng = np.random.default_rng(0)
        win = AndersonWindow(m=1)
        bad = rng.standard_normal(prob.n) * 100
        win.push(bad, bad * 2, np.full(prob.n, 1e-9))
        x0 = np.linalg.solve(np.eye(prob.n) - prob.m, prob.b) + 1e-3
        gx0 = prob.apply_full_map(x0)
        res = safeguarded_step(prob, win, x0, gx_current=gx0)
        assert not res.accepted
        assert res.next_x == pytest.approx(gx0)

    def test_accepted_step_satisfies_strict_decrease(self, linear_problem):
        prob = linear_problem
        win = AndersonWindow(m=5)
        x = np.zeros(prob.n)
        for _ in range(10):
            gx = prob.apply_full_map(x)
            win.push(x, gx, gx - x)
            res = safeguarded_step(prob, win, x, gx_current=gx)
            if res.accepted:
                assert res.candidate_residual < res.current_residual
            x = res.next_x
        assert prob.residual_norm(x) < prob.residual_norm(np.zeros(prob.n))

    def test_clear_on_reject(self, linear_problem):
        prob = linear_problem
        win = AndersonWindow(m=3, clear_on_reject=True)
        bad = np.full(prob.n, 50.0)
        win.push(bad, bad * 3, np.full(prob.n, 1e-10))
        x0 = np.linalg.solve(np.eye(prob.n) - prob.m, prob.b) + 1e-6
        res = safeguarded_step(prob, win, x0)
        assert not res.accepted
        assert len(win) == 0


class TestDampedMix:
    def test_alpha_one_returns_map_value(self):
        x, gx = np.zeros(3), np.ones(3)
        assert damped_mix(x, gx, 1.0) == pytest.approx(gx)

    def test_alpha_point_three(self):
        out = damped_mix(np.zeros(4), np.ones(4), 0.3)
        assert out == pytest.approx(np.full(4, 0.3))

    def test_idempotent_at_fixed_point(self):
        x = np.array([2.0, -1.0])
        assert damped_mix(x, x, 0.7) == pytest.approx(x)

    def test_errors(self):
        with pytest.raises(ValueError):
            damped_mix(np.zeros(2), np.zeros(3), 0.5)
        with pytest.raises(ValueError):
            damped_mix(np.zeros(2), np.zeros(2), 0.0)


def pulay_diis_reference(system, p0, iters):
    """Directly coded Fock-matrix mixing with the bordered linear system;
    independent of the window/least-squares machinery under test."""
    p = p0.copy()
    focks, errs, seq = [], [], []
    for _ in range(iters):
        f = ppscf.build_fock(system, p)
        e = (f @ p - p @ f).ravel()
        focks.append(f.ravel())
        errs.append(e)
        k = len(errs)
        bmat = np.zeros((k + 1, k + 1))
        bmat[:k, :k] = np.array([[ei @ ej for ej in errs] for ei in errs])
        bmat[k, :k] = 1.0
        bmat[:k, k] = 1.0
        rhs = np.zeros(k + 1)
        rhs[k] = 1.0
        coef = np.linalg.solve(bmat, rhs)[:k]
        f_mix = sum(c * fv for c, fv in zip(coef, focks)).reshape(p.shape)
        p = ppscf.density_from_fock(system, 0.5 * (f_mix + f_mix.T))
        seq.append(p.copy())
    return seq


class TestDiisEquivalence:
    def test_matches_directly_coded_fock_mixing(self):
        # four-site chain: the window-based route must reproduce the same
        # density sequence as classic Fock-matrix mixing
        system = ppscf.make_system(4, u=2.0)
        prob = ppscf.ScfProblem(system, ppscf.make_row_partition(4, 2))
        p0 = ppscf.density_from_fock(system, system.h_core)
        ref = pulay_diis_reference(system, p0, 6)

        win = AndersonWindow(m=8, safeguard=False)
        x = p0.ravel()
        seq = []
        for _ in range(6):
            rvec = prob.residual_vector(x)
            mix = prob.accel_mix_value(x, rvec)
            win.push(x, mix, rvec)
            cand, info = anderson_candidate(win)
            assert not info.fallback
            x = prob.accel_candidate_to_iterate(cand)
            seq.append(x.reshape(4, 4).copy())
        # identical while the bordered-system oracle is well conditioned
        # (its matrix entries scale as the squared commutator norm); after
        # the commutator drops below ~1e-4 the oracle loses digits first
        for a, b in zip(seq[:3], ref[:3]):
            assert np.allclose(a, b, atol=1e-12), np.abs(a - b).max()
        for a, b in zip(seq[3:], ref[3:]):
            assert np.allclose(a, b, atol=1e-4), np.abs(a - b).max()
