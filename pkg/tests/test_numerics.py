import numpy as np
import pytest

from dntk.errors import NonFinite, NotSquare, NotSymmetric, SingularSystem
from dntk.numerics import (
    fix_signs,
    qr_redundancy_filter,
    ridge_solve_direct,
    svd_rank,
    sym_eig,
    thin_svd,
)


def rand_sym(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, n))
    return (a + a.T) / 2


def rand_psd(n, seed, rank=None):
    rng = np.random.default_rng(seed)
    b = rng.normal(size=(n, rank or n))
    return b @ b.T


class TestSymEig:
    def test_reconstruction(self):
        s = rand_sym(12, 0)
        eig = sym_eig(s)
        recon = eig.vectors @ np.diag(eig.values) @ eig.vectors.T
        np.testing.assert_allclose(recon, s, atol=1e-10)

    def test_descending_and_orthonormal(self):
        eig = sym_eig(rand_sym(20, 1))
        assert np.all(np.diff(eig.values) <= 1e-12)
        gram = eig.vectors.T @ eig.vectors
        np.testing.assert_allclose(gram, np.eye(20), atol=1e-10)

    def test_identity(self):
        eig = sym_eig(np.eye(5))
        np.testing.assert_allclose(eig.values, np.ones(5))

    def test_diagonal_known_values(self):
        eig = sym_eig(np.diag([3.0, 1.0, 2.0]))
        np.testing.assert_allclose(eig.values, [3.0, 2.0, 1.0])

    def test_sign_convention_deterministic(self):
        # first nonzero entry of each eigenvector is positive
        eig = sym_eig(rand_sym(9, 7))
        for j in range(9):
            col = eig.vectors[:, j]
            nz = np.flatnonzero(np.abs(col) > 1e-12)
            assert col[nz[0]] > 0

    def test_rejects_nonsquare(self):
        with pytest.raises(NotSquare):
            sym_eig(np.ones((3, 4)))

    def test_rejects_asymmetric(self):
        a = np.array([[1.0, 2.0], [0.0, 1.0]])
        with pytest.raises(NotSymmetric):
            sym_eig(a)

    def test_rejects_nan(self):
        a = np.eye(3)
        a[0, 0] = np.nan
        with pytest.raises(NonFinite):
            sym_eig(a)


class TestThinSvd:
    def test_reconstruction(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(10, 6))
        res = thin_svd(a)
        recon = res.left @ np.diag(res.singulars) @ res.right.T
        np.testing.assert_allclose(recon, a, atol=1e-10)

    def test_singulars_descending_nonnegative(self):
        rng = np.random.default_rng(4)
        res = thin_svd(rng.normal(size=(7, 11)))
        assert np.all(res.singulars >= 0)
        assert np.all(np.diff(res.singulars) <= 0)

    def test_zero_matrix(self):
        res = thin_svd(np.zeros((4, 3)))
        np.testing.assert_array_equal(res.singulars, np.zeros(3))

    def test_orthonormal_factors(self):
        rng = np.random.default_rng(5)
        res = thin_svd(rng.normal(size=(9, 5)))
        np.testing.assert_allclose(res.left.T @ res.left, np.eye(5), atol=1e-10)
        np.testing.assert_allclose(res.right.T @ res.right, np.eye(5), atol=1e-10)


class TestSvdRank:
    def test_exact_rank(self):
        a = np.outer([1.0, 2.0, 3.0], [4.0, 5.0]).T  # rank 1
        res = thin_svd(a)
        assert svd_rank(res.singulars, 1e-10) == 1

    def test_full_rank(self):
        res = thin_svd(np.diag([5.0, 2.0, 1.0]))
        assert svd_rank(res.singulars, 1e-10) == 3

    def test_zero(self):
        assert svd_rank(np.zeros(4), 1e-10) == 0


class TestFixSigns:
    def test_idempotent(self):
        rng = np.random.default_rng(6)
        v = rng.normal(size=(8, 4))
        once = fix_signs(v)
        np.testing.assert_array_equal(fix_signs(once), once)

    def test_flips_negative_leading_entry(self):
        v = np.array([[-0.1, 0.9], [0.9, -0.1]])
        fixed = fix_signs(v)
        np.testing.assert_allclose(fixed[:, 0], [0.1, -0.9])
        np.testing.assert_allclose(fixed[:, 1], [0.9, -0.1])

    def test_skips_leading_zeros(self):
        v = np.array([[0.0], [-1.0]])
        np.testing.assert_allclose(fix_signs(v)[:, 0], [0.0, 1.0])


class TestQrRedundancyFilter:
    def test_orthonormal_columns_all_kept(self):
        q, _ = np.linalg.qr(np.random.default_rng(8).normal(size=(10, 4)))
        kept = qr_redundancy_filter(q)
        np.testing.assert_array_equal(kept, np.arange(4))

    def test_duplicate_column_dropped(self):
        rng = np.random.default_rng(9)
        base = rng.normal(size=(12, 3))
        cols = np.column_stack([base, base[:, 1]])
        kept = qr_redundancy_filter(cols)
        assert kept.size == 3

    def test_near_duplicate_dropped(self):
        rng = np.random.default_rng(10)
        base = rng.normal(size=(12, 3))
        cols = np.column_stack([base, base[:, 0] + 1e-12 * base[:, 2]])
        assert qr_redundancy_filter(cols, eps_rel=1e-6).size == 3

    def test_kept_columns_independent(self):
        # oracle: rank of kept submatrix equals number kept
        rng = np.random.default_rng(11)
        base = rng.normal(size=(15, 5))
        mix = np.column_stack([base, base @ rng.normal(size=(5, 3))])
        kept = qr_redundancy_filter(mix)
        sub = mix[:, kept]
        assert np.linalg.matrix_rank(sub) == kept.size == 5

    def test_indices_sorted(self):
        rng = np.random.default_rng(12)
        cols = rng.normal(size=(8, 6))
        kept = qr_redundancy_filter(cols)
        assert np.all(np.diff(kept) > 0)

    def test_zero_matrix_keeps_nothing(self):
        assert qr_redundancy_filter(np.zeros((5, 3))).size == 0


class TestRidgeSolveDirect:
    def test_identity_kernel_lambda_zero(self):
        y = np.random.default_rng(13).normal(size=(6, 2))
        alpha = ridge_solve_direct(np.eye(6), y, 0.0)
        np.testing.assert_allclose(alpha, y, atol=1e-12)

    def test_against_explicit_inverse(self):
        rng = np.random.default_rng(14)
        k = rand_psd(9, 14)
        y = rng.normal(size=(9, 3))
        lam = 0.37
        expected = np.linalg.inv(k + lam * np.eye(9)) @ y
        got = ridge_solve_direct(k, y, lam)
        np.testing.assert_allclose(got, expected, rtol=1e-9, atol=1e-11)

    def test_residual_property(self):
        rng = np.random.default_rng(15)
        k = rand_psd(20, 15)
        y = rng.normal(size=(20, 1))
        lam = 1e-3
        alpha = ridge_solve_direct(k, y, lam)
        resid = np.linalg.norm((k + lam * np.eye(20)) @ alpha - y)
        assert resid <= 1e-8 * np.linalg.norm(y)

    def test_singular_lambda_zero_raises(self):
        k = rand_psd(10, 16, rank=3)  # rank deficient
        y = np.ones((10, 1))
        with pytest.raises(SingularSystem):
            ridge_solve_direct(k, y, 0.0)
