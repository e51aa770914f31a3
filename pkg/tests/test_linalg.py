import numpy as np
import pytest

from stiefelnet.linalg import (
    NumericalError,
    RankDeficiencyError,
    ShapeError,
    condition_number,
    matmul,
    random_orthonormal,
    sigma_min,
    spectral_norm,
    svd,
    whitened_input,
    zca_whiten,
)


def naive_matmul(a, b):
    """Triple-loop reference product, independent of the BLAS path."""
    rows, inner = a.shape
    cols = b.shape[1]
    out = np.zeros((rows, cols))
    for i in range(rows):
        for j in range(cols):
            acc = 0.0
            for k in range(inner):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        a = np.arange(6.0).reshape(2, 3)
        assert np.array_equal(matmul(np.eye(2), a), a)

    def test_annihilator(self):
        a = np.ones((3, 4))
        assert np.array_equal(matmul(a, np.zeros((4, 2))), np.zeros((3, 2)))

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 2))
        np.testing.assert_allclose(matmul(a, b), naive_matmul(a, b), rtol=1e-13, atol=1e-13)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(np.ones((2, 3)), np.ones((2, 2)))

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((7, 9))
        b = rng.standard_normal((9, 4))
        assert np.array_equal(matmul(a, b), matmul(a.copy(), b.copy()))

    def test_associativity(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            a = rng.standard_normal((4, 5))
            b = rng.standard_normal((5, 3))
            c = rng.standard_normal((3, 6))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            assert np.linalg.norm(left - right) <= 1e-10 * max(1.0, np.linalg.norm(left))


class TestSvd:
    def test_diagonal(self):
        f = svd(np.diag([3.0, 1.0]))
        np.testing.assert_allclose(f.s, [3.0, 1.0])

    def test_orthonormal_input_has_unit_singular_values(self):
        q = random_orthonormal(6, 4, seed=1)
        np.testing.assert_allclose(svd(q).s, np.ones(4), atol=1e-12)

    def test_squared_values_match_eigensolve_oracle(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((5, 3))
        evals = np.linalg.eigvalsh(a.T @ a)[::-1]
        np.testing.assert_allclose(svd(a).s ** 2, evals, rtol=1e-8, atol=1e-10)

    def test_reconstruction(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a = rng.standard_normal((6, 4)) * rng.uniform(0.1, 1e3)
            f = svd(a)
            err = np.linalg.norm(f.reconstruct() - a) / np.linalg.norm(a)
            assert err <= 1e-10
            assert np.all(np.diff(f.s) <= 0)
            assert np.all(f.s >= 0)

    def test_rejects_nonfinite(self):
        with pytest.raises(NumericalError):
            svd(np.array([[np.nan, 1.0], [0.0, 2.0]]))


class TestNorms:
    def test_diagonal_values(self):
        a = np.diag([4.0, 2.0])
        assert spectral_norm(a) == pytest.approx(4.0)
        assert sigma_min(a) == pytest.approx(2.0)
        assert condition_number(a) == pytest.approx(2.0)

    def test_isometry_condition_one(self):
        q = random_orthonormal(5, 5, seed=4)
        assert condition_number(q) == pytest.approx(1.0, abs=1e-12)

    def test_match_full_svd_oracle(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((6, 4))
        s = np.linalg.svd(a, compute_uv=False)
        assert spectral_norm(a) == pytest.approx(s[0])
        assert sigma_min(a) == pytest.approx(s[-1])
        assert condition_number(a) == pytest.approx(s[0] / s[-1])

    def test_rank_deficient_condition_number(self):
        a = np.ones((3, 3))
        with pytest.raises(RankDeficiencyError):
            condition_number(a)


class TestRandomOrthonormal:
    def test_square_orthogonality(self):
        q = random_orthonormal(3, 3, seed=7)
        assert np.linalg.norm(q.T @ q - np.eye(3)) <= 1e-12

    def test_tall_singular_values(self):
        q = random_orthonormal(5, 2, seed=8)
        np.testing.assert_allclose(np.linalg.svd(q, compute_uv=False), 1.0, atol=1e-12)

    def test_seed_determinism(self):
        assert np.array_equal(random_orthonormal(6, 3, seed=9), random_orthonormal(6, 3, seed=9))

    def test_square_determinant_is_unit(self):
        for seed in range(10):
            q = random_orthonormal(4, 4, seed=seed)
            assert abs(abs(np.linalg.det(q)) - 1.0) <= 1e-10

    def test_rows_less_than_cols_rejected(self):
        with pytest.raises(ShapeError):
            random_orthonormal(2, 3, seed=0)


class TestWhitenedInput:
    def test_square_case_is_orthogonal(self):
        x = whitened_input(4, 4, seed=10)
        assert np.linalg.norm(x @ x.T - np.eye(4)) <= 1e-10

    def test_defining_property(self):
        x = whitened_input(4, 16, seed=11)
        assert np.linalg.norm(x @ x.T - np.eye(4)) <= 1e-10

    def test_row_inner_products_are_kronecker(self):
        x = whitened_input(5, 12, seed=12)
        gram = x @ x.T
        for i in range(5):
            for j in range(5):
                assert gram[i, j] == pytest.approx(1.0 if i == j else 0.0, abs=1e-10)

    def test_preserves_frobenius_norm_of_left_factor(self):
        # the property the whitening assumption buys: ||A X||_F = ||A||_F
        rng = np.random.default_rng(13)
        x = whitened_input(6, 20, seed=13)
        for _ in range(5):
            a = rng.standard_normal((4, 6))
            assert np.linalg.norm(a @ x) == pytest.approx(np.linalg.norm(a), abs=1e-10)

    def test_infeasible(self):
        with pytest.raises(ShapeError):
            whitened_input(5, 4, seed=0)


class TestZcaWhiten:
    def test_already_white_is_fixed_point(self):
        x = whitened_input(4, 10, seed=14)
        out = zca_whiten(x, eps=1e-12)
        assert np.linalg.norm(out - x) <= 1e-6

    def test_diag_covariance_lands_near_identity(self):
        rng = np.random.default_rng(15)
        scales = np.array([3.0, 1.0, 0.5])
        x = (whitened_input(3, 30, seed=15).T * scales).T
        out = zca_whiten(x, eps=1e-8)
        cov = out @ out.T
        assert np.linalg.norm(cov - np.eye(3)) <= 1e-6

    def test_eps_band(self):
        rng = np.random.default_rng(16)
        d = 6
        x = rng.standard_normal((d, 40))
        eps = 1e-5
        out = zca_whiten(x, eps=eps)
        assert np.linalg.norm(out @ out.T - np.eye(d)) <= 10 * eps * d

    def test_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            zca_whiten(np.ones((2, 4)), eps=0.0)
