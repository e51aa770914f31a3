import numpy as np
import pytest

from stiefelnet.linalg import ShapeError, random_orthonormal
from stiefelnet.stiefel import (
    COLUMN,
    ROW,
    RetractionSingularityError,
    StiefelPoint,
    TangentVector,
    orthonormality_defect,
    perturb_on_manifold,
    polar_retract,
    project_normal,
    project_tangent,
)


def column_point(m, n, seed):
    return StiefelPoint(mat=random_orthonormal(m, n, seed), orientation=COLUMN)


class TestStiefelPoint:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError, match="not orthonormal"):
            StiefelPoint(mat=np.ones((3, 2)))

    def test_rejects_wrong_aspect(self):
        with pytest.raises(ShapeError):
            StiefelPoint(mat=random_orthonormal(3, 2, 0).T, orientation=COLUMN)

    def test_row_orientation_is_transposed_column(self):
        q = random_orthonormal(5, 3, seed=1)
        p = StiefelPoint(mat=q.T, orientation=ROW)
        assert np.array_equal(p.column_frame(), q)


class TestProjectTangent:
    def test_already_tangent_direction_unchanged(self):
        c = StiefelPoint(mat=np.array([[1.0], [0.0]]))
        b = np.array([[0.0], [1.0]])
        assert np.array_equal(project_tangent(c, b).mat, b)

    def test_point_itself_projects_to_zero(self):
        c = column_point(4, 2, seed=2)
        t = project_tangent(c, c.mat)
        assert np.linalg.norm(t.mat) <= 1e-12

    def test_matches_direct_formula_and_is_tangent(self):
        rng = np.random.default_rng(3)
        c = column_point(5, 3, seed=3)
        b = rng.standard_normal((5, 3))
        expected = b - 0.5 * c.mat @ (b.T @ c.mat + c.mat.T @ b)
        t = project_tangent(c, b)
        np.testing.assert_allclose(t.mat, expected, atol=1e-14)
        defect = np.linalg.norm(t.mat.T @ c.mat + c.mat.T @ t.mat)
        assert defect <= 1e-12

    def test_idempotent(self):
        rng = np.random.default_rng(4)
        for seed in range(10):
            c = column_point(6, 3, seed=seed)
            b = rng.standard_normal((6, 3))
            once = project_tangent(c, b).mat
            twice = project_tangent(c, once).mat
            assert np.linalg.norm(twice - once) <= 1e-12

    def test_linear_in_ambient_argument(self):
        rng = np.random.default_rng(5)
        c = column_point(5, 2, seed=6)
        b1 = rng.standard_normal((5, 2))
        b2 = rng.standard_normal((5, 2))
        combo = project_tangent(c, 2.0 * b1 - 3.0 * b2).mat
        parts = 2.0 * project_tangent(c, b1).mat - 3.0 * project_tangent(c, b2).mat
        assert np.linalg.norm(combo - parts) <= 1e-12

    def test_shape_mismatch(self):
        c = column_point(4, 2, seed=7)
        with pytest.raises(ShapeError):
            project_tangent(c, np.ones((4, 3)))


class TestProjectNormal:
    def test_point_is_its_own_normal_part(self):
        c = column_point(4, 2, seed=8)
        np.testing.assert_allclose(project_normal(c, c.mat), c.mat, atol=1e-12)

    def test_tangent_input_gives_zero(self):
        rng = np.random.default_rng(9)
        c = column_point(5, 3, seed=9)
        t = project_tangent(c, rng.standard_normal((5, 3))).mat
        assert np.linalg.norm(project_normal(c, t)) <= 1e-12

    def test_pythagorean_split(self):
        rng = np.random.default_rng(10)
        for seed in range(10):
            c = column_point(6, 4, seed=seed)
            b = rng.standard_normal((6, 4))
            t = project_tangent(c, b).mat
            n = project_normal(c, b)
            total = np.vdot(b, b)
            assert abs(total - np.vdot(t, t) - np.vdot(n, n)) <= 1e-10 * max(1.0, total)
            assert abs(np.vdot(t, n)) <= 1e-10


class TestPolarRetract:
    def test_orthonormal_candidate_is_fixed_point(self):
        c = column_point(5, 3, seed=11)
        q = random_orthonormal(5, 3, seed=12)
        out = polar_retract(c, q)
        assert np.linalg.norm(out.mat - q) <= 1e-12

    def test_scale_invariance(self):
        c = column_point(5, 3, seed=13)
        q = random_orthonormal(5, 3, seed=14)
        out = polar_retract(c, 2.0 * q)
        np.testing.assert_allclose(out.mat, q, atol=1e-12)

    def test_two_route_agreement(self):
        rng = np.random.default_rng(15)
        c = column_point(5, 3, seed=15)
        for _ in range(10):
            cand = c.mat + 0.7 * rng.standard_normal((5, 3))
            u, s, vt = np.linalg.svd(cand, full_matrices=False)
            if s[-1] < 1e-6:
                continue
            via_svd = u @ vt
            evals, evecs = np.linalg.eigh(cand.T @ cand)
            via_root = cand @ (evecs / np.sqrt(evals)) @ evecs.T
            out = polar_retract(c, cand)
            assert np.linalg.norm(out.mat - via_svd) <= 1e-9
            assert np.linalg.norm(out.mat - via_root) <= 1e-9

    def test_output_is_orthonormal(self):
        rng = np.random.default_rng(16)
        c = column_point(7, 4, seed=16)
        cand = c.mat + rng.standard_normal((7, 4))
        out = polar_retract(c, cand)
        assert orthonormality_defect(out.mat) <= 1e-10

    def test_rank_deficient_candidate_rejected(self):
        c = column_point(4, 2, seed=17)
        cand = np.zeros((4, 2))
        cand[:, 0] = c.mat[:, 0]
        cand[:, 1] = c.mat[:, 0]
        with pytest.raises(RetractionSingularityError):
            polar_retract(c, cand)

    def test_nonexpansive_toward_orthonormal_targets(self):
        # holds for tangent-step candidates, whose Gram matrix dominates I;
        # it is false for arbitrary full-rank candidates (sign flips in 1-D)
        rng = np.random.default_rng(18)
        for k in range(200):
            m = int(rng.integers(2, 8))
            n = int(rng.integers(1, m + 1))
            c = StiefelPoint(mat=random_orthonormal(m, n, rng))
            step = project_tangent(c, rng.standard_normal((m, n)) * rng.uniform(0.05, 3.0)).mat
            cand = c.mat + step
            target = random_orthonormal(m, n, rng)
            out = polar_retract(c, cand)
            assert (
                np.linalg.norm(out.mat - target)
                <= np.linalg.norm(cand - target) + 1e-12
            )

    def test_row_orientation_matches_transposed_column(self):
        rng = np.random.default_rng(19)
        q = random_orthonormal(6, 3, seed=19)
        step = rng.standard_normal((6, 3))
        col = polar_retract(StiefelPoint(mat=q), q + step)
        row = polar_retract(StiefelPoint(mat=q.T, orientation=ROW), (q + step).T)
        assert np.array_equal(col.mat.T, row.mat)


class TestPerturbOnManifold:
    def test_zero_magnitude_is_identity(self):
        c = column_point(5, 3, seed=20)
        assert perturb_on_manifold(c, 0.0, seed=1) is c

    @pytest.mark.parametrize("magnitude", [1e-3, 1e-1])
    def test_distance_capped_by_twice_magnitude(self, magnitude):
        c = column_point(6, 3, seed=21)
        out = perturb_on_manifold(c, magnitude, seed=2)
        assert np.linalg.norm(out.mat - c.mat) <= 2.0 * magnitude
        assert orthonormality_defect(out.mat) <= 1e-10

    def test_seed_determinism(self):
        c = column_point(6, 3, seed=22)
        a = perturb_on_manifold(c, 0.05, seed=3)
        b = perturb_on_manifold(c, 0.05, seed=3)
        assert np.array_equal(a.mat, b.mat)

    def test_negative_magnitude_rejected(self):
        c = column_point(4, 2, seed=23)
        with pytest.raises(ValueError):
            perturb_on_manifold(c, -0.1, seed=0)


def test_tangent_vector_norm():
    c = column_point(4, 2, seed=24)
    t = project_tangent(c, np.ones((4, 2)))
    assert isinstance(t, TangentVector)
    assert t.norm() == pytest.approx(np.linalg.norm(t.mat))
