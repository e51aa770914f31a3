import numpy as np
import pytest

from stiefelnet.linalg import random_orthonormal
from stiefelnet.losses import scaled_mse
from stiefelnet.metrics import (
    PreconditionError,
    align_and_distance,
    aligned_differences,
    basin_radius,
    check_distance_bounds,
    check_regularity,
    gauge_transform,
    residual_h,
)
from stiefelnet.network import (
    INIT_NEAR_TEACHER,
    Network,
    NetworkShape,
    forward,
    init_student,
    layer_gradients,
    make_teacher,
)
from stiefelnet.losses import loss_grad


def o2_grid_oracle(w, w_star, spec_norm_y, step=1e-4):
    """Exhaustive search over O(2) for the two-layer objective.

    Walks rotations R(theta) and reflections F R(theta) on a theta grid and
    evaluates the distance objective directly, independent of the
    alternating solver.
    """
    thetas = np.arange(0.0, 2.0 * np.pi, step)
    c, s = np.cos(thetas), np.sin(thetas)
    rot = np.empty((thetas.size, 2, 2))
    rot[:, 0, 0], rot[:, 0, 1] = c, -s
    rot[:, 1, 0], rot[:, 1, 1] = s, c
    refl = np.empty_like(rot)
    refl[:, 0, 0], refl[:, 0, 1] = c, s
    refl[:, 1, 0], refl[:, 1, 1] = s, -c
    w1, w2 = w.layer(1), w.layer(2)
    t1, t2 = w_star.layer(1), w_star.layer(2)
    best = np.inf
    for family in (rot, refl):
        # layer 1 residual: ||W1 - R^T W1*||, layer 2: ||W2 - W2* R|| weighted
        r_t1 = np.einsum("kji,jl->kil", family, t1)
        term1 = np.sum((w1[None] - r_t1) ** 2, axis=(1, 2))
        t2_r = np.einsum("ij,kjl->kil", t2, family)
        term2 = spec_norm_y**2 * np.sum((w2[None] - t2_r) ** 2, axis=(1, 2))
        best = min(best, float(np.min(term1 + term2)))
    return best


class TestAlignAndDistance:
    def test_identical_networks(self):
        shape = NetworkShape.create((4, 6, 6, 8))
        inst = make_teacher(shape, 4, seed=0)
        res = align_and_distance(inst.teacher, inst.teacher, inst.spec_norm_y)
        assert res.dist_sq <= 1e-18
        for r in res.rotations:
            assert np.linalg.norm(r.T @ r - np.eye(r.shape[0])) <= 1e-10

    @pytest.mark.parametrize("depth", [2, 3, 4])
    def test_gauge_orbit_distance_vanishes(self, depth):
        shape = NetworkShape.create(tuple([4] + [6] * (depth - 1) + [8]))
        inst = make_teacher(shape, 4, seed=depth)
        rng = np.random.default_rng(depth)
        rotations = [random_orthonormal(d, d, rng) for d in shape.dims[1:-1]]
        moved = gauge_transform(inst.teacher, rotations)
        res = align_and_distance(moved, inst.teacher, inst.spec_norm_y)
        assert res.dist_sq <= 1e-18

    def test_gauge_invariance_of_measured_distance(self):
        shape = NetworkShape.create((4, 6, 6))
        inst = make_teacher(shape, 4, seed=5)
        student = init_student(shape, 6, scheme=INIT_NEAR_TEACHER, teacher=inst.teacher, magnitude=0.2)
        base = align_and_distance(student, inst.teacher, inst.spec_norm_y).dist_sq
        rng = np.random.default_rng(7)
        rotations = [random_orthonormal(d, d, rng) for d in shape.dims[1:-1]]
        moved_teacher = gauge_transform(inst.teacher, rotations)
        alt = align_and_distance(student, moved_teacher, inst.spec_norm_y).dist_sq
        assert alt == pytest.approx(base, abs=1e-9)

    def test_objective_monotone_over_sweeps(self):
        shape = NetworkShape.create((4, 6, 6, 8))
        inst = make_teacher(shape, 4, seed=8)
        student = init_student(shape, 9, scheme=INIT_NEAR_TEACHER, teacher=inst.teacher, magnitude=0.3)
        res = align_and_distance(student, inst.teacher, inst.spec_norm_y)
        trace = res.objective_trace
        assert all(a >= b - 1e-12 * max(1.0, a) for a, b in zip(trace, trace[1:]))


    def test_matches_o2_grid_oracle(self):
        for seed in range(10):
            shape = NetworkShape.create((3, 2, 4))
            inst = make_teacher(shape, 3, seed=seed)
            student = init_student(
                shape, seed + 100, scheme=INIT_NEAR_TEACHER, teacher=inst.teacher, magnitude=0.4
            )
            res = align_and_distance(student, inst.teacher, inst.spec_norm_y)
            oracle = o2_grid_oracle(student, inst.teacher, inst.spec_norm_y)
            assert res.dist_sq <= oracle + 1e-6
            assert res.dist_sq >= oracle - 1e-6

    def test_warm_start_accepted(self):
        shape = NetworkShape.create((4, 6, 6))
        inst = make_teacher(shape, 4, seed=10)
        student = init_student(shape, 11, scheme=INIT_NEAR_TEACHER, teacher=inst.teacher, magnitude=0.1)
        cold = align_and_distance(student, inst.teacher, inst.spec_norm_y)
        warm = align_and_distance(
            student, inst.teacher, inst.spec_norm_y, init_rotations=cold.rotations
        )
        assert warm.dist_sq == pytest.approx(cold.dist_sq, rel=1e-10)
        assert warm.sweeps_used <= cold.sweeps_used

    def test_dist_sq_equals_objective_at_stored_rotations(self):
        shape = NetworkShape.create((4, 6, 6))
        inst = make_teacher(shape, 4, seed=12)
        student = init_student(shape, 13, scheme=INIT_NEAR_TEACHER, teacher=inst.teacher, magnitude=0.2)
        res = align_and_distance(student, inst.teacher, inst.spec_norm_y)
        diffs = aligned_differences(student, inst.teacher, res.rotations)
        w = inst.spec_norm_y**2
        recomputed = float(np.vdot(diffs[0], diffs[0]))
        recomputed += sum(w * float(np.vdot(d, d)) for d in diffs[1:])
        assert recomputed == pytest.approx(res.dist_sq, abs=1e-10 * max(1.0, res.dist_sq))


class TestDistanceBounds:
    def test_exact_recovery_edge_case(self):
        shape = NetworkShape.create((4, 6, 6))
        inst = make_teacher(shape, 4, seed=14)
        rep = check_distance_bounds(inst.teacher, inst)
        assert rep.lower_ok and rep.upper_ok
        assert rep.output_err_sq <= 1e-20

    @pytest.mark.parametrize("depth", [2, 3, 4])
    def test_sandwich_holds_on_perturbed_students(self, depth):
        shape = NetworkShape.create(tuple([4] + [6] * (depth - 1) + [8]))
        for seed in range(25):
            rng = np.random.default_rng((depth, seed))
            inst = make_teacher(shape, 4, rng)
            student = init_student(
                shape, rng, scheme=INIT_NEAR_TEACHER, teacher=inst.teacher,
                magnitude=float(rng.uniform(0.0, 0.4)),
            )
            rep = check_distance_bounds(student, inst)
            assert rep.lower_ok, f"lower bound failed (depth={depth}, seed={seed})"
            assert rep.upper_ok, f"upper bound failed (depth={depth}, seed={seed})"

    def test_well_conditioned_lower_slack(self):
        shape = NetworkShape.create((4, 6, 6, 8))
        n = shape.depth
        for seed in range(10):
            inst = make_teacher(shape, 4, seed, kappa=1.0)
            student = init_student(
                shape, seed + 50, scheme=INIT_NEAR_TEACHER, teacher=inst.teacher, magnitude=0.1
            )
            rep = check_distance_bounds(student, inst)
            assert rep.lower_slack <= 16 * n - 8

    def test_energy_precondition_enforced(self):
        shape = NetworkShape.create((4, 6, 6))
        inst = make_teacher(shape, 4, seed=15)
        heavy = Network(
            shape=shape, w1=10.0 * inst.teacher.w1, constrained=inst.teacher.constrained
        )
        with pytest.raises(PreconditionError):
            check_distance_bounds(heavy, inst)


class TestBasinRadius:
    def test_formula_value(self):
        shape = NetworkShape.create((4, 6, 6, 8))
        inst = make_teacher(shape, 4, seed=16, kappa=1.0)
        model = scaled_mse()
        expected = 0.25 * inst.sigma_min_y**2 / (9 * 5 * 8)
        assert basin_radius(inst, model) == pytest.approx(expected)
        assert basin_radius(inst, model) == pytest.approx(
            inst.sigma_min_y**2 / 1440.0, rel=1e-12
        )

    def test_scales_with_sigma_min_squared(self):
        shape = NetworkShape.create((4, 6, 6, 8))
        model = scaled_mse()
        small = make_teacher(shape, 4, seed=17, w1_spectral_norm=1.0, kappa=1.0)
        big = make_teacher(shape, 4, seed=17, w1_spectral_norm=2.0, kappa=1.0)
        ratio = basin_radius(big, model) / basin_radius(small, model)
        assert ratio == pytest.approx(4.0, rel=1e-9)

    def test_depth_ratio(self):
        model = scaled_mse()
        inst3 = make_teacher(NetworkShape.create((4, 6, 6, 8)), 4, seed=18, kappa=1.0)
        inst6 = make_teacher(NetworkShape.create((4, 6, 6, 6, 6, 6, 8)), 4, seed=18, kappa=1.0)
        measured = basin_radius(inst6, model) / basin_radius(inst3, model)
        expected = (
            (inst6.sigma_min_y / inst3.sigma_min_y) ** 2 * (5.0 * 8.0) / (11.0 * 35.0)
        )
        assert measured == pytest.approx(expected, rel=1e-12)

    def test_needs_constants(self):
        from stiefelnet.losses import softmax_ce

        shape = NetworkShape.create((4, 6, 6))
        inst = make_teacher(shape, 4, seed=19)
        with pytest.raises(ValueError):
            basin_radius(inst, softmax_ce())


class TestRegularity:
    def test_zero_at_teacher(self):
        shape = NetworkShape.create((4, 6, 6))
        inst = make_teacher(shape, 4, seed=20)
        rep = check_regularity(inst.teacher, inst, scaled_mse())
        assert rep.lhs == pytest.approx(0.0, abs=1e-18)
        assert rep.rhs == pytest.approx(0.0, abs=1e-18)
        assert rep.satisfied

    def test_holds_on_basin_points(self):
        from stiefelnet.experiments import calibrate_basin_init

        model = scaled_mse()
        for depth in (2, 3):
            shape = NetworkShape.create(tuple([4] + [6] * (depth - 1) + [8]))
            for seed in range(10):
                inst = make_teacher(shape, 4, seed, kappa=1.0)
                student, dist_sq, _ = calibrate_basin_init(inst, model, seed)
                rep = check_regularity(student, inst, model)
                assert rep.satisfied
                assert rep.in_region
                assert rep.residual_h_norm_sq <= rep.residual_h_bound

    def test_gradient_energy_caps_from_output_gradient(self):
        # per-layer gradient norms are controlled by the output-gradient norm
        model = scaled_mse()
        shape = NetworkShape.create((4, 6, 6, 8))
        for seed in range(10):
            inst = make_teacher(shape, 4, seed)
            student = init_student(
                shape, seed + 30, scheme=INIT_NEAR_TEACHER, teacher=inst.teacher, magnitude=0.2
            )
            y = forward(student, inst.x)
            g_out = loss_grad(model, y, inst.y_star)
            grads = layer_gradients(student, inst.x, g_out)
            g_norm_sq = float(np.vdot(g_out, g_out))
            assert np.vdot(grads[0], grads[0]) <= g_norm_sq * (1 + 1e-12)
            cap = 2.25 * inst.spec_norm_y**2 * g_norm_sq
            for g in grads[1:]:
                assert np.vdot(g, g) <= cap * (1 + 1e-12)

    def test_inner_product_identity_with_residual(self):
        # sum_i <D_i, grad_i> equals <dL, (Y - Y*) + H> at any rotations
        model = scaled_mse()
        shape = NetworkShape.create((4, 6, 6, 8))
        inst = make_teacher(shape, 4, seed=21)
        student = init_student(shape, 22, scheme=INIT_NEAR_TEACHER, teacher=inst.teacher, magnitude=0.3)
        res = align_and_distance(student, inst.teacher, inst.spec_norm_y)
        y = forward(student, inst.x)
        grads = layer_gradients(student, inst.x, loss_grad(model, y, inst.y_star))
        diffs = aligned_differences(student, inst.teacher, res.rotations)
        lhs = sum(float(np.vdot(d, g)) for d, g in zip(diffs, grads))
        h = residual_h(student, inst, res.rotations)
        rhs = float(np.vdot(loss_grad(model, y, inst.y_star), (y - inst.y_star) + h))
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)

    def test_out_of_region_still_reports(self):
        shape = NetworkShape.create((4, 6, 6))
        inst = make_teacher(shape, 4, seed=23)
        student = init_student(shape, 24, scheme=INIT_NEAR_TEACHER, teacher=inst.teacher, magnitude=0.3)
        rep = check_regularity(student, inst, scaled_mse())
        assert not rep.in_region
        assert isinstance(rep.satisfied, bool)
