"""Sampling suites that certify the library's geometric and analytic claims.

Each suite draws seeded random cases, evaluates the claimed inequalities
or identities, and returns per-sample records (seed, depth, dims, slack
factors, flags) plus a summary with worst-case slack. The harness streams
the records as JSONL.
"""

from __future__ import annotations

import numpy as np

from .linalg import as_rng, random_orthonormal
from .losses import scaled_mse
from .metrics import align_and_distance, basin_radius, check_distance_bounds, check_regularity
from .network import INIT_NEAR_TEACHER, NetworkShape, init_student, make_teacher
from .stiefel import (
    COLUMN,
    StiefelPoint,
    orthonormality_defect,
    polar_retract,
    project_normal,
    project_tangent,
)


def _two_route_retraction_gap(candidate: np.ndarray) -> float:
    """Disagreement between the SVD route and the inverse-square-root route."""
    u, s, vt = np.linalg.svd(candidate, full_matrices=False)
    via_svd = u @ vt
    gram = candidate.T @ candidate
    evals, evecs = np.linalg.eigh(gram)
    inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.T
    via_root = candidate @ inv_sqrt
    return float(np.linalg.norm(via_svd - via_root))


def geometry_suite(samples: int, seed) -> dict:
    """Tangent-projection and retraction properties on random small points."""
    rng = as_rng(seed)
    records = []
    worst = {
        "idempotence": 0.0,
        "tangency": 0.0,
        "pythagoras": 0.0,
        "retraction_defect": 0.0,
        "two_route_gap": 0.0,
        "nonexpansive_excess": -np.inf,
    }
    failures = 0
    for k in range(samples):
        m = int(rng.integers(2, 11))
        n = int(rng.integers(1, m + 1))
        point = StiefelPoint(mat=random_orthonormal(m, n, rng), orientation=COLUMN)
        b = rng.standard_normal((m, n))

        t = project_tangent(point, b)
        t2 = project_tangent(point, t.mat)
        idem = float(np.linalg.norm(t2.mat - t.mat))
        sym = t.mat.T @ point.mat + point.mat.T @ t.mat
        tangency = float(np.linalg.norm(sym))
        nb = project_normal(point, b)
        pyth = abs(
            float(np.vdot(b, b)) - float(np.vdot(t.mat, t.mat)) - float(np.vdot(nb, nb))
        ) / max(1.0, float(np.vdot(b, b)))

        # tangent-step candidate: the retraction's Gram matrix dominates I
        # there, which is what makes it nonexpansive toward manifold targets
        step = project_tangent(point, rng.standard_normal((m, n)) * rng.uniform(0.05, 2.0))
        candidate = point.mat + step.mat
        retracted = polar_retract(point, candidate)
        defect = orthonormality_defect(retracted.mat, COLUMN)
        gap = _two_route_retraction_gap(candidate)

        target = random_orthonormal(m, n, rng)
        excess = float(
            np.linalg.norm(retracted.mat - target) - np.linalg.norm(candidate - target)
        )

        ok = (
            idem <= 1e-12
            and tangency <= 1e-12
            and pyth <= 1e-10
            and defect <= 1e-10
            and gap <= 1e-9
            and excess <= 1e-12
        )
        failures += 0 if ok else 1
        worst["idempotence"] = max(worst["idempotence"], idem)
        worst["tangency"] = max(worst["tangency"], tangency)
        worst["pythagoras"] = max(worst["pythagoras"], pyth)
        worst["retraction_defect"] = max(worst["retraction_defect"], defect)
        worst["two_route_gap"] = max(worst["two_route_gap"], gap)
        worst["nonexpansive_excess"] = max(worst["nonexpansive_excess"], excess)
        records.append(
            {
                "sample": k,
                "dims": [m, n],
                "idempotence": idem,
                "tangency": tangency,
                "pythagoras": pyth,
                "retraction_defect": defect,
                "two_route_gap": gap,
                "nonexpansive_excess": excess,
                "ok": ok,
            }
        )
    summary = {
        "suite": "geometry",
        "samples": samples,
        "passed": samples - failures,
        "failed": failures,
        "all_ok": failures == 0,
        "worst": worst,
    }
    return {"records": records, "summary": summary}


def _random_column_dims(rng, depth: int, d_max: int = 8) -> tuple:
    """A feasible all-column-orthonormal chain with dims <= d_max."""
    d0 = int(rng.integers(2, 6))
    dims = [d0, int(rng.integers(2, d_max + 1))]
    for _ in range(depth - 1):
        dims.append(int(rng.integers(dims[-1], d_max + 1)))
    return tuple(dims)


def distance_bounds_suite(samples_per_depth: int, seed, depths=(2, 3, 4)) -> dict:
    """Sandwich inequalities between output error and factor distance."""
    records = []
    failures = 0
    worst_lower = np.inf
    worst_upper = np.inf
    for depth in depths:
        for k in range(samples_per_depth):
            rng = as_rng((seed, depth, k))
            dims = _random_column_dims(rng, depth)
            shape = NetworkShape.create(dims)
            instance = make_teacher(shape, dims[0], rng)
            # ||W1|| <= ||W1*|| + magnitude keeps the energy precondition
            magnitude = float(rng.uniform(0.0, 0.4))
            student = init_student(
                shape, rng, scheme=INIT_NEAR_TEACHER, teacher=instance.teacher, magnitude=magnitude
            )
            rep = check_distance_bounds(student, instance)
            ok = rep.lower_ok and rep.upper_ok
            failures += 0 if ok else 1
            worst_lower = min(worst_lower, rep.lower_slack)
            worst_upper = min(worst_upper, rep.upper_slack)
            records.append(
                {
                    "seed": k,
                    "depth": depth,
                    "dims": list(dims),
                    "magnitude": magnitude,
                    "kappa_y": instance.kappa_y,
                    "dist_sq": rep.dist_sq,
                    "output_err_sq": rep.output_err_sq,
                    "lower_slack": rep.lower_slack,
                    "upper_slack": rep.upper_slack,
                    "lower_ok": rep.lower_ok,
                    "upper_ok": rep.upper_ok,
                    "ok": ok,
                }
            )
    total = samples_per_depth * len(depths)
    summary = {
        "suite": "distance-bounds",
        "samples": total,
        "passed": total - failures,
        "failed": failures,
        "all_ok": failures == 0,
        "worst_lower_slack": worst_lower,
        "worst_upper_slack": worst_upper,
    }
    return {"records": records, "summary": summary}


def regularity_suite(samples_per_depth: int, seed, depths=(2, 3)) -> dict:
    """Regularity inequality and the second-order residual cap on basin points."""
    from .experiments import calibrate_basin_init  # local import avoids a cycle

    model = scaled_mse()
    records = []
    failures = 0
    worst_margin = np.inf
    worst_h_slack = 0.0
    for depth in depths:
        for k in range(samples_per_depth):
            rng = as_rng((seed, depth, k))
            dims = _random_column_dims(rng, depth)
            shape = NetworkShape.create(dims)
            instance = make_teacher(shape, dims[0], rng, kappa=1.0 + float(rng.uniform(0, 1)))
            lo = float(rng.uniform(0.05, 0.5))
            student, dist_sq, _ = calibrate_basin_init(
                instance, model, int(rng.integers(0, 2**31)), lo_frac=lo, hi_frac=0.95
            )
            rep = check_regularity(student, instance, model)
            h_slack = (
                rep.residual_h_norm_sq / rep.residual_h_bound
                if rep.residual_h_bound > 0
                else 0.0
            )
            h_ok = rep.residual_h_norm_sq <= rep.residual_h_bound * (1.0 + 1e-9)
            ok = rep.satisfied and rep.in_region and h_ok
            failures += 0 if ok else 1
            margin = rep.lhs - rep.rhs
            worst_margin = min(worst_margin, margin)
            worst_h_slack = max(worst_h_slack, h_slack)
            records.append(
                {
                    "seed": k,
                    "depth": depth,
                    "dims": list(dims),
                    "dist_sq": rep.dist_sq,
                    "basin": basin_radius(instance, model),
                    "lhs": rep.lhs,
                    "rhs": rep.rhs,
                    "margin": margin,
                    "cross_term_t": rep.cross_term_t,
                    "h_norm_sq": rep.residual_h_norm_sq,
                    "h_bound": rep.residual_h_bound,
                    "h_slack": h_slack,
                    "satisfied": rep.satisfied,
                    "in_region": rep.in_region,
                    "h_ok": h_ok,
                    "ok": ok,
                }
            )
    total = samples_per_depth * len(depths)
    summary = {
        "suite": "regularity",
        "samples": total,
        "passed": total - failures,
        "failed": failures,
        "all_ok": failures == 0,
        "worst_margin": worst_margin,
        "worst_h_slack": worst_h_slack,
    }
    return {"records": records, "summary": summary}
