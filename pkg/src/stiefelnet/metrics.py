"""Rotation-invariant distance between factor stacks, and regularity checks.

Two networks with the same product can differ by an orthogonal rotation
between each pair of layers, so raw per-layer differences are meaningless.
The distance used throughout is

    dist^2(W, W*) = min_{R_1..R_{N-1}}  sum_{i>=2} ||Y*||^2 ||W_i - R_i^T W_i* R_{i-1}||_F^2
                                        + ||W_1 - R_1^T W_1*||_F^2

with R_0 = R_N = I and the spectral norm of the targets weighting the
constrained layers to balance their unit energy against the free layer.
The minimization is block-coordinate: with all other rotations held fixed,
each R_k solves an orthogonal Procrustes problem in closed form, so sweeps
decrease the objective monotonically. Rotations range over the full
orthogonal group, reflections included.

The same rotations feed the diagnostic checks: the sandwich between output
error and dist^2, and the Riemannian regularity inequality that drives the
contraction guarantee of the constrained optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import ShapeError, as_matrix, svd
from .losses import LossModel, loss_grad
from .network import LINEAR, Network, TeacherInstance, forward, layer_gradients
from .stiefel import project_tangent


class PreconditionError(ValueError):
    """An input violates a hypothesis the checked inequality relies on."""


@dataclass(frozen=True)
class AlignmentResult:
    """Outcome of the alternating-Procrustes alignment.

    ``dist_sq`` is the objective at ``rotations``; it upper-bounds the true
    minimum and matches it whenever the alternation reaches a global
    minimizer (exact on gauge orbits). ``objective_trace`` holds the value
    after the initialization and after each sweep.
    """

    rotations: tuple
    dist_sq: float
    per_layer_residuals: tuple
    converged: bool
    sweeps_used: int
    objective_trace: tuple


def _polar_factor(g: np.ndarray) -> np.ndarray:
    f = svd(g)
    return f.u @ f.vt


def _objective(w_layers, t_layers, rotations, weight):
    """Objective value and per-layer weighted residuals at fixed rotations."""
    n_layers = len(w_layers)
    residuals = []
    total = 0.0
    for i in range(1, n_layers + 1):
        r_left = rotations[i - 2] if i >= 2 else None  # R_{i-1}; None means identity
        r_right = rotations[i - 1] if i <= n_layers - 1 else None  # R_i
        target = t_layers[i - 1]
        if r_right is not None:
            target = r_right.T @ target
        if r_left is not None:
            target = target @ r_left
        diff = w_layers[i - 1] - target
        c = weight if i >= 2 else 1.0
        term = c * float(np.vdot(diff, diff))
        residuals.append(term)
        total += term
    return total, residuals


def align_and_distance(
    w: Network,
    w_star: Network,
    spec_norm_y: float,
    max_sweeps: int = 200,
    tol: float = 1e-12,
    init_rotations=None,
) -> AlignmentResult:
    """Minimize the factor distance over inter-layer rotations.

    Without ``init_rotations`` the rotations are seeded top-down: R_{N-1}
    aligns the last layer pair, then each R_k aligns layer k+1 given
    R_{k+1}. This already recovers exact gauge transforms; the alternating
    sweeps then polish arbitrary inputs. Pass ``init_rotations`` (e.g. from
    the previous optimizer iterate) to warm-start instead.
    """
    if w.shape.dims != w_star.shape.dims:
        raise ShapeError(f"dimension chains differ: {w.shape.dims} vs {w_star.shape.dims}")
    n_layers = w.depth
    w_layers = w.layers()
    t_layers = w_star.layers()
    weight = float(spec_norm_y) ** 2

    if init_rotations is not None:
        rotations = [as_matrix(r).copy() for r in init_rotations]
        if len(rotations) != n_layers - 1:
            raise ShapeError(f"need {n_layers - 1} rotations, got {len(rotations)}")
    else:
        rotations = [None] * (n_layers - 1)
        r_next = None  # R_N = I
        for k in range(n_layers - 1, 0, -1):
            wk = w_layers[k]  # layer k+1
            tk = t_layers[k]
            g = tk.T @ wk if r_next is None else tk.T @ (r_next @ wk)
            rotations[k - 1] = _polar_factor(g)
            r_next = rotations[k - 1]

    obj, residuals = _objective(w_layers, t_layers, rotations, weight)
    if not np.isfinite(obj):
        raise ValueError("alignment objective is not finite")
    trace = [obj]
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        for k in range(1, n_layers):
            # R_k appears in two residuals; the Procrustes maximizer of
            # <R_k, G> with G = c_k W_k* R_{k-1} W_k^T + c_{k+1} W_{k+1}*^T R_{k+1} W_{k+1}
            # is the polar factor of G.
            c_k = weight if k >= 2 else 1.0
            r_prev = rotations[k - 2] if k >= 2 else None
            tk = t_layers[k - 1]
            left = tk @ r_prev if r_prev is not None else tk
            g = c_k * (left @ w_layers[k - 1].T)
            r_next = rotations[k] if k <= n_layers - 2 else None
            t_up = t_layers[k]
            up = t_up.T @ w_layers[k] if r_next is None else t_up.T @ (r_next @ w_layers[k])
            g = g + weight * up
            rotations[k - 1] = _polar_factor(g)
        prev = obj
        obj, residuals = _objective(w_layers, t_layers, rotations, weight)
        trace.append(obj)
        if prev - obj <= tol * max(prev, 1e-30):
            converged = True
            break
    return AlignmentResult(
        rotations=tuple(rotations),
        dist_sq=obj,
        per_layer_residuals=tuple(residuals),
        converged=converged,
        sweeps_used=sweeps,
        objective_trace=tuple(trace),
    )


def gauge_transform(net: Network, rotations) -> Network:
    """Apply inter-layer rotations: W_i -> R_i^T W_i R_{i-1} (product unchanged)."""
    rotations = [as_matrix(r) for r in rotations]
    if len(rotations) != net.depth - 1:
        raise ShapeError(f"need {net.depth - 1} rotations, got {len(rotations)}")
    new_layers = []
    for i in range(1, net.depth + 1):
        m = net.layer(i)
        if i <= net.depth - 1:
            m = rotations[i - 1].T @ m
        if i >= 2:
            m = m @ rotations[i - 2]
        new_layers.append(m)
    return Network(shape=net.shape, w1=new_layers[0], constrained=tuple(new_layers[1:]))


def aligned_differences(w: Network, w_star: Network, rotations) -> list:
    """Per-layer differences ``W_i - R_i^T W_i* R_{i-1}`` at given rotations."""
    aligned = gauge_transform(w_star, rotations)
    return [w.layer(i) - aligned.layer(i) for i in range(1, w.depth + 1)]


@dataclass(frozen=True)
class DistanceBoundsReport:
    """Sandwich between squared output error and the factor distance."""

    lower_ok: bool
    upper_ok: bool
    lower_slack: float
    upper_slack: float
    output_err_sq: float
    dist_sq: float
    alignment: AlignmentResult


def check_distance_bounds(
    w: Network,
    instance: TeacherInstance,
    max_sweeps: int = 200,
    tol: float = 1e-12,
    rel_tol: float = 1e-9,
) -> DistanceBoundsReport:
    """Verify the two-sided bound tying output error to factor distance.

    For feasible constrained layers and ``||W_1||^2 <= (9/4) ||Y*||^2``,

        dist^2 / ((16N - 8) kappa^2(Y*))  <=  ||Y - Y*||_F^2  <=  (9N/4) dist^2.

    Slack factors report how loose each side is (>= 1 when it holds).

    Raises
    ------
    PreconditionError
        If the free-layer energy cap is violated.
    """
    n = w.depth
    w1_norm_sq = float(svd(w.w1).s[0]) ** 2
    cap = 2.25 * instance.spec_norm_y**2
    if w1_norm_sq > cap * (1.0 + 1e-12):
        raise PreconditionError(
            f"free-layer energy {w1_norm_sq:.6e} exceeds (9/4)||Y*||^2 = {cap:.6e}"
        )
    y = forward(w, instance.x)
    diff = y - instance.y_star
    err_sq = float(np.vdot(diff, diff))
    align = align_and_distance(w, instance.teacher, instance.spec_norm_y, max_sweeps, tol)
    dist_sq = align.dist_sq
    lower_bound = dist_sq / ((16 * n - 8) * instance.kappa_y**2)
    upper_bound = (9 * n / 4) * dist_sq
    lower_ok = err_sq >= lower_bound - rel_tol * max(lower_bound, err_sq)
    upper_ok = err_sq <= upper_bound + rel_tol * max(upper_bound, err_sq)
    lower_slack = err_sq / lower_bound if lower_bound > 0 else float("inf")
    upper_slack = upper_bound / err_sq if err_sq > 0 else float("inf")
    return DistanceBoundsReport(
        lower_ok=lower_ok,
        upper_ok=upper_ok,
        lower_slack=lower_slack,
        upper_slack=upper_slack,
        output_err_sq=err_sq,
        dist_sq=dist_sq,
        alignment=align,
    )


def basin_radius(instance: TeacherInstance, model: LossModel) -> float:
    """Largest dist^2 for which the contraction guarantee applies.

        alpha * beta * sigma_min^2(Y*) / (9 (2N - 1) (N^2 - 1))
    """
    if not model.constants_known:
        raise ValueError("loss constants must be populated to size the basin")
    n = instance.depth
    return (
        model.alpha * model.beta * instance.sigma_min_y**2 / (9 * (2 * n - 1) * (n * n - 1))
    )


@dataclass(frozen=True)
class RegularityReport:
    """One evaluation of the Riemannian regularity inequality.

    ``lhs`` is the aligned descent inner product; ``rhs`` the certified lower
    bound built from dist^2 and the gradient energy. ``cross_term_t`` is the
    inner product of the normal components of the aligned differences with
    the raw gradients; ``residual_h_norm_sq`` the squared norm of the
    second-order output residual H, which must stay below dist^4 times
    ``9 N (N - 1) / (8 ||Y*||^2)`` for the bound to be self-consistent.
    """

    lhs: float
    rhs: float
    dist_sq: float
    grad_energy: float
    cross_term_t: float
    residual_h_norm_sq: float
    residual_h_bound: float
    satisfied: bool
    in_region: bool
    alignment: AlignmentResult


def check_regularity(
    w: Network,
    instance: TeacherInstance,
    model: LossModel,
    max_sweeps: int = 200,
    tol: float = 1e-12,
) -> RegularityReport:
    """Evaluate the regularity inequality at the alignment's rotations.

    The inequality (for populated constants alpha, beta) is

        sum_{i>=2} <D_i, P_T(grad_i)> + <D_1, grad_1>
            >= alpha / (16 (2N-1) kappa^2) * dist^2
             + beta / ((9N-5) ||Y*||^2) * (sum_{i>=2} ||P_T(grad_i)||^2
                                            + ||Y*||^2 ||grad_1||^2)

    where D_i are the aligned layer differences. Points outside the basin
    are still evaluated; ``in_region`` reports membership.
    """
    if not model.constants_known:
        raise ValueError("loss constants must be populated for the regularity check")
    if w.shape.activation != LINEAR:
        raise ValueError("regularity diagnostics are defined for linear activation only")
    n = w.depth
    spec_sq = instance.spec_norm_y**2
    y = forward(w, instance.x)
    g_out = loss_grad(model, y, instance.y_star)
    grads = layer_gradients(w, instance.x, g_out)
    align = align_and_distance(w, instance.teacher, instance.spec_norm_y, max_sweeps, tol)
    diffs = aligned_differences(w, instance.teacher, align.rotations)

    lhs = float(np.vdot(diffs[0], grads[0]))
    grad_energy = spec_sq * float(np.vdot(grads[0], grads[0]))
    cross_t = 0.0
    for i in range(2, n + 1):
        point = w.stiefel_point(i)
        tangent = project_tangent(point, grads[i - 1]).mat
        lhs += float(np.vdot(diffs[i - 1], tangent))
        grad_energy += float(np.vdot(tangent, tangent))
        cross_t += float(np.vdot(diffs[i - 1] - project_tangent(point, diffs[i - 1]).mat, grads[i - 1]))

    dist_sq = align.dist_sq
    rhs = model.alpha / (16 * (2 * n - 1) * instance.kappa_y**2) * dist_sq
    rhs += model.beta / ((9 * n - 5) * spec_sq) * grad_energy

    h = residual_h(w, instance, align.rotations)
    h_norm_sq = float(np.vdot(h, h))
    h_bound = 9 * n * (n - 1) / (8 * spec_sq) * dist_sq**2

    satisfied = lhs >= rhs - 1e-9 * max(1.0, abs(rhs))
    in_region = dist_sq <= basin_radius(instance, model)
    return RegularityReport(
        lhs=lhs,
        rhs=rhs,
        dist_sq=dist_sq,
        grad_energy=grad_energy,
        cross_term_t=cross_t,
        residual_h_norm_sq=h_norm_sq,
        residual_h_bound=h_bound,
        satisfied=satisfied,
        in_region=in_region,
        alignment=align,
    )


def residual_h(w: Network, instance: TeacherInstance, rotations) -> np.ndarray:
    """Second-order output residual at given rotations.

    With D_i the aligned differences, the first-order expansion of the
    output mismatch reads

        sum_i W_N..W_{i+1} D_i W_{i-1}..W_1 X  =  (Y - Y*) + H,

    so H collects everything beyond first order; its norm scales like
    dist^2 near the teacher.
    """
    diffs = aligned_differences(w, instance.teacher, rotations)
    n = w.depth
    x = instance.x
    prefixes = [x]  # prefixes[i-1] = W_{i-1} .. W_1 X
    for i in range(1, n):
        prefixes.append(w.layer(i) @ prefixes[-1])
    # Horner accumulation of sum_i W_N..W_{i+1} D_i P_i in O(N) products
    z = diffs[0] @ prefixes[0]
    for i in range(2, n + 1):
        z = w.layer(i) @ z + diffs[i - 1] @ prefixes[i - 1]
    y = forward(w, x)
    return z - (y - instance.y_star)
