"""Gradient descent with dual learning rates on the constrained network.

The constrained update projects each deep layer's gradient onto the tangent
space of its manifold point, steps with rate mu, and retracts back; the free
layer steps in the plain Euclidean sense with rate mu * gamma. Setting

    mu <= 2 beta / ((9N - 5) ||Y*||^2)      and      gamma = ||Y*||^2

yields, for basin starts under a loss with constants (alpha, beta), the
per-iteration contraction

    dist^2(t+1) <= (1 - alpha mu sigma_min^2(Y*) / (8 (2N - 1))) dist^2(t).

An unconstrained single-rate baseline ("gd") shares the trace machinery but
does not maintain feasibility.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .linalg import NumericalError
from .losses import LossModel, loss_grad, loss_value
from .metrics import align_and_distance
from .network import Network, forward, layer_gradients
from .stiefel import polar_retract, project_tangent

RGD = "rgd"
GD = "gd"


class DivergenceError(RuntimeError):
    """Training produced non-finite values; carries the partial trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class TrainingData:
    """Inputs and targets without a known teacher (no dist^2 in traces)."""

    x: np.ndarray
    y_star: np.ndarray

    @property
    def teacher(self):
        return None


@dataclass(frozen=True)
class OptimizerConfig:
    mu: float
    gamma: float
    max_iters: int
    stop_tol: float = 0.0
    algorithm: str = RGD
    re_retract_every: int = 100
    gd_use_gamma: bool = False
    theorem_mode: bool = False
    align_max_sweeps: int = 50
    align_tol: float = 1e-13

    def __post_init__(self):
        if self.mu <= 0 or self.gamma <= 0:
            raise ValueError(f"learning rates must be positive (mu={self.mu}, gamma={self.gamma})")
        if self.algorithm not in (RGD, GD):
            raise ValueError(f"algorithm must be 'rgd' or 'gd', got {self.algorithm!r}")
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be nonnegative, got {self.max_iters}")

    @classmethod
    def for_theorem(cls, instance, model: LossModel, max_iters: int, stop_tol: float = 0.0,
                    mu: float | None = None, **kwargs) -> "OptimizerConfig":
        """Rates with the contraction guarantee: mu at (or below) its cap,
        gamma locked to the squared spectral norm of the targets."""
        if not model.constants_known:
            raise ValueError("theorem-mode rates need populated loss constants")
        cap = theorem_mu_cap(instance, model)
        if mu is None:
            mu = cap
        elif mu > cap * (1.0 + 1e-12):
            raise ValueError(f"mu={mu:.6e} exceeds the guaranteed cap {cap:.6e}")
        return cls(
            mu=mu,
            gamma=instance.spec_norm_y**2,
            max_iters=max_iters,
            stop_tol=stop_tol,
            algorithm=RGD,
            theorem_mode=True,
            **kwargs,
        )


def theorem_mu_cap(instance, model: LossModel) -> float:
    """Largest step size covered by the contraction guarantee."""
    n = instance.depth
    return 2.0 * model.beta / ((9 * n - 5) * instance.spec_norm_y**2)


def contraction_factor(instance, model: LossModel, cfg: OptimizerConfig) -> float:
    """Guaranteed per-iteration dist^2 multiplier for basin starts."""
    if not model.constants_known:
        raise ValueError("contraction factor needs populated loss constants")
    n = instance.depth
    return 1.0 - model.alpha * cfg.mu * instance.sigma_min_y**2 / (8 * (2 * n - 1))


def _check_finite_grads(grads):
    for i, g in enumerate(grads, start=1):
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient at layer {i}")


def _apply_rgd(net: Network, grads, cfg: OptimizerConfig) -> Network:
    w1 = net.w1 - cfg.mu * cfg.gamma * grads[0]
    constrained = []
    for i in range(2, net.depth + 1):
        point = net.stiefel_point(i)
        riem = project_tangent(point, grads[i - 1]).mat
        constrained.append(polar_retract(point, point.mat - cfg.mu * riem).mat)
    return Network(shape=net.shape, w1=w1, constrained=tuple(constrained))


def _apply_gd(net: Network, grads, cfg: OptimizerConfig) -> Network:
    rate1 = cfg.mu * cfg.gamma if cfg.gd_use_gamma else cfg.mu
    w1 = net.w1 - rate1 * grads[0]
    constrained = tuple(
        net.layer(i) - cfg.mu * grads[i - 1] for i in range(2, net.depth + 1)
    )
    return Network(shape=net.shape, w1=w1, constrained=constrained)


def _re_retract(net: Network) -> Network:
    constrained = tuple(
        polar_retract(net.stiefel_point(i), net.layer(i)).mat for i in range(2, net.depth + 1)
    )
    return Network(shape=net.shape, w1=net.w1, constrained=constrained)


def rgd_step(net: Network, instance, model: LossModel, cfg: OptimizerConfig) -> Network:
    """One constrained update (tangent step + retraction, dual rates)."""
    g = loss_grad(model, forward(net, instance.x), instance.y_star)
    grads = layer_gradients(net, instance.x, g)
    _check_finite_grads(grads)
    return _apply_rgd(net, grads, cfg)


def gd_step(net: Network, instance, model: LossModel, cfg: OptimizerConfig) -> Network:
    """One plain Euclidean update on every layer; feasibility not maintained."""
    g = loss_grad(model, forward(net, instance.x), instance.y_star)
    grads = layer_gradients(net, instance.x, g)
    _check_finite_grads(grads)
    return _apply_gd(net, grads, cfg)


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    loss: float
    dist_sq: float | None
    output_err_sq: float
    grad_norms: tuple
    contraction_ratio: float
    wall_ms: float

    @property
    def grad_norm_total(self) -> float:
        return float(np.sqrt(sum(g * g for g in self.grad_norms)))


@dataclass
class RunTrace:
    """Per-iteration records plus run-level summary fields."""

    records: list = field(default_factory=list)
    theorem_factor: float | None = None
    contraction_violations: int | None = None
    stop_reason: str = "max-iters"
    final_net: Network | None = None

    @property
    def iterations(self) -> int:
        return self.records[-1].iter if self.records else 0

    def dist_history(self):
        return [r.dist_sq for r in self.records]

    def loss_history(self):
        return [r.loss for r in self.records]


def run(net0: Network, instance, model: LossModel, cfg: OptimizerConfig) -> RunTrace:
    """Iterate the configured update, recording one trace row per iterate.

    Record t describes the state after t steps; ``contraction_ratio`` is
    dist^2(t) / dist^2(t-1) (1.0 at t=0 so every field stays finite). When
    the teacher is known the alignment is warm-started from the previous
    rotations, which keeps the measured distance monotone-compatible with
    the step analysis. Stops when dist^2 (or the loss, without a teacher)
    falls to ``stop_tol``.
    """
    teacher = getattr(instance, "teacher", None)
    x, y_star = instance.x, instance.y_star
    factor = None
    if cfg.theorem_mode and teacher is not None:
        factor = contraction_factor(instance, model, cfg)

    trace = RunTrace(theorem_factor=factor)
    net = net0
    rotations = None
    prev_dist = None
    dist0 = None
    violations = 0
    t_start = time.perf_counter()
    step_fn = _apply_rgd if cfg.algorithm == RGD else _apply_gd

    for t in range(cfg.max_iters + 1):
        # overflow on a divergent grid point is expected and detected below
        with np.errstate(over="ignore", invalid="ignore"):
            y = forward(net, x)
            if not np.all(np.isfinite(y)):
                trace.stop_reason = "diverged"
                raise DivergenceError(f"non-finite network output at iteration {t}", trace=trace)
            loss = loss_value(model, y, y_star)
            if not np.isfinite(loss):
                trace.stop_reason = "diverged"
                raise DivergenceError(f"non-finite loss at iteration {t}", trace=trace)
            g_out = loss_grad(model, y, y_star)
            grads = layer_gradients(net, x, g_out)
        _check_finite_grads(grads)

        diff = y - y_star
        err_sq = float(np.vdot(diff, diff))
        dist_sq = None
        ratio = 1.0
        if teacher is not None:
            align = align_and_distance(
                net,
                teacher,
                instance.spec_norm_y,
                max_sweeps=cfg.align_max_sweeps,
                tol=cfg.align_tol,
                init_rotations=rotations,
            )
            rotations = align.rotations
            dist_sq = align.dist_sq
            if dist0 is None:
                dist0 = dist_sq
            if prev_dist is not None:
                ratio = dist_sq / prev_dist if prev_dist > 0 else 1.0
                if factor is not None and dist_sq > factor * prev_dist + 1e-12 * dist0:
                    violations += 1
            prev_dist = dist_sq

        wall_ms = (time.perf_counter() - t_start) * 1e3
        trace.records.append(
            TraceRecord(
                iter=t,
                loss=loss,
                dist_sq=dist_sq,
                output_err_sq=err_sq,
                grad_norms=tuple(float(np.linalg.norm(g)) for g in grads),
                contraction_ratio=ratio,
                wall_ms=wall_ms,
            )
        )

        stop_value = dist_sq if teacher is not None else loss
        if cfg.stop_tol > 0 and stop_value <= cfg.stop_tol:
            trace.stop_reason = "stop-tol"
            break
        if t == cfg.max_iters:
            break
        try:
            net = step_fn(net, grads, cfg)
        except NumericalError as exc:
            trace.stop_reason = "diverged"
            raise DivergenceError(f"non-finite iterate at iteration {t + 1}", trace=trace) from exc
        if (
            cfg.algorithm == RGD
            and cfg.re_retract_every > 0
            and (t + 1) % cfg.re_retract_every == 0
        ):
            net = _re_retract(net)

    trace.contraction_violations = violations if factor is not None else None
    trace.final_net = net
    return trace


def fit_log_linear(values) -> tuple:
    """Least-squares slope and R^2 of log(values) against the iteration index.

    Ignores nonpositive entries (they carry no decay information). Returns
    (per_step_ratio, r_squared); the ratio is exp(slope).
    """
    vals = np.asarray([v for v in values if v is not None and v > 0], dtype=np.float64)
    if vals.size < 2:
        raise ValueError("need at least two positive values for a decay fit")
    t = np.arange(vals.size, dtype=np.float64)
    logs = np.log(vals)
    slope, intercept = np.polyfit(t, logs, 1)
    pred = slope * t + intercept
    ss_res = float(np.sum((logs - pred) ** 2))
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(np.exp(slope)), r2


def replace_config(cfg: OptimizerConfig, **kwargs) -> OptimizerConfig:
    return replace(cfg, **kwargs)
