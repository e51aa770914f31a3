"""Loss functions with correlated-gradient constants, plus empirical probing.

A loss L(Y; Y*) satisfies the restricted correlated gradient (RCG) condition
with constants (alpha, beta) on a region when for all Y1, Y2 there

    <dL(Y1) - dL(Y2), Y1 - Y2>
        >= alpha ||Y1 - Y2||_F^2 + beta ||dL(Y1) - dL(Y2)||_F^2.

The halved squared error satisfies this with equality at alpha = beta = 1/2
everywhere. Cross entropy has no closed-form constants here; they are probed
empirically on a sampled region and labeled as such downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import ShapeError, as_matrix, as_rng

SCALED_MSE = "scaled-mse"
SOFTMAX_CE = "softmax-ce"


class ProbeError(RuntimeError):
    """The RCG probe sampled only degenerate pairs."""


@dataclass(frozen=True)
class LossModel:
    """A loss kind together with its (possibly unknown) RCG constants."""

    kind: str
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.kind not in (SCALED_MSE, SOFTMAX_CE):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == SCALED_MSE and (self.alpha is None or self.beta is None):
            raise ValueError("scaled-mse constants must be populated")
        for name, v in (("alpha", self.alpha), ("beta", self.beta)):
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive when populated, got {v}")
        if self.alpha is not None and self.beta is not None and self.alpha * self.beta > 0.25 + 1e-12:
            raise ValueError(
                f"alpha*beta = {self.alpha * self.beta:.6f} exceeds the admissible bound 1/4"
            )

    @property
    def constants_known(self) -> bool:
        return self.alpha is not None and self.beta is not None

    def with_constants(self, alpha: float, beta: float) -> "LossModel":
        return LossModel(kind=self.kind, alpha=alpha, beta=beta)


def scaled_mse() -> LossModel:
    """Halved squared Frobenius error; RCG holds with equality at (1/2, 1/2)."""
    return LossModel(kind=SCALED_MSE, alpha=0.5, beta=0.5)


def softmax_ce() -> LossModel:
    """Mean column-wise cross entropy after softmax; constants are empirical."""
    return LossModel(kind=SOFTMAX_CE)


def _check_pair(y, y_star):
    y = as_matrix(y)
    y_star = as_matrix(y_star)
    if y.shape != y_star.shape:
        raise ShapeError(f"prediction shape {y.shape} != target shape {y_star.shape}")
    return y, y_star


def _check_one_hot(y_star):
    is01 = np.all((y_star == 0.0) | (y_star == 1.0))
    if not is01 or not np.all(y_star.sum(axis=0) == 1.0):
        raise ValueError("cross entropy needs one-hot target columns")


def _log_softmax(y):
    shifted = y - y.max(axis=0, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))


def _softmax(y):
    e = np.exp(y - y.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def loss_value(model: LossModel, y: np.ndarray, y_star: np.ndarray) -> float:
    y, y_star = _check_pair(y, y_star)
    if model.kind == SCALED_MSE:
        d = y - y_star
        return 0.5 * float(np.vdot(d, d))
    _check_one_hot(y_star)
    return float(-np.sum(y_star * _log_softmax(y)) / y.shape[1])


def loss_grad(model: LossModel, y: np.ndarray, y_star: np.ndarray) -> np.ndarray:
    y, y_star = _check_pair(y, y_star)
    if model.kind == SCALED_MSE:
        return y - y_star
    _check_one_hot(y_star)
    return (_softmax(y) - y_star) / y.shape[1]


def probe_rcg(
    model: LossModel,
    y_star: np.ndarray,
    region_radius: float,
    samples: int,
    seed,
    center: np.ndarray | None = None,
) -> tuple:
    """Estimate RCG constants on the ray alpha = beta by sampling pairs.

    Pairs (Y1, Y2) are drawn inside the Frobenius ball of ``region_radius``
    around ``center`` (the targets by default; pass separated logits for the
    cross-entropy case). The returned common value is the largest c such
    that the RCG inequality with alpha = beta = c holds on every sampled
    pair, so the constants are certified on the sample set. The value is
    capped at 1/2 to keep alpha * beta <= 1/4.
    """
    y_star = as_matrix(y_star)
    center = y_star if center is None else as_matrix(center)
    if center.shape != y_star.shape:
        raise ShapeError(f"center shape {center.shape} != target shape {y_star.shape}")
    if region_radius <= 0:
        raise ValueError(f"region_radius must be positive, got {region_radius}")
    if samples < 2:
        raise ValueError(f"need samples >= 2, got {samples}")
    rng = as_rng(seed)

    def draw():
        g = rng.standard_normal(center.shape)
        nrm = float(np.linalg.norm(g))
        radius = region_radius * rng.uniform(0.0, 1.0)
        return center + (radius / nrm) * g if nrm > 0 else center.copy()

    best = np.inf
    usable = 0
    for _ in range(samples):
        y1, y2 = draw(), draw()
        dy = y1 - y2
        dg = loss_grad(model, y1, y_star) - loss_grad(model, y2, y_star)
        denom = float(np.vdot(dy, dy)) + float(np.vdot(dg, dg))
        if denom == 0.0:
            continue
        usable += 1
        best = min(best, float(np.vdot(dg, dy)) / denom)
    if usable == 0:
        raise ProbeError("all sampled pairs were degenerate (Y1 == Y2)")
    c = min(best, 0.5)
    if c <= 0:
        raise ProbeError(f"probed constants are nonpositive (c = {c:.3e})")
    return c, c
