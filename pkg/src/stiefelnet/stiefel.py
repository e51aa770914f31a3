"""Stiefel manifold geometry: tangent projections, polar retraction, perturbation.

Points are orthonormal matrices. A point may be column-orthonormal
(``C.T @ C = I``, tall) or row-orthonormal (``C @ C.T = I``, wide); the row
case is handled by transposing into the column frame, so there is a single
code path for every formula. At a column point C the tangent space is
``{A : A.T C + C.T A = 0}`` and the projection of an ambient B onto it is

    P(B) = B - C (B.T C + C.T B) / 2

with normal complement ``B - P(B)``. Steps are mapped back to the manifold
by the polar retraction, the orthonormal factor of the polar decomposition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import ShapeError, as_matrix, as_rng, svd

ORTHONORMALITY_TOL = 1e-10

COLUMN = "column"
ROW = "row"


class RetractionSingularityError(RuntimeError):
    """Retraction input was rank deficient, so the step left its domain."""


def _check_orientation(orientation: str) -> str:
    if orientation not in (COLUMN, ROW):
        raise ValueError(f"orientation must be 'column' or 'row', got {orientation!r}")
    return orientation


def orthonormality_defect(mat: np.ndarray, orientation: str = COLUMN) -> float:
    """Frobenius norm of ``C.T C - I`` (or ``C C.T - I`` for row points)."""
    mat = as_matrix(mat)
    c = mat if orientation == COLUMN else mat.T
    gram = c.T @ c
    return float(np.linalg.norm(gram - np.eye(gram.shape[0])))


@dataclass(frozen=True)
class StiefelPoint:
    """An orthonormal matrix together with its orientation."""

    mat: np.ndarray
    orientation: str = COLUMN

    def __post_init__(self):
        mat = as_matrix(self.mat)
        object.__setattr__(self, "mat", mat)
        _check_orientation(self.orientation)
        rows, cols = mat.shape
        if self.orientation == COLUMN and rows < cols:
            raise ShapeError(f"column-orthonormal point needs rows >= cols, got {rows}x{cols}")
        if self.orientation == ROW and cols < rows:
            raise ShapeError(f"row-orthonormal point needs cols >= rows, got {rows}x{cols}")
        defect = orthonormality_defect(mat, self.orientation)
        if defect > ORTHONORMALITY_TOL:
            raise ValueError(
                f"matrix is not orthonormal in the {self.orientation} frame "
                f"(defect {defect:.3e} > {ORTHONORMALITY_TOL:.0e})"
            )

    @property
    def shape(self):
        return self.mat.shape

    def column_frame(self) -> np.ndarray:
        """The point as a tall column-orthonormal matrix."""
        return self.mat if self.orientation == COLUMN else self.mat.T

    def from_column_frame(self, c: np.ndarray) -> np.ndarray:
        """Map a column-frame matrix back to this point's ambient layout."""
        return c if self.orientation == COLUMN else c.T


@dataclass(frozen=True)
class TangentVector:
    """An ambient matrix lying in the tangent space at ``base``."""

    mat: np.ndarray
    base: StiefelPoint = field(repr=False)

    def norm(self) -> float:
        return float(np.linalg.norm(self.mat))


def _require_point_shape(c: StiefelPoint, b: np.ndarray) -> np.ndarray:
    b = as_matrix(b)
    if b.shape != c.mat.shape:
        raise ShapeError(f"ambient matrix shape {b.shape} != point shape {c.mat.shape}")
    return b


def project_tangent(c: StiefelPoint, b: np.ndarray) -> TangentVector:
    """Project an ambient matrix onto the tangent space at ``c``."""
    b = _require_point_shape(c, b)
    cc = c.column_frame()
    bb = b if c.orientation == COLUMN else b.T
    sym = bb.T @ cc + cc.T @ bb
    tangent = bb - 0.5 * (cc @ sym)
    return TangentVector(mat=c.from_column_frame(tangent), base=c)


def project_normal(c: StiefelPoint, b: np.ndarray) -> np.ndarray:
    """Complement of the tangent projection: ``b - project_tangent(c, b)``."""
    b = _require_point_shape(c, b)
    return b - project_tangent(c, b).mat


def polar_retract(c: StiefelPoint, candidate: np.ndarray) -> StiefelPoint:
    """Map a candidate matrix back onto the manifold via its polar factor.

    Computed as ``U @ Vt`` from the SVD of the candidate, which equals
    ``candidate @ (candidate.T candidate)^{-1/2}`` whenever the candidate has
    full column rank but stays stable near the boundary of that domain.

    Raises
    ------
    RetractionSingularityError
        If the candidate is rank deficient; stepping outside the retraction's
        domain usually means the step size is pathological.
    """
    candidate = _require_point_shape(c, candidate)
    work = candidate if c.orientation == COLUMN else candidate.T
    f = svd(work)
    smax = float(f.s[0])
    smin = float(f.s[-1])
    if smax == 0.0 or smin <= 1e-12 * smax:
        raise RetractionSingularityError(
            f"retraction candidate is rank deficient (sigma_min={smin:.3e}, sigma_max={smax:.3e})"
        )
    retracted = f.u @ f.vt
    return StiefelPoint(mat=c.from_column_frame(retracted), orientation=c.orientation)


def perturb_on_manifold(c: StiefelPoint, magnitude: float, seed) -> StiefelPoint:
    """Move ``c`` along a random unit-norm tangent direction and retract.

    The output stays within Frobenius distance ``2 * magnitude`` of ``c``
    (retraction of ``c + magnitude * delta`` with a unit tangent ``delta``).
    """
    if magnitude < 0:
        raise ValueError(f"magnitude must be nonnegative, got {magnitude}")
    if magnitude == 0.0:
        return c
    rng = as_rng(seed)
    ambient = rng.standard_normal(c.mat.shape)
    delta = project_tangent(c, ambient).mat
    nrm = float(np.linalg.norm(delta))
    if nrm == 0.0:
        # measure-zero event; direction does not matter at magnitude 0-ish
        return c
    candidate = c.mat + (magnitude / nrm) * delta
    return polar_retract(c, candidate)
