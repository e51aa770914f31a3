"""Dense matrix kernels: products, norms, factorizations, seeded sampling, whitening.

Everything downstream (manifold geometry, networks, alignment, training)
goes through this module. All arrays are dense float64; functions are pure
and deterministic for fixed inputs and seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericalError(RuntimeError):
    """A factorization failed to converge or produced non-finite values."""


class RankDeficiencyError(NumericalError):
    """An operation that requires full rank met a (numerically) singular matrix."""


def as_matrix(a) -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting empty or non-finite input."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if m.size == 0:
        raise ShapeError(f"expected a nonempty matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericalError("matrix contains NaN or Inf entries")
    return m


def as_rng(seed) -> np.random.Generator:
    """Accept either an integer seed or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check.

    Raises
    ------
    ShapeError
        If ``a.cols != b.rows``; the message names both shapes.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def chain_product(mats) -> np.ndarray:
    """Product ``mats[0] @ mats[1] @ ... @ mats[-1]`` with shape checks."""
    mats = list(mats)
    if not mats:
        raise ShapeError("chain_product needs at least one matrix")
    out = as_matrix(mats[0])
    for m in mats[1:]:
        out = matmul(out, m)
    return out


@dataclass(frozen=True)
class SvdResult:
    """Thin (economy) singular value decomposition ``a = u @ diag(s) @ vt``."""

    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.vt


def svd(a: np.ndarray) -> SvdResult:
    """Economy SVD with nonincreasing, nonnegative singular values.

    Raises
    ------
    NumericalError
        If the underlying factorization does not converge; the message
        carries basic condition diagnostics of the input.
    """
    a = as_matrix(a)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        fro = float(np.linalg.norm(a))
        amax = float(np.max(np.abs(a)))
        raise NumericalError(
            f"SVD failed to converge for {a.shape} matrix "
            f"(fro={fro:.3e}, max|entry|={amax:.3e}): {exc}"
        ) from exc
    return SvdResult(u=u, s=s, vt=vt)


def singular_values(a: np.ndarray) -> np.ndarray:
    return svd(a).s


def spectral_norm(a: np.ndarray) -> float:
    """Largest singular value."""
    return float(singular_values(a)[0])


def sigma_min(a: np.ndarray) -> float:
    """Smallest of the min(rows, cols) singular values."""
    return float(singular_values(a)[-1])


def condition_number(a: np.ndarray) -> float:
    """Ratio of the largest to the smallest singular value.

    Raises
    ------
    RankDeficiencyError
        If the smallest singular value underflows to numerical zero.
    """
    s = singular_values(a)
    smin = float(s[-1])
    smax = float(s[0])
    if smin <= smax * np.finfo(np.float64).eps * max(a.shape) or smin == 0.0:
        raise RankDeficiencyError(
            f"condition number undefined: sigma_min={smin:.3e} for shape {a.shape}"
        )
    return smax / smin


def random_orthonormal(rows: int, cols: int, seed) -> np.ndarray:
    """Sample a rows-by-cols matrix with orthonormal columns.

    Gaussian matrix followed by QR; the diagonal of R is sign-corrected so
    the distribution is uniform (Haar) rather than biased by the QR
    convention. Deterministic for a fixed seed.
    """
    if rows < cols:
        raise ShapeError(f"need rows >= cols for orthonormal columns, got {rows}x{cols}")
    rng = as_rng(seed)
    g = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def whitened_input(d_x: int, n: int, seed) -> np.ndarray:
    """Sample a d_x-by-n input matrix X with ``X @ X.T == I``.

    Rows are taken from a random n-by-n orthogonal matrix, so the empirical
    covariance of the columns is exactly the identity.
    """
    if n < d_x:
        raise ShapeError(f"cannot whiten: need n >= d_x, got d_x={d_x}, n={n}")
    q = random_orthonormal(n, n, seed)
    return q[:, :d_x].T.copy()


def zca_whiten(x_raw: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Symmetric (ZCA) whitening: left-multiply by ``(X X^T + eps I)^{-1/2}``.

    Brings the row covariance of real data close to the identity; eps
    regularizes rank-deficient covariances (common for image data).
    """
    x_raw = as_matrix(x_raw)
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    d_x, n = x_raw.shape
    if n < d_x:
        raise ShapeError(f"cannot whiten: need n >= d_x, got d_x={d_x}, n={n}")
    cov = x_raw @ x_raw.T + eps * np.eye(d_x)
    evals, evecs = np.linalg.eigh(cov)
    inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.T
    return inv_sqrt @ x_raw
