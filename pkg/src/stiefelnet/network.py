"""Deep linear (optionally ReLU) networks with orthonormality-constrained layers.

A network of depth N maps inputs through ``W_N ... W_2 W_1 x``. Layer 1 is a
free matrix; every deeper layer is orthonormal, column-wise when its width
grows and row-wise when it shrinks. Targets for synthetic experiments come
from a teacher of the same form evaluated on whitened inputs, so recovery of
the teacher factors is well posed up to rotations between layers.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .linalg import (
    ShapeError,
    as_matrix,
    as_rng,
    random_orthonormal,
    spectral_norm,
    svd,
    whitened_input,
)
from .stiefel import COLUMN, ROW, StiefelPoint, orthonormality_defect, perturb_on_manifold

LINEAR = "linear"
RELU = "relu"

INIT_ORTHOGONAL = "orthogonal"
INIT_UNIFORM_FAN_IN = "uniform-fan-in"
INIT_NEAR_TEACHER = "near-teacher"


class GenerationError(RuntimeError):
    """Teacher construction failed (e.g. free layer stayed rank deficient)."""


def infer_orientation(d_out: int, d_in: int) -> str:
    return COLUMN if d_out >= d_in else ROW


@dataclass(frozen=True)
class NetworkShape:
    """Dimension chain, per-layer orientations, and activation of a network.

    ``dims`` is ``(d_0, ..., d_N)``; ``orientations`` holds one flag per
    constrained layer (layers 2..N). Layer 1 carries no flag.
    """

    dims: tuple
    orientations: tuple
    activation: str = LINEAR

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "orientations", tuple(self.orientations))
        if len(dims) < 3:
            raise ShapeError(f"need depth >= 2 (at least 3 dims), got dims={dims}")
        if any(d <= 0 for d in dims):
            raise ShapeError(f"dims must be positive, got {dims}")
        if self.activation not in (LINEAR, RELU):
            raise ValueError(f"activation must be 'linear' or 'relu', got {self.activation!r}")
        if len(self.orientations) != self.depth - 1:
            raise ShapeError(
                f"need {self.depth - 1} orientation flags for layers 2..{self.depth}, "
                f"got {len(self.orientations)}"
            )
        for i, orient in enumerate(self.orientations, start=2):
            d_out, d_in = dims[i], dims[i - 1]
            if orient == COLUMN and d_out < d_in:
                raise ShapeError(f"layer {i}: column orientation needs {d_out} >= {d_in}")
            if orient == ROW and d_in < d_out:
                raise ShapeError(f"layer {i}: row orientation needs {d_in} >= {d_out}")
            if orient not in (COLUMN, ROW):
                raise ValueError(f"layer {i}: bad orientation {orient!r}")

    @classmethod
    def create(cls, dims, activation: str = LINEAR, orientations=None) -> "NetworkShape":
        """Build a shape, inferring orientations from the dimension chain."""
        dims = tuple(int(d) for d in dims)
        if orientations is None:
            orientations = tuple(
                infer_orientation(dims[i], dims[i - 1]) for i in range(2, len(dims))
            )
        return cls(dims=dims, orientations=tuple(orientations), activation=activation)

    @property
    def depth(self) -> int:
        return len(self.dims) - 1

    def layer_shape(self, i: int) -> tuple:
        """Ambient (rows, cols) of layer ``i`` in 1..N."""
        return (self.dims[i], self.dims[i - 1])

    def orientation(self, i: int) -> str:
        if i < 2 or i > self.depth:
            raise IndexError(f"constrained layers are 2..{self.depth}, got {i}")
        return self.orientations[i - 2]


@dataclass(frozen=True)
class Network:
    """Weights of one network: the free layer plus the constrained stack.

    ``constrained[k]`` is the raw matrix of layer ``k + 2``. Iterates of the
    unconstrained baseline optimizer reuse this container, so feasibility is
    asserted only where a caller needs it (see ``require_feasible``).
    """

    shape: NetworkShape
    w1: np.ndarray
    constrained: tuple

    def __post_init__(self):
        w1 = as_matrix(self.w1)
        object.__setattr__(self, "w1", w1)
        mats = tuple(as_matrix(m) for m in self.constrained)
        object.__setattr__(self, "constrained", mats)
        if w1.shape != self.shape.layer_shape(1):
            raise ShapeError(f"w1 shape {w1.shape} != expected {self.shape.layer_shape(1)}")
        if len(mats) != self.shape.depth - 1:
            raise ShapeError(f"expected {self.shape.depth - 1} constrained layers, got {len(mats)}")
        for i, m in enumerate(mats, start=2):
            if m.shape != self.shape.layer_shape(i):
                raise ShapeError(f"layer {i} shape {m.shape} != expected {self.shape.layer_shape(i)}")

    @property
    def depth(self) -> int:
        return self.shape.depth

    def layer(self, i: int) -> np.ndarray:
        """Weight matrix of layer ``i`` in 1..N."""
        if i == 1:
            return self.w1
        return self.constrained[i - 2]

    def layers(self) -> list:
        return [self.layer(i) for i in range(1, self.depth + 1)]

    def stiefel_point(self, i: int) -> StiefelPoint:
        """Layer ``i >= 2`` wrapped as a manifold point (validates feasibility)."""
        return StiefelPoint(mat=self.layer(i), orientation=self.shape.orientation(i))

    def orthonormality_defects(self) -> list:
        return [
            orthonormality_defect(self.layer(i), self.shape.orientation(i))
            for i in range(2, self.depth + 1)
        ]

    def require_feasible(self, tol: float = 1e-8) -> "Network":
        defects = self.orthonormality_defects()
        worst = max(defects) if defects else 0.0
        if worst > tol:
            raise ValueError(f"network is infeasible: worst orthonormality defect {worst:.3e}")
        return self


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Network output for a batch of column inputs."""
    x = as_matrix(x)
    if x.shape[0] != net.shape.dims[0]:
        raise ShapeError(f"input has {x.shape[0]} rows, network expects {net.shape.dims[0]}")
    a = x
    for i in range(1, net.depth + 1):
        z = net.layer(i) @ a
        if net.shape.activation == RELU and i < net.depth:
            a = np.maximum(z, 0.0)
        else:
            a = z
    return a


def layer_gradients(net: Network, x: np.ndarray, grad_loss_y: np.ndarray) -> list:
    """Euclidean gradient of the loss with respect to every layer.

    One backward pass: activations are cached going up, the adjoint is pulled
    back going down, so the cost is O(N) matrix products. ``grad_loss_y`` is
    the gradient of the loss at the network output.
    """
    x = as_matrix(x)
    grad_loss_y = as_matrix(grad_loss_y)
    relu = net.shape.activation == RELU
    acts = [x]
    pre = []
    a = x
    for i in range(1, net.depth + 1):
        z = net.layer(i) @ a
        pre.append(z)
        a = np.maximum(z, 0.0) if (relu and i < net.depth) else z
        acts.append(a)
    if grad_loss_y.shape != acts[-1].shape:
        raise ShapeError(
            f"output-gradient shape {grad_loss_y.shape} != network output shape {acts[-1].shape}"
        )
    grads = [None] * net.depth
    delta = grad_loss_y
    for i in range(net.depth, 0, -1):
        grads[i - 1] = delta @ acts[i - 1].T
        if i > 1:
            delta = net.layer(i).T @ delta
            if relu:
                delta = delta * (pre[i - 2] > 0.0)
    return grads


@dataclass(frozen=True)
class TeacherInstance:
    """A ground-truth network, its whitened inputs, and cached target stats.

    ``sigma_min_y`` is the smallest singular value of the targets at the
    network's bottleneck rank ``min(dims)``: the target matrix factors
    through that width, so deeper singular values are structural zeros and
    carry no information about conditioning.
    """

    teacher: Network
    x: np.ndarray
    y_star: np.ndarray
    sigma_min_y: float
    spec_norm_y: float
    kappa_y: float

    @property
    def shape(self) -> NetworkShape:
        return self.teacher.shape

    @property
    def depth(self) -> int:
        return self.teacher.depth

    @property
    def n_samples(self) -> int:
        return self.x.shape[1]


def _draw_free_layer(d1, d0, rng, spectral_norm_target, kappa):
    k = min(d1, d0)
    for _ in range(10):
        g = rng.standard_normal((d1, d0))
        f = svd(g)
        if kappa is not None:
            s = np.linspace(spectral_norm_target, spectral_norm_target / kappa, k)
            w1 = (f.u * s) @ f.vt
            return w1
        smax = float(f.s[0])
        smin = float(f.s[-1])
        if smax == 0.0 or smin <= 1e-10 * smax:
            continue
        return g * (spectral_norm_target / smax)
    raise GenerationError(f"free layer stayed rank deficient after 10 draws ({d1}x{d0})")


def make_teacher(
    shape: NetworkShape,
    n: int,
    seed,
    w1_spectral_norm: float = 1.0,
    kappa: float | None = None,
) -> TeacherInstance:
    """Sample a teacher network and its whitened input/target pair.

    Constrained layers are Haar orthonormal. The free layer is Gaussian
    rescaled to ``w1_spectral_norm``; passing ``kappa`` instead synthesizes
    its singular values on a linear grid between ``w1_spectral_norm`` and
    ``w1_spectral_norm / kappa``, which pins the conditioning of the targets
    for column-orthonormal chains.
    """
    if n < shape.dims[0]:
        raise ShapeError(f"need n >= d_0 for whitened input, got n={n}, d_0={shape.dims[0]}")
    if kappa is not None and kappa < 1.0:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    rng = as_rng(seed)
    w1 = _draw_free_layer(shape.dims[1], shape.dims[0], rng, w1_spectral_norm, kappa)
    constrained = []
    for i in range(2, shape.depth + 1):
        d_out, d_in = shape.layer_shape(i)
        if shape.orientation(i) == COLUMN:
            constrained.append(random_orthonormal(d_out, d_in, rng))
        else:
            constrained.append(random_orthonormal(d_in, d_out, rng).T.copy())
    x = whitened_input(shape.dims[0], n, rng)
    teacher = Network(shape=shape, w1=w1, constrained=tuple(constrained)).require_feasible(1e-10)
    y_star = forward(teacher, x)
    s = svd(y_star).s
    r = min(shape.dims)
    sigma_min_y = float(s[r - 1])
    spec = float(s[0])
    if sigma_min_y <= 0.0:
        raise GenerationError("targets are rank deficient at the bottleneck width")
    return TeacherInstance(
        teacher=teacher,
        x=x,
        y_star=y_star,
        sigma_min_y=sigma_min_y,
        spec_norm_y=spec,
        kappa_y=spec / sigma_min_y,
    )


def _orthogonal_layer(d_out, d_in, rng):
    if d_out >= d_in:
        return random_orthonormal(d_out, d_in, rng)
    return random_orthonormal(d_in, d_out, rng).T.copy()


def init_student(
    shape: NetworkShape,
    seed,
    scheme: str = INIT_ORTHOGONAL,
    teacher: Network | None = None,
    magnitude: float | None = None,
) -> Network:
    """Build a student network under one of the supported schemes.

    orthogonal
        Every layer orthogonal (transposed where the width shrinks).
    uniform-fan-in
        Free layer uniform on ``(-1/sqrt(d_0), 1/sqrt(d_0))``, constrained
        layers orthogonal.
    near-teacher
        Free layer displaced by ``magnitude`` along a unit-Frobenius Gaussian,
        constrained layers perturbed on the manifold by the same magnitude;
        needs ``teacher`` and ``magnitude``.
    """
    rng = as_rng(seed)
    d1, d0 = shape.layer_shape(1)
    if scheme == INIT_ORTHOGONAL:
        w1 = _orthogonal_layer(d1, d0, rng)
        constrained = [_orthogonal_layer(*shape.layer_shape(i), rng) for i in range(2, shape.depth + 1)]
    elif scheme == INIT_UNIFORM_FAN_IN:
        bound = 1.0 / np.sqrt(d0)
        w1 = rng.uniform(-bound, bound, size=(d1, d0))
        constrained = [_orthogonal_layer(*shape.layer_shape(i), rng) for i in range(2, shape.depth + 1)]
    elif scheme == INIT_NEAR_TEACHER:
        if teacher is None or magnitude is None:
            raise ValueError("near-teacher init needs teacher= and magnitude=")
        if magnitude < 0:
            raise ValueError(f"magnitude must be nonnegative, got {magnitude}")
        if teacher.shape != shape:
            raise ShapeError("teacher shape does not match requested student shape")
        g = rng.standard_normal((d1, d0))
        gn = float(np.linalg.norm(g))
        w1 = teacher.w1 + (magnitude / gn) * g if gn > 0 else teacher.w1.copy()
        constrained = [
            perturb_on_manifold(teacher.stiefel_point(i), magnitude, rng).mat
            for i in range(2, shape.depth + 1)
        ]
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return Network(shape=shape, w1=w1, constrained=tuple(constrained))


_MAGIC = b"SNET"
_VERSION = 1
_ACTIVATION_CODES = {LINEAR: 0, RELU: 1}
_ACTIVATION_NAMES = {v: k for k, v in _ACTIVATION_CODES.items()}
_ORIENT_CODES = {COLUMN: 0, ROW: 1}
_ORIENT_NAMES = {v: k for k, v in _ORIENT_CODES.items()}


def save_network(net: Network, path) -> None:
    """Write a network to a versioned binary container (exact round-trip)."""
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _VERSION))
    buf.write(struct.pack("<B", _ACTIVATION_CODES[net.shape.activation]))
    buf.write(struct.pack("<I", net.depth))
    buf.write(struct.pack(f"<{net.depth + 1}I", *net.shape.dims))
    buf.write(bytes(_ORIENT_CODES[o] for o in net.shape.orientations))
    for mat in net.layers():
        buf.write(np.ascontiguousarray(mat, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_network(path) -> Network:
    """Read a network written by ``save_network``."""
    with open(path, "rb") as fh:
        data = fh.read()
    view = memoryview(data)
    if bytes(view[:4]) != _MAGIC:
        raise ValueError(f"bad magic {bytes(view[:4])!r}, expected {_MAGIC!r}")
    (version,) = struct.unpack_from("<I", view, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported container version {version}")
    (act_code,) = struct.unpack_from("<B", view, 8)
    (depth,) = struct.unpack_from("<I", view, 9)
    off = 13
    dims = struct.unpack_from(f"<{depth + 1}I", view, off)
    off += 4 * (depth + 1)
    orients = tuple(_ORIENT_NAMES[b] for b in view[off : off + depth - 1])
    off += depth - 1
    shape = NetworkShape(dims=dims, orientations=orients, activation=_ACTIVATION_NAMES[act_code])
    mats = []
    for i in range(1, depth + 1):
        rows, cols = shape.layer_shape(i)
        count = rows * cols
        mat = np.frombuffer(view, dtype="<f8", count=count, offset=off).reshape(rows, cols)
        mats.append(mat.astype(np.float64, copy=True))
        off += 8 * count
    if off != len(data):
        raise ValueError(f"trailing bytes in container ({len(data) - off})")
    return Network(shape=shape, w1=mats[0], constrained=tuple(mats[1:]))
