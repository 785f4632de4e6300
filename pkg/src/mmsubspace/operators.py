"""Matrix-free linear operators acting on flattened row-major images.

Every operator exposes ``apply`` (``A @ v``) and ``adjoint_apply``
(``A.T @ w``) on 1-D float arrays. Images of size ``height x width`` are
stored row-major, pixel ``(row, col)`` at index ``row * width + col``.

Difference stencils and the uniform blur use replicate (Neumann) boundaries,
so constant images lie in the kernel of every first-order difference.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

from .errors import ConfigurationError, DimensionError

__all__ = [
    "ImageGrid",
    "LinearOperator",
    "Identity",
    "Dense",
    "Difference",
    "UniformBlur",
    "Radon",
    "Stack",
    "Scaled",
    "RowBlock",
    "make_operator",
    "stack",
]


@dataclass(frozen=True)
class ImageGrid:
    """A gray-level image stored as a flat row-major vector."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ConfigurationError(f"invalid image size {self.width}x{self.height}")
        pixels = np.asarray(self.pixels, dtype=float).ravel()
        if pixels.size != self.width * self.height:
            raise DimensionError("image pixels", self.width * self.height, pixels.size)
        if not np.all(np.isfinite(pixels)):
            raise ConfigurationError("image contains non-finite values")
        object.__setattr__(self, "pixels", pixels)

    @classmethod
    def from_array(cls, array) -> "ImageGrid":
        array = np.atleast_2d(np.asarray(array, dtype=float))
        height, width = array.shape
        return cls(width, height, array.ravel())

    @property
    def size(self) -> int:
        return self.width * self.height

    @property
    def array(self) -> np.ndarray:
        """A ``(height, width)`` view of the pixels."""
        return self.pixels.reshape(self.height, self.width)


class LinearOperator:
    """Base class of all matrix-free operators.

    Subclasses implement ``_apply`` and ``_adjoint``; size checks live
    here. Instances are immutable once built.
    """

    kind = "abstract"

    def __init__(self, in_dim: int, out_dim: int):
        if in_dim <= 0 or out_dim <= 0:
            raise ConfigurationError(
                f"operator dimensions must be positive, got {out_dim}x{in_dim}"
            )
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)

    @property
    def shape(self):
        return (self.out_dim, self.in_dim)

    def apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.in_dim,):
            raise DimensionError(f"{self.kind} apply", self.in_dim, v.size)
        return self._apply(v)

    def adjoint_apply(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.out_dim,):
            raise DimensionError(f"{self.kind} adjoint", self.out_dim, w.size)
        return self._adjoint(w)

    def apply_columns(self, D) -> np.ndarray:
        """Apply the operator to every column of an ``in_dim x M`` matrix."""
        D = np.asarray(D, dtype=float)
        if D.ndim != 2 or D.shape[0] != self.in_dim:
            raise DimensionError(f"{self.kind} apply_columns", self.in_dim, D.shape[0])
        return self._apply_cols(D)

    def __matmul__(self, v):
        return self.apply(v)

    def to_dense(self) -> np.ndarray:
        """Materialize the matrix column by column (small sizes only)."""
        mat = np.empty((self.out_dim, self.in_dim))
        e = np.zeros(self.in_dim)
        for j in range(self.in_dim):
            e[j] = 1.0
            mat[:, j] = self._apply(e)
            e[j] = 0.0
        return mat

    def norm_estimate(self, iters: int = 50, seed: int = 0) -> float:
        """Spectral norm estimate by power iteration on ``A.T A``."""
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(self.in_dim)
        v /= np.linalg.norm(v)
        s = 0.0
        for _ in range(iters):
            w = self._adjoint(self._apply(v))
            s = np.linalg.norm(w)
            if s == 0.0:
                return 0.0
            v = w / s
        return float(np.sqrt(s))

    def _apply(self, v):
        raise NotImplementedError

    def _adjoint(self, w):
        raise NotImplementedError

    def _apply_cols(self, D):
        return np.column_stack([self._apply(D[:, j]) for j in range(D.shape[1])])

    def __repr__(self):
        return f"<{type(self).__name__} {self.kind} {self.out_dim}x{self.in_dim}>"


class Identity(LinearOperator):
    """``scale * I``; ``kind`` is ``identity`` when ``scale == 1``."""

    def __init__(self, n: int, scale: float = 1.0):
        super().__init__(n, n)
        self.scale = float(scale)
        self.kind = "identity" if self.scale == 1.0 else "scaled_identity"

    def _apply(self, v):
        return v.copy() if self.scale == 1.0 else self.scale * v

    _adjoint = _apply
    _apply_cols = _apply


class Dense(LinearOperator):
    kind = "dense"

    def __init__(self, matrix):
        matrix = np.array(matrix, dtype=float, ndmin=2)
        if matrix.ndim != 2:
            raise ConfigurationError("dense operator needs a 2-D matrix")
        super().__init__(matrix.shape[1], matrix.shape[0])
        matrix.setflags(write=False)
        self.matrix = matrix

    def _apply(self, v):
        return self.matrix @ v

    def _adjoint(self, w):
        return self.matrix.T @ w

    def _apply_cols(self, D):
        return self.matrix @ D

    def to_dense(self):
        return self.matrix.copy()


class Difference(LinearOperator):
    """First- and second-order finite differences on a ``height x width`` grid.

    ``diff_h``/``diff_v`` are forward differences along columns/rows with a
    zero at the trailing edge. ``diff2_hh``/``diff2_vv`` are the replicate
    boundary second differences ``x[i+1] - 2 x[i] + x[i-1]``, and
    ``diff2_hv`` is the mixed difference ``diff_v(diff_h(x))``.
    """

    KINDS = ("diff_h", "diff_v", "diff2_hh", "diff2_hv", "diff2_vv")

    def __init__(self, kind: str, width: int, height: int):
        if kind not in self.KINDS:
            raise ConfigurationError(f"unknown difference kind {kind!r}")
        if width <= 0 or height <= 0:
            raise ConfigurationError(f"invalid grid {width}x{height}")
        n = width * height
        super().__init__(n, n)
        self.kind = kind
        self.width = width
        self.height = height

    def _apply(self, v):
        # trailing axis (if any) indexes independent columns
        x = v.reshape((self.height, self.width) + v.shape[1:])
        if self.kind == "diff_h":
            out = _fwd(x, 1)
        elif self.kind == "diff_v":
            out = _fwd(x, 0)
        elif self.kind == "diff2_hh":
            out = _second(x, 1)
        elif self.kind == "diff2_vv":
            out = _second(x, 0)
        else:
            out = _fwd(_fwd(x, 1), 0)
        return out.reshape(v.shape)

    _apply_cols = _apply

    def _adjoint(self, w):
        y = w.reshape(self.height, self.width)
        if self.kind == "diff_h":
            out = _fwd_adj(y, 1)
        elif self.kind == "diff_v":
            out = _fwd_adj(y, 0)
        elif self.kind in ("diff2_hh", "diff2_vv"):
            # -D^T D is symmetric
            out = _second(y, 1 if self.kind == "diff2_hh" else 0)
        else:
            out = _fwd_adj(_fwd_adj(y, 0), 1)
        return out.ravel()


def _fwd(x, axis):
    out = np.zeros_like(x)
    if axis == 1:
        out[:, :-1] = x[:, 1:] - x[:, :-1]
    else:
        out[:-1, :] = x[1:, :] - x[:-1, :]
    return out


def _fwd_adj(y, axis):
    out = np.zeros_like(y)
    if axis == 1:
        out[:, :-1] -= y[:, :-1]
        out[:, 1:] += y[:, :-1]
    else:
        out[:-1, :] -= y[:-1, :]
        out[1:, :] += y[:-1, :]
    return out


def _second(x, axis):
    pad = [(0, 0)] * x.ndim
    pad[axis] = (1, 1)
    p = np.pad(x, pad, mode="edge")
    if axis == 1:
        return p[:, 2:] - 2.0 * x + p[:, :-2]
    return p[2:, :] - 2.0 * x + p[:-2, :]


class UniformBlur(LinearOperator):
    """``size x size`` moving average with replicate padding."""

    kind = "blur_uniform"

    def __init__(self, width: int, height: int, size: int = 3):
        if size <= 0 or size % 2 == 0:
            raise ConfigurationError(f"blur kernel size must be odd and positive, got {size}")
        if width <= 0 or height <= 0:
            raise ConfigurationError(f"invalid grid {width}x{height}")
        n = width * height
        super().__init__(n, n)
        self.width, self.height, self.size = width, height, size
        r = size // 2
        rows = np.clip(np.arange(-r, height + r), 0, height - 1)
        cols = np.clip(np.arange(-r, width + r), 0, width - 1)
        # flat source pixel of every padded position
        self._src = (rows[:, None] * width + cols[None, :]).ravel()

    def _apply(self, v):
        h, w, k = self.height, self.width, self.size
        tail = v.shape[1:]
        p = v[self._src].reshape((h + k - 1, w + k - 1) + tail)
        out = np.zeros((h, w) + tail)
        for a in range(k):
            for b in range(k):
                out += p[a:a + h, b:b + w]
        return (out / (k * k)).reshape(v.shape)

    _apply_cols = _apply

    def _adjoint(self, w):
        h, wd, k = self.height, self.width, self.size
        y = w.reshape(h, wd) / (k * k)
        p = np.zeros((h + k - 1, wd + k - 1))
        for a in range(k):
            for b in range(k):
                p[a:a + h, b:b + wd] += y
        return np.bincount(self._src, weights=p.ravel(), minlength=self.in_dim)


class Radon(LinearOperator):
    """Parallel-beam projector with exact ray/pixel intersection lengths.

    Angles are ``a * pi / n_angles``. Detector bins are centred on the
    image centre with spacing ``spacing`` (pixel units); ray ``(a, d)``
    is the line ``s * e_a + t * (-sin, cos)`` with offset ``s`` of bin
    ``d``. The output is the sinogram in angle-major order. At angle 0
    rays run along image columns.

    The intersection lengths are traced once (Siddon's method) and stored
    as a sparse CSR matrix together with its transpose.
    """

    kind = "radon"

    def __init__(self, width: int, height: int, n_angles: int,
                 n_detectors: int | None = None, spacing: float = 1.0):
        if width <= 0 or height <= 0:
            raise ConfigurationError(f"invalid grid {width}x{height}")
        if n_angles < 1:
            raise ConfigurationError("radon needs at least one angle")
        if n_detectors is None:
            n_detectors = default_detector_count(width, height)
        if n_detectors < 1 or spacing <= 0:
            raise ConfigurationError("radon needs a positive detector count and spacing")
        super().__init__(width * height, n_angles * n_detectors)
        self.width, self.height = width, height
        self.n_angles, self.n_detectors, self.spacing = n_angles, n_detectors, float(spacing)
        self.angles = np.arange(n_angles) * np.pi / n_angles
        self.offsets = (np.arange(n_detectors) - (n_detectors - 1) / 2.0) * self.spacing
        rays, pixels, lengths = [], [], []
        for a, theta in enumerate(self.angles):
            for d, s in enumerate(self.offsets):
                pix, ln = _siddon(width, height, theta, s)
                rays.append(np.full(pix.size, a * n_detectors + d))
                pixels.append(pix)
                lengths.append(ln)
        coo = sparse.coo_matrix(
            (np.concatenate(lengths), (np.concatenate(rays), np.concatenate(pixels))),
            shape=(self.out_dim, self.in_dim))
        self.matrix = coo.tocsr()
        self._matrix_t = coo.T.tocsr()

    def _apply(self, v):
        return self.matrix @ v

    def _adjoint(self, w):
        return self._matrix_t @ w

    def to_dense(self):
        return self.matrix.toarray()


def default_detector_count(width: int, height: int) -> int:
    """Smallest odd number of unit bins covering the image diagonal."""
    half = int(np.ceil(np.hypot(width, height) / 2.0))
    return 2 * half + 1


def _siddon(width, height, theta, s, eps=1e-12):
    c, sn = np.cos(theta), np.sin(theta)
    px, py = s * c, s * sn  # foot point on the detector line
    dx, dy = -sn, c
    xb = np.arange(width + 1) - width / 2.0
    yb = np.arange(height + 1) - height / 2.0
    lo, hi = -np.inf, np.inf
    ts = []
    for p0, d, bounds in ((px, dx, xb), (py, dy, yb)):
        if abs(d) < eps:
            if p0 <= bounds[0] or p0 >= bounds[-1]:
                return np.empty(0, np.intp), np.empty(0)
            continue
        t = (bounds - p0) / d
        lo = max(lo, t.min())
        hi = min(hi, t.max())
        ts.append(t)
    if not hi > lo:
        return np.empty(0, np.intp), np.empty(0)
    t = np.concatenate(ts + [np.array([lo, hi])])
    t = np.unique(t[(t >= lo) & (t <= hi)])
    seg = np.diff(t)
    keep = seg > eps
    mid = 0.5 * (t[:-1] + t[1:])[keep]
    seg = seg[keep]
    col = np.clip(np.floor(px + mid * dx + width / 2.0).astype(np.intp), 0, width - 1)
    row = np.clip(np.floor(py + mid * dy + height / 2.0).astype(np.intp), 0, height - 1)
    return row * width + col, seg


class Stack(LinearOperator):
    """Vertical concatenation ``[A_1; A_2; ...]`` of operators."""

    kind = "stack"

    def __init__(self, children: Sequence[LinearOperator]):
        children = list(children)
        if not children:
            raise ConfigurationError("cannot stack an empty list of operators")
        n = children[0].in_dim
        for child in children:
            if child.in_dim != n:
                raise DimensionError("stacked operator input", n, child.in_dim)
        super().__init__(n, sum(c.out_dim for c in children))
        self.children = tuple(children)
        ends = np.cumsum([c.out_dim for c in children])
        self._slices = [slice(int(e - c.out_dim), int(e)) for c, e in zip(children, ends)]

    def _apply(self, v):
        return np.concatenate([c._apply(v) for c in self.children])

    def _apply_cols(self, D):
        return np.vstack([c._apply_cols(D) for c in self.children])

    def _adjoint(self, w):
        out = self.children[0]._adjoint(w[self._slices[0]])
        for child, sl in zip(self.children[1:], self._slices[1:]):
            out = out + child._adjoint(w[sl])
        return out


class Scaled(LinearOperator):
    """``scale * A`` for a wrapped operator ``A``."""

    kind = "scaled"

    def __init__(self, child: LinearOperator, scale: float):
        super().__init__(child.in_dim, child.out_dim)
        self.child = child
        self.scale = float(scale)

    def _apply(self, v):
        return self.scale * self.child._apply(v)

    def _adjoint(self, w):
        return self.scale * self.child._adjoint(w)

    def _apply_cols(self, D):
        return self.scale * self.child._apply_cols(D)


class RowBlock(LinearOperator):
    """Rows ``start:stop`` of a wrapped operator."""

    kind = "row_block"

    def __init__(self, child: LinearOperator, start: int, stop: int):
        if not 0 <= start < stop <= child.out_dim:
            raise ConfigurationError(f"invalid row range {start}:{stop} for {child!r}")
        super().__init__(child.in_dim, stop - start)
        self.child, self.start, self.stop = child, start, stop

    def _apply(self, v):
        return self.child._apply(v)[self.start:self.stop]

    def _apply_cols(self, D):
        return self.child._apply_cols(D)[self.start:self.stop]

    def _adjoint(self, w):
        full = np.zeros(self.child.out_dim)
        full[self.start:self.stop] = w
        return self.child._adjoint(full)


def stack(children: Sequence[LinearOperator]) -> Stack:
    return Stack(children)


def make_operator(kind: str, **params) -> LinearOperator:
    """Build an operator from a kind name and its geometry.

    ========================  =============================================
    kind                      parameters
    ========================  =============================================
    identity                  ``n``
    scaled_identity           ``n``, ``scale``
    dense                     ``matrix``
    diff_h ... diff2_vv       ``width``, ``height``
    blur_uniform              ``width``, ``height``, ``size`` (odd)
    radon                     ``width``, ``height``, ``n_angles``,
                              ``n_detectors``, ``spacing``
    stack                     ``children``
    scaled                    ``child``, ``scale``
    row_block                 ``child``, ``start``, ``stop``
    ========================  =============================================
    """
    try:
        if kind == "identity":
            return Identity(params["n"])
        if kind == "scaled_identity":
            return Identity(params["n"], params["scale"])
        if kind == "dense":
            return Dense(params["matrix"])
        if kind in Difference.KINDS:
            return Difference(kind, params["width"], params["height"])
        if kind == "blur_uniform":
            return UniformBlur(params["width"], params["height"], params.get("size", 3))
        if kind == "radon":
            return Radon(params["width"], params["height"], params["n_angles"],
                         params.get("n_detectors"), params.get("spacing", 1.0))
        if kind == "stack":
            return Stack(params["children"])
        if kind == "scaled":
            return Scaled(params["child"], params["scale"])
        if kind == "row_block":
            return RowBlock(params["child"], params["start"], params["stop"])
    except KeyError as exc:
        raise ConfigurationError(f"operator {kind!r} is missing parameter {exc}") from None
    raise ConfigurationError(f"unknown operator kind {kind!r}")
