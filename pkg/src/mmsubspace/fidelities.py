"""Data-fidelity functions with Lipschitz-continuous gradients.

Each fidelity ``Phi`` is evaluated on the residual ``z = H x - y`` and
reports the Lipschitz constant of its gradient, which lower-bounds the
curvature ``mu`` used by the quadratic majorant.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError

__all__ = [
    "Fidelity",
    "LeastSquares",
    "L2L1",
    "Huber",
    "Cauchy",
    "BoxDistanceSq",
    "SmoothedMax",
    "WeightedBlocks",
    "make_fidelity",
]


class Fidelity:
    kind = "abstract"
    #: declared input size, or None when any size is accepted
    dim: int | None = None

    def value(self, z) -> float:
        return float(self._value(self._check(z)))

    def grad(self, z) -> np.ndarray:
        return self._grad(self._check(z))

    def lipschitz(self) -> float:
        raise NotImplementedError

    def _check(self, z):
        z = np.asarray(z, dtype=float)
        if z.ndim != 1 or (self.dim is not None and z.size != self.dim):
            raise DimensionError(f"{self.kind} fidelity", self.dim, z.size)
        return z

    def __repr__(self):
        return f"<{type(self).__name__}>"


def _per_entry(param, name, positive=True):
    arr = np.asarray(param, dtype=float)
    if arr.ndim > 1:
        raise ConfigurationError(f"{name} must be a scalar or a vector")
    if positive and not np.all(arr > 0):
        raise ConfigurationError(f"{name} must be positive")
    return arr


class LeastSquares(Fidelity):
    """``0.5 * z^T Lam z`` with ``Lam`` the identity, a scalar, a diagonal
    vector or a symmetric positive semi-definite matrix."""

    kind = "least_squares"

    def __init__(self, weight=None):
        if weight is None:
            self.weight = None
            self._L = 1.0
        else:
            w = np.asarray(weight, dtype=float)
            if w.ndim == 2:
                if w.shape[0] != w.shape[1] or not np.allclose(w, w.T):
                    raise ConfigurationError("least-squares weight matrix must be symmetric")
                eig = np.linalg.eigvalsh(w)
                if eig[0] < -1e-12 * max(1.0, abs(eig[-1])):
                    raise ConfigurationError("least-squares weight matrix must be PSD")
                self.dim = w.shape[0]
                self._L = float(max(abs(eig[0]), abs(eig[-1])))
            else:
                if np.any(w < 0):
                    raise ConfigurationError("least-squares weights must be nonnegative")
                if w.ndim == 1:
                    self.dim = w.size
                self._L = float(np.max(w)) if w.size else 0.0
            self.weight = w

    def _apply_weight(self, z):
        w = self.weight
        if w is None:
            return z
        return w @ z if w.ndim == 2 else w * z

    def _value(self, z):
        return 0.5 * np.dot(z, self._apply_weight(z))

    def _grad(self, z):
        return np.array(self._apply_weight(z), dtype=float)

    def lipschitz(self):
        return self._L


class L2L1(Fidelity):
    """``sum_q sqrt(rho_q + z_q^2)``."""

    kind = "l2l1"

    def __init__(self, rho=1.0):
        self.rho = _per_entry(rho, "rho")

    def _value(self, z):
        return np.sum(np.sqrt(self.rho + z * z))

    def _grad(self, z):
        return z / np.sqrt(self.rho + z * z)

    def lipschitz(self):
        return float(np.max(1.0 / np.sqrt(self.rho)))


class Huber(Fidelity):
    """``rho t^2`` for ``|t| <= nu``, ``rho nu (2|t| - nu)`` beyond."""

    kind = "huber"

    def __init__(self, rho=1.0, nu=1.0):
        self.rho = _per_entry(rho, "rho")
        self.nu = _per_entry(nu, "nu")

    def _value(self, z):
        a = np.abs(z)
        inner = a <= self.nu
        return np.sum(self.rho * np.where(inner, a * a, self.nu * (2.0 * a - self.nu)))

    def _grad(self, z):
        return 2.0 * self.rho * np.clip(z, -self.nu, self.nu)

    def lipschitz(self):
        return float(2.0 * np.max(self.rho))


class Cauchy(Fidelity):
    """``sum_q ln(rho_q + z_q^2)`` (nonconvex, smooth)."""

    kind = "cauchy"

    def __init__(self, rho=1.0):
        self.rho = _per_entry(rho, "rho")

    def _value(self, z):
        return np.sum(np.log(self.rho + z * z))

    def _grad(self, z):
        return 2.0 * z / (self.rho + z * z)

    def lipschitz(self):
        return float(np.max(2.0 / self.rho))


class BoxDistanceSq(Fidelity):
    """Half squared distance to the box ``[lo, hi]^Q``."""

    kind = "box_distance_sq"

    def __init__(self, lo=0.0, hi=255.0):
        if not lo <= hi:
            raise ConfigurationError(f"empty box [{lo}, {hi}]")
        self.lo, self.hi = float(lo), float(hi)

    def distance(self, z):
        z = np.asarray(z, dtype=float)
        return np.maximum(self.lo - z, 0.0) + np.maximum(z - self.hi, 0.0)

    def _value(self, z):
        d = self.distance(z)
        return 0.5 * np.dot(d, d)

    def _grad(self, z):
        return z - np.clip(z, self.lo, self.hi)

    def lipschitz(self):
        return 1.0


class SmoothedMax(Fidelity):
    """``rho * log(sum_q exp(z_q / rho))``."""

    kind = "smoothed_max"

    def __init__(self, rho=1.0):
        if not rho > 0:
            raise ConfigurationError("smoothed max needs rho > 0")
        self.rho = float(rho)

    def _value(self, z):
        s = z / self.rho
        m = np.max(s)
        return self.rho * (m + np.log(np.sum(np.exp(s - m))))

    def _grad(self, z):
        s = z / self.rho
        e = np.exp(s - np.max(s))
        return e / np.sum(e)

    def lipschitz(self):
        return 1.0 / self.rho


class WeightedBlocks(Fidelity):
    """Separable sum ``sum_b w_b Phi_b(z_b)`` over consecutive slices of ``z``.

    ``blocks`` is a sequence of ``(size, weight, fidelity)``.
    """

    kind = "weighted_block"

    def __init__(self, blocks: Sequence[tuple[int, float, Fidelity]]):
        if not blocks:
            raise ConfigurationError("weighted_block needs at least one block")
        self.blocks = tuple((int(n), float(w), f) for n, w, f in blocks)
        for n, w, f in self.blocks:
            if n <= 0 or w < 0:
                raise ConfigurationError("block sizes must be positive, weights nonnegative")
            if f.dim is not None and f.dim != n:
                raise DimensionError("fidelity block", n, f.dim)
        self.dim = sum(n for n, _, _ in self.blocks)
        ends = np.cumsum([n for n, _, _ in self.blocks])
        self._slices = [slice(int(e - n), int(e)) for (n, _, _), e in zip(self.blocks, ends)]

    def _value(self, z):
        return sum(w * f._value(z[sl]) for (_, w, f), sl in zip(self.blocks, self._slices))

    def _grad(self, z):
        return np.concatenate([w * f._grad(z[sl])
                               for (_, w, f), sl in zip(self.blocks, self._slices)])

    def lipschitz(self):
        return max(w * f.lipschitz() for _, w, f in self.blocks)


def make_fidelity(kind: str, **params) -> Fidelity:
    classes = {
        "least_squares": LeastSquares,
        "l2l1": L2L1,
        "huber": Huber,
        "cauchy": Cauchy,
        "box_distance_sq": BoxDistanceSq,
        "smoothed_max": SmoothedMax,
        "weighted_block": WeightedBlocks,
    }
    if kind not in classes:
        raise ConfigurationError(f"unknown fidelity kind {kind!r}")
    return classes[kind](**params)
