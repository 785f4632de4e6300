"""Penalized least-squares criteria and their quadratic majorants.

The criterion is::

    F(x) = Phi(H x - y) + sum_s psi_s(||V_s x - c_s||) + tau^2 ||x||^2

Penalty blocks sharing an operator and a potential are stored together in
a :class:`PenaltyGroup` so that thousands of pixel-wise blocks cost a few
vectorized operator products. Within a group, ``V.apply(x)`` is laid out
component-major: entry ``p * S + s`` is component ``p`` of block ``s``.

The curvature operator of the majorant at ``x`` is::

    A(x) = mu H^T H + 2 tau^2 I + sum_s omega_s(||V_s x - c_s||) V_s^T V_s
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, UnsupportedOperation
from .fidelities import Fidelity
from .operators import LinearOperator
from .potentials import Potential

__all__ = [
    "PenaltyGroup",
    "CompositeObjective",
    "Evaluation",
    "Wellposedness",
    "CurvatureBounds",
]

#: largest N for which dense diagnostics are attempted
DENSE_LIMIT = 4096


class PenaltyGroup:
    """``S`` penalty blocks of common size ``P`` with one potential.

    Parameters
    ----------
    V : LinearOperator
        Operator with ``out_dim = S * P``, component-major.
    potential : Potential
    group_size : int
        Block size ``P``.
    c : array, optional
        Offsets, same layout as ``V``'s output. Zero by default.
    """

    def __init__(self, V: LinearOperator, potential: Potential, group_size: int = 1, c=None):
        if group_size < 1 or V.out_dim % group_size:
            raise ConfigurationError(
                f"operator output {V.out_dim} is not a multiple of block size {group_size}"
            )
        self.V = V
        self.potential = potential
        self.group_size = int(group_size)
        self.n_blocks = V.out_dim // group_size
        if c is None:
            self.c = None
        else:
            c = np.asarray(c, dtype=float).ravel()
            if c.size != V.out_dim:
                raise DimensionError("penalty offset", V.out_dim, c.size)
            self.c = None if not np.any(c) else c

    @classmethod
    def single(cls, V: LinearOperator, potential: Potential, c=None) -> "PenaltyGroup":
        """One block whose size is ``V.out_dim``."""
        return cls(V, potential, V.out_dim, c)

    def residual(self, x):
        r = self.V.apply(x)
        if self.c is not None:
            r = r - self.c
        return r

    def norms(self, r):
        """Per-block Euclidean norms of a residual vector."""
        if self.group_size == 1:
            return np.abs(r)
        return np.sqrt(np.sum(r.reshape(self.group_size, self.n_blocks) ** 2, axis=0))

    def expand(self, per_block):
        """Repeat per-block values to the component-major residual layout."""
        if self.group_size == 1:
            return per_block
        return np.tile(per_block, self.group_size)

    def with_potential(self, potential: Potential) -> "PenaltyGroup":
        return PenaltyGroup(self.V, potential, self.group_size, self.c)

    def __repr__(self):
        return (f"<PenaltyGroup {self.n_blocks} blocks of size {self.group_size}, "
                f"{self.potential.kind}>")


class Evaluation(NamedTuple):
    value: float
    grad: np.ndarray
    #: per-group majorant weights omega(||V_s x - c_s||), one per block
    weights: tuple


@dataclass(frozen=True)
class Wellposedness:
    ok: bool
    #: smallest singular value of [H; tau I]; for tau > 0 the lower bound tau
    smallest_singular_value: float


@dataclass(frozen=True)
class CurvatureBounds:
    """``eta ||v||^2 <= v^T A(x) v <= nu ||v||^2`` for every ``x``."""

    eta: float
    nu: float


class CompositeObjective:
    """``Phi(H x - y) + sum of block penalties + tau^2 ||x||^2``.

    Parameters
    ----------
    H : LinearOperator
    y : array of length ``H.out_dim``
    fidelity : Fidelity
    groups : sequence of PenaltyGroup
    tau : float
        Elastic-net weight, ``V_0 = tau I``.
    mu : float, optional
        Majorant curvature of the fidelity, at least its Lipschitz
        constant. Defaults to that constant.
    """

    def __init__(self, H: LinearOperator, y, fidelity: Fidelity,
                 groups: Sequence[PenaltyGroup] = (), tau: float = 0.0, mu: float | None = None):
        y = np.asarray(y, dtype=float).ravel()
        if y.size != H.out_dim:
            raise DimensionError("observation y", H.out_dim, y.size)
        if fidelity.dim is not None and fidelity.dim != H.out_dim:
            raise DimensionError("fidelity", H.out_dim, fidelity.dim)
        groups = tuple(groups)
        for g in groups:
            if g.V.in_dim != H.in_dim:
                raise DimensionError("penalty operator input", H.in_dim, g.V.in_dim)
        if tau < 0:
            raise ConfigurationError("tau must be nonnegative")
        L = fidelity.lipschitz()
        if mu is None:
            mu = L
        if mu < L:
            raise ConfigurationError(f"mu = {mu} is below the fidelity Lipschitz constant {L}")
        self.H = H
        self.y = y
        self.fidelity = fidelity
        self.groups = groups
        self.tau = float(tau)
        self.mu = float(mu)

    @property
    def N(self) -> int:
        return self.H.in_dim

    @property
    def Q(self) -> int:
        return self.H.out_dim

    @property
    def n_blocks(self) -> int:
        return sum(g.n_blocks for g in self.groups)

    @property
    def differentiable(self) -> bool:
        return all(g.potential.differentiable for g in self.groups)

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.N,):
            raise DimensionError("iterate x", self.N, x.size)
        return x

    def _require_smooth(self):
        for g in self.groups:
            if not g.potential.differentiable:
                raise UnsupportedOperation(
                    f"the {g.potential.kind} potential is not differentiable"
                )

    def value(self, x) -> float:
        x = self._check_x(x)
        f = self.fidelity.value(self.H.apply(x) - self.y)
        for g in self.groups:
            f += float(np.sum(g.potential.psi(g.norms(g.residual(x)))))
        return f + self.tau ** 2 * float(np.dot(x, x))

    def evaluate(self, x) -> Evaluation:
        """Value, gradient and majorant weights in one pass."""
        x = self._check_x(x)
        self._require_smooth()
        z = self.H.apply(x) - self.y
        f = self.fidelity.value(z)
        grad = self.H.adjoint_apply(self.fidelity.grad(z))
        weights = []
        for g in self.groups:
            r = g.residual(x)
            t = g.norms(r)
            w = g.potential.omega(t)
            f += float(np.sum(g.potential.psi(t)))
            grad += g.V.adjoint_apply(g.expand(w) * r)
            weights.append(w)
        if self.tau:
            f += self.tau ** 2 * float(np.dot(x, x))
            grad += 2.0 * self.tau ** 2 * x
        return Evaluation(f, grad, tuple(weights))

    def grad(self, x) -> np.ndarray:
        return self.evaluate(x).grad

    def _weights(self, x):
        x = self._check_x(x)
        self._require_smooth()
        return tuple(g.potential.omega(g.norms(g.residual(x))) for g in self.groups)

    def majorant_weights(self, x) -> np.ndarray:
        """``b(x)``: each block's ``omega`` repeated ``P_s`` times, block by block."""
        ws = self._weights(x)
        if not ws:
            return np.zeros(0)
        return np.concatenate([np.repeat(w, g.group_size) for g, w in zip(self.groups, ws)])

    def apply_A(self, anchor, v, weights=None) -> np.ndarray:
        """Product ``A(anchor) v``; ``weights`` may carry precomputed omegas."""
        v = self._check_x(v)
        if weights is None:
            weights = self._weights(anchor)
        out = self.mu * self.H.adjoint_apply(self.H.apply(v))
        if self.tau:
            out += 2.0 * self.tau ** 2 * v
        for g, w in zip(self.groups, weights):
            out += g.V.adjoint_apply(g.expand(w) * g.V.apply(v))
        return out

    def build_B(self, anchor, D, weights=None) -> np.ndarray:
        """Reduced curvature ``D^T A(anchor) D`` of size ``M x M``.

        Built from forward products only, as the Gram form
        ``mu (HD)^T (HD) + 2 tau^2 D^T D + sum (V D)^T diag(b) (V D)``,
        which is symmetric by construction.
        """
        D = np.asarray(D, dtype=float)
        if D.ndim == 1:
            D = D[:, None]
        if D.shape[0] != self.N or D.shape[1] == 0:
            raise DimensionError("direction matrix rows", self.N, D.shape[0])
        if weights is None:
            weights = self._weights(anchor)
        HD = self.H.apply_columns(D)
        B = self.mu * (HD.T @ HD)
        if self.tau:
            B += 2.0 * self.tau ** 2 * (D.T @ D)
        for g, w in zip(self.groups, weights):
            VD = g.V.apply_columns(D)
            B += VD.T @ (g.expand(w)[:, None] * VD)
        return 0.5 * (B + B.T)

    def check_wellposed(self) -> Wellposedness:
        """Test ``Ker H  intersect  Ker(tau I) = {0}``.

        With ``tau > 0`` the answer is immediate. Otherwise ``H`` is
        materialized (``N <= 4096``) and its smallest singular value
        compared with ``1e-10`` times the largest.
        """
        if self.tau > 0:
            return Wellposedness(True, self.tau)
        if self.N > DENSE_LIMIT:
            raise ConfigurationError(
                f"N = {self.N} is too large to check injectivity of H densely "
                f"(limit {DENSE_LIMIT}); use tau > 0 or a smaller problem"
            )
        if self.Q * self.N <= 1 << 22:
            s = np.linalg.svd(self.H.to_dense(), compute_uv=False)
            if s.size < self.N:
                s = np.concatenate([s, np.zeros(self.N - s.size)])
        else:
            # Gram route for tall operators: N products with H^T H
            gram = np.empty((self.N, self.N))
            e = np.zeros(self.N)
            for j in range(self.N):
                e[j] = 1.0
                gram[:, j] = self.H.adjoint_apply(self.H.apply(e))
                e[j] = 0.0
            s = np.sqrt(np.clip(np.linalg.eigvalsh(0.5 * (gram + gram.T)), 0.0, None))[::-1]
        smax, smin = float(s[0]), float(s[-1])
        return Wellposedness(bool(smax > 0 and smin > 1e-10 * smax), smin)

    def curvature_bounds(self) -> CurvatureBounds:
        """Dense ``eta`` (smallest eigenvalue of ``mu H^T H + 2 tau^2 I``) and
        ``nu = mu ||H||^2 + 2 tau^2 + sum_g omega_bar_g ||V_g||^2``."""
        if self.N > DENSE_LIMIT:
            raise ConfigurationError(f"N = {self.N} too large for dense curvature bounds")
        Hd = self.H.to_dense()
        base = self.mu * (Hd.T @ Hd) + 2.0 * self.tau ** 2 * np.eye(self.N)
        eta = float(np.linalg.eigvalsh(base)[0])
        nu = self.mu * np.linalg.norm(Hd, 2) ** 2 + 2.0 * self.tau ** 2
        for g in self.groups:
            nu += g.potential.omega_bar() * np.linalg.norm(g.V.to_dense(), 2) ** 2
        return CurvatureBounds(max(eta, 0.0), float(nu))

    def map_potentials(self, fn: Callable[[Potential], Potential]) -> "CompositeObjective":
        """Copy of the objective with every group's potential replaced by ``fn(p)``."""
        groups = [g.with_potential(fn(g.potential)) for g in self.groups]
        return CompositeObjective(self.H, self.y, self.fidelity, groups, self.tau, self.mu)

    def convexified(self) -> "CompositeObjective":
        """Nonconvex potentials swapped for the hyperbolic one with equal (lam, delta)."""
        return self.map_potentials(
            lambda p: p if p.convex else Potential("sc_hyperbolic", p.lam, p.delta)
        )

    def __repr__(self):
        return (f"<CompositeObjective N={self.N} Q={self.Q} {self.fidelity.kind} "
                f"blocks={self.n_blocks} tau={self.tau} mu={self.mu}>")
