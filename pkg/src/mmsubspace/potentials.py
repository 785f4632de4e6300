"""Scalar edge-preserving potentials and their majorant weights.

A potential ``psi`` is applied to the norm of each penalty block. The MM
machinery only needs ``psi`` itself, its derivative and the weight
``omega(t) = psi'(t) / t`` (extended by continuity at 0), which is bounded
above by ``omega_bar``.

All methods accept scalars or numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, UnsupportedOperation

__all__ = ["Potential", "KINDS", "SMOOTH_L2L0", "CONVEX_KINDS"]

#: kinds satisfying the l2-l0 limit and differentiable
SMOOTH_L2L0 = ("geman_mcclure", "welsch", "tanh_pot", "tukey")
CONVEX_KINDS = ("sc_hyperbolic", "hessian_l2l1")
KINDS = CONVEX_KINDS + SMOOTH_L2L0 + ("truncated_quadratic",)

# short names used on the command line and in tables
ALIASES = {
    "sc": "sc_hyperbolic",
    "snc2": "geman_mcclure",
    "snc3": "welsch",
    "snc4": "tanh_pot",
    "snc5": "tukey",
    "nsnc": "truncated_quadratic",
    "tanh": "tanh_pot",
    "hessian": "hessian_l2l1",
}

_SQRT6 = np.sqrt(6.0)


@dataclass(frozen=True)
class Potential:
    """Penalty ``psi_delta`` of weight ``lam`` and scale ``delta``.

    For ``hessian_l2l1`` the weight is usually called rho and the
    effective scale is ``theta * delta``:
    ``psi(t) = lam * (sqrt(1 + t**2 / (theta * delta)**2) - 1)``.
    """

    kind: str
    lam: float
    delta: float
    theta: float = 1.0

    def __post_init__(self):
        kind = ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ConfigurationError(f"unknown potential kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not self.lam >= 0 or not self.delta > 0 or not self.theta > 0:
            raise ConfigurationError(
                f"potential needs lam >= 0, delta > 0, theta > 0; got "
                f"{self.lam}, {self.delta}, {self.theta}"
            )

    @property
    def differentiable(self) -> bool:
        return self.kind != "truncated_quadratic"

    @property
    def convex(self) -> bool:
        return self.kind in CONVEX_KINDS

    @property
    def scale(self) -> float:
        return self.theta * self.delta if self.kind == "hessian_l2l1" else self.delta

    def with_params(self, **changes) -> "Potential":
        return replace(self, **changes)

    def psi(self, t):
        t = np.asarray(t, dtype=float)
        lam, d = self.lam, self.scale
        u = t * t / (2.0 * d * d)
        k = self.kind
        if k in CONVEX_KINDS:
            # sqrt(1 + 2u) - 1 written to avoid cancellation near 0
            return lam * (2.0 * u) / (np.sqrt(1.0 + 2.0 * u) + 1.0)
        if k == "geman_mcclure":
            return lam * t * t / (2.0 * d * d + t * t)
        if k == "welsch":
            return -lam * np.expm1(-u)
        if k == "tanh_pot":
            return lam * np.tanh(u)
        if k == "tukey":
            v = np.minimum(u / 3.0, 1.0)  # t^2 / (6 delta^2), capped
            return np.where(np.abs(t) >= _SQRT6 * d, lam, lam * (1.0 - (1.0 - v) ** 3))
        return lam * np.minimum(u, 1.0)

    def dpsi(self, t):
        """Derivative ``psi'(t) = omega(|t|) * t``."""
        self._require_smooth("derivative")
        t = np.asarray(t, dtype=float)
        return self.omega(np.abs(t)) * t

    def omega(self, t):
        """Majorant weight ``psi'(t) / t``; its value at 0 is the analytic limit."""
        self._require_smooth("omega")
        t = np.asarray(t, dtype=float)
        lam, d = self.lam, self.scale
        d2 = d * d
        k = self.kind
        if k in CONVEX_KINDS:
            return lam / (d * np.sqrt(d2 + t * t))
        if k == "geman_mcclure":
            return 4.0 * lam * d2 / (2.0 * d2 + t * t) ** 2
        u = t * t / (2.0 * d2)
        if k == "welsch":
            return lam / d2 * np.exp(-u)
        if k == "tanh_pot":
            # sech^2(u) = 4 e^{-2u} / (1 + e^{-2u})^2, safe for large u
            e = np.exp(-2.0 * u)
            return lam / d2 * 4.0 * e / (1.0 + e) ** 2
        v = np.minimum(u / 3.0, 1.0)
        return np.where(t >= _SQRT6 * d, 0.0, lam / d2 * (1.0 - v) ** 2)

    def omega_bar(self) -> float:
        """Supremum of ``omega`` on ``[0, inf)``, attained at 0 for every kind."""
        self._require_smooth("omega_bar")
        return self.lam / self.scale ** 2

    def _require_smooth(self, what):
        if not self.differentiable:
            raise UnsupportedOperation(f"{what} is undefined for the {self.kind} potential")
