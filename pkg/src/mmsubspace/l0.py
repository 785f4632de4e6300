"""Exact block-l0 minimization on tiny instances, and continuation tables.

``F0(x) = 0.5 (Hx - y)^T Lam (Hx - y) + tau^2 ||x||^2 + lam * #{s : V_s x != c_s}``

For every subset ``Z`` of blocks forced to zero residual, the quadratic is
minimized subject to ``V_s x = c_s (s in Z)`` and scored
``q + lam (S - |Z|)``. Any ``x`` has ``F0(x)`` at least the score of its own
zero set, and each score is attained, so the smallest score is ``min F0``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError
from .fidelities import LeastSquares
from .objective import CompositeObjective, PenaltyGroup
from .operators import Difference, Identity, RowBlock
from .potentials import Potential
from .solvers import SolverConfig, solve_3mg

__all__ = [
    "L0Instance",
    "eval_F0",
    "brute_force_min_F0",
    "EpiRow",
    "EpiTable",
    "epi_convergence_table",
    "step_instance",
    "chain_instance",
    "MAX_BLOCKS",
    "ZERO_THRESHOLD",
]

log = logging.getLogger(__name__)

MAX_BLOCKS = 20
ZERO_THRESHOLD = 1e-10
#: scaled gradient tolerance of each continuation solve; tighter values stall
#: on rounding once lam / delta^2 is large
EPI_TOL = 1e-6


@dataclass
class L0Instance:
    """Dense quadratic core plus blocks ``(V_s, c_s)`` and weight ``lam``."""

    H: np.ndarray
    y: np.ndarray
    blocks: list  # list of (V_s as P_s x N array, c_s as length-P_s array)
    lam: float
    tau: float = 0.0
    weight: np.ndarray | None = None  # Lam as an N_y x N_y matrix; identity when None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.y.size != self.H.shape[0]:
            raise DimensionError("observation y", self.H.shape[0], self.y.size)
        if len(self.blocks) > MAX_BLOCKS:
            raise ConfigurationError(
                f"{len(self.blocks)} blocks exceed the enumeration limit of {MAX_BLOCKS}")
        if self.lam < 0 or self.tau < 0:
            raise ConfigurationError("lam and tau must be nonnegative")
        blocks = []
        for V, c in self.blocks:
            V = np.atleast_2d(np.asarray(V, dtype=float))
            if V.shape[1] != self.N:
                raise DimensionError("block operator columns", self.N, V.shape[1])
            c = np.zeros(V.shape[0]) if c is None else np.asarray(c, dtype=float).ravel()
            if c.size != V.shape[0]:
                raise DimensionError("block offset", V.shape[0], c.size)
            blocks.append((V, c))
        self.blocks = blocks
        if self.weight is not None:
            w = np.asarray(self.weight, dtype=float)
            self.weight = np.diag(w) if w.ndim == 1 else w

    @property
    def N(self) -> int:
        return self.H.shape[1]

    @property
    def S(self) -> int:
        return len(self.blocks)

    @classmethod
    def from_objective(cls, obj: CompositeObjective, lam: float | None = None) -> "L0Instance":
        """Dense copy of an objective with a least-squares fidelity.

        ``lam`` defaults to the common ``lam`` of all potentials.
        """
        if not isinstance(obj.fidelity, LeastSquares):
            raise ConfigurationError("the l0 oracle needs a least-squares fidelity")
        if lam is None:
            lams = {g.potential.lam for g in obj.groups}
            if len(lams) != 1:
                raise ConfigurationError("potentials disagree on lam; pass lam explicitly")
            lam = lams.pop()
        blocks = []
        for g in obj.groups:
            Vd = g.V.to_dense()
            c = g.c if g.c is not None else np.zeros(g.V.out_dim)
            P, S = g.group_size, g.n_blocks
            for s in range(S):
                rows = np.arange(P) * S + s
                blocks.append((Vd[rows], c[rows]))
        w = obj.fidelity.weight
        if w is not None and np.ndim(w) < 2:
            w = np.broadcast_to(w, (obj.Q,)).copy()
        return cls(obj.H.to_dense(), obj.y, blocks, lam, obj.tau, w)

    def quadratic(self, x) -> float:
        z = self.H @ x - self.y
        wz = z if self.weight is None else self.weight @ z
        return 0.5 * float(z @ wz) + self.tau ** 2 * float(x @ x)

    def hessian(self) -> np.ndarray:
        HtW = self.H.T if self.weight is None else self.H.T @ self.weight
        return HtW @ self.H + 2.0 * self.tau ** 2 * np.eye(self.N)

    def linear_term(self) -> np.ndarray:
        """Gradient of the quadratic at ``x = 0``."""
        wy = self.y if self.weight is None else self.weight @ self.y
        return -(self.H.T @ wy)


def eval_F0(inst: L0Instance, x) -> float:
    """Quadratic part plus ``lam`` per block with residual norm above 1e-10."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != inst.N:
        raise DimensionError("x", inst.N, x.size)
    active = sum(np.linalg.norm(V @ x - c) > ZERO_THRESHOLD for V, c in inst.blocks)
    return inst.quadratic(x) + inst.lam * active


def _subset_minimizer(inst, G, b, members):
    """Minimize ``0.5 x^T G x + b^T x`` subject to the blocks in ``members``."""
    if not members:
        x, *_ = np.linalg.lstsq(G, -b, rcond=None)
        ok = np.linalg.norm(G @ x + b) <= 1e-9 * max(1.0, np.linalg.norm(b))
        return x if ok else None
    C = np.vstack([inst.blocks[s][0] for s in members])
    d = np.concatenate([inst.blocks[s][1] for s in members])
    xp, *_ = np.linalg.lstsq(C, d, rcond=None)
    if np.linalg.norm(C @ xp - d) > 1e-9 * max(1.0, np.linalg.norm(d)):
        return None  # incompatible constraints
    _, sv, vt = np.linalg.svd(C)
    rank = int(np.sum(sv > 1e-12 * max(sv[0], 1.0))) if sv.size else 0
    Z = vt[rank:].T
    if Z.shape[1] == 0:
        return xp
    Gr = Z.T @ G @ Z
    br = Z.T @ (G @ xp + b)
    w, *_ = np.linalg.lstsq(Gr, -br, rcond=None)
    if np.linalg.norm(Gr @ w + br) > 1e-9 * max(1.0, np.linalg.norm(br)):
        return None  # quadratic unbounded on the feasible set
    return xp + Z @ w


def brute_force_min_F0(inst: L0Instance):
    """Global minimizer of ``F0`` by enumerating all ``2^S`` zero sets.

    Subsets are indexed by bit masks (bit ``s`` set means block ``s`` is
    forced to zero); the lowest index wins ties. Subsets whose constrained
    problem has no solution score ``+inf``.

    Returns
    -------
    x_star : ndarray
    value : float
    active_set : tuple of int
        Blocks forced to zero residual at ``x_star``.
    """
    G = inst.hessian()
    b = inst.linear_term()
    const = 0.5 * float(inst.y @ (inst.y if inst.weight is None else inst.weight @ inst.y))
    best = (math.inf, None, None)
    for mask in range(1 << inst.S):
        members = [s for s in range(inst.S) if mask >> s & 1]
        x = _subset_minimizer(inst, G, b, members)
        if x is None:
            log.info("subset %d skipped: no constrained minimizer", mask)
            continue
        q = 0.5 * float(x @ G @ x) + float(b @ x) + const
        score = q + inst.lam * (inst.S - len(members))
        if score < best[0]:
            best = (score, x, tuple(members))
    if best[1] is None:
        raise ConfigurationError("no subset admits a constrained minimizer")
    return best[1], best[0], best[2]


@dataclass
class EpiRow:
    n: int
    delta: float
    value: float
    iterations: int
    converged: bool
    #: value dropped below the previous row by more than the slack
    decrease: bool = False


@dataclass
class EpiTable:
    rows: list = field(default_factory=list)
    oracle_value: float = math.nan
    oracle_x: np.ndarray | None = None
    slack: float = 1e-9

    @property
    def nondecreasing(self) -> bool:
        return not any(r.decrease for r in self.rows)

    @property
    def final_relative_error(self) -> float:
        last = self.rows[-1].value
        return abs(last - self.oracle_value) / max(abs(self.oracle_value), 1e-300)

    def format(self) -> str:
        lines = [f"{'n':>3} {'delta':>12} {'min F_delta':>20} {'iters':>6}  flags"]
        for r in self.rows:
            flags = []
            if not r.converged:
                flags.append("not-converged")
            if r.decrease:
                flags.append("decrease")
            lines.append(f"{r.n:>3} {r.delta:>12.6g} {r.value:>20.12g} {r.iterations:>6}  "
                         f"{','.join(flags) or 'ok'}")
        lines.append(f"l0 oracle min F0 = {self.oracle_value:.12g}; "
                     f"relative gap of last row = {self.final_relative_error:.3e}")
        return "\n".join(lines)


def epi_convergence_table(family: Callable[[float], CompositeObjective], deltas: Sequence[float],
                          instance: L0Instance, x0=None, cfg: SolverConfig | None = None,
                          slack: float = 1e-9) -> EpiTable:
    """Minimize ``F_delta`` along a decreasing ``delta`` sequence.

    Each solve starts from the previous minimizer (``x0`` or zero for the
    first). Rows record the reached value, flag nonconvergence and flag a
    value below the previous row by more than ``slack``. The oracle value of
    ``instance`` is attached for comparison with the last row.
    """
    deltas = [float(d) for d in deltas]
    if not deltas or any(d <= 0 for d in deltas) or any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ConfigurationError("deltas must be positive and strictly decreasing")
    cfg = cfg or SolverConfig(tol=EPI_TOL)
    x_star, value, _ = brute_force_min_F0(instance)
    table = EpiTable(oracle_value=value, oracle_x=x_star, slack=slack)
    x = None if x0 is None else np.asarray(x0, dtype=float)
    prev = -math.inf
    for n, d in enumerate(deltas):
        res = solve_3mg(family(d), x, cfg)
        x = res.x
        row = EpiRow(n, d, res.objective, res.iterations, res.converged,
                     decrease=res.objective < prev - slack)
        table.rows.append(row)
        prev = res.objective
    return table


#: 8-sample noisy step used by the ``epi`` command
STEP_SIGNAL = np.array([0.3, -0.2, 0.1, -0.3, 10.2, 9.9, 10.3, 9.8])
STEP_LAMBDA = 2.0


def step_instance(kind: str = "welsch", lam: float = STEP_LAMBDA, signal=None):
    """Built-in 1-D instance: ``H = I``, least squares, 7 first differences.

    Returns ``(family, instance)`` where ``family(delta)`` builds the
    smoothed objective with potential ``kind`` and ``instance`` is its
    exact l0 counterpart.
    """
    y = STEP_SIGNAL if signal is None else np.asarray(signal, dtype=float).ravel()
    return chain_instance(y, kind, lam)


def chain_instance(y, kind: str, lam: float):
    """``(family, instance)`` for ``H = I`` and first-difference blocks on ``y``."""
    n = y.size
    if n < 2:
        raise ConfigurationError("need at least two samples")
    V = Difference("diff_h", n, 1)
    # the trailing difference is identically zero; keep only the n - 1 real ones
    Vr = RowBlock(V, 0, n - 1)

    def family(delta: float) -> CompositeObjective:
        group = PenaltyGroup(Vr, Potential(kind, lam, delta), 1)
        return CompositeObjective(Identity(n), y, LeastSquares(), [group], tau=0.0, mu=1.0)

    inst = L0Instance.from_objective(family(1.0), lam)
    return family, inst
