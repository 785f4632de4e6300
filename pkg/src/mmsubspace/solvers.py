"""Majorize-Minimize subspace solvers.

``solve_3mg`` is the MM memory-gradient algorithm: at each iteration the
step is sought in ``span[-g_k, x_k - x_{k-1}, ..., x_{k-m+1} - x_{k-m}]``
and computed in closed form by ``J`` minimizations of a quadratic
tangent majorant. ``solve_nlcg`` and ``solve_lbfgs`` are baselines using
the same majorant as a scalar line search (one direction, one inner
iteration).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, SolverError
from .objective import CompositeObjective

__all__ = [
    "SolverConfig",
    "Trace",
    "SolveResult",
    "build_directions",
    "pinv_solve",
    "mm_step",
    "conjugacy_beta",
    "initial_point",
    "solve_3mg",
    "solve_nlcg",
    "solve_lbfgs",
    "solve",
    "SOLVERS",
]

log = logging.getLogger(__name__)

INIT_MODES = ("zero", "given", "convex_warmstart")
CG_VARIANTS = ("HS", "FR", "PRP+", "LS", "DY")


@dataclass
class SolverConfig:
    """Iteration controls shared by all solvers.

    The stopping rule is ``||grad F(x_k)|| / sqrt(N) < tol``.
    """

    memory: int = 1
    inner_iters: int = 1
    tol: float = 1e-4
    max_iters: int = 10000
    rank_tol: float = 1e-12
    init: str = "zero"
    warm_iters: int = 10
    lbfgs_memory: int = 3

    def __post_init__(self):
        if self.memory < 0 or self.inner_iters < 1 or self.max_iters < 1:
            raise ConfigurationError("memory >= 0, inner_iters >= 1 and max_iters >= 1 required")
        if not self.tol > 0 or not self.rank_tol > 0:
            raise ConfigurationError("tol and rank_tol must be positive")
        if self.init not in INIT_MODES:
            raise ConfigurationError(f"init must be one of {INIT_MODES}, got {self.init!r}")


@dataclass
class Trace:
    """Per-iteration records; row 0 is the initial point."""

    iters: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    time: list = field(default_factory=list)

    def record(self, k, f, gnorm, t):
        self.iters.append(k)
        self.objective.append(f)
        self.grad_norm.append(gnorm)
        self.time.append(t)

    def __len__(self):
        return len(self.iters)


@dataclass
class SolveResult:
    x: np.ndarray
    trace: Trace
    iterations: int
    termination: str  # converged | max_iters | zero_gradient
    solver: str = "3mg"

    @property
    def objective(self) -> float:
        return self.trace.objective[-1]

    @property
    def grad_norm(self) -> float:
        return self.trace.grad_norm[-1]

    @property
    def time(self) -> float:
        return self.trace.time[-1]

    @property
    def converged(self) -> bool:
        return self.termination in ("converged", "zero_gradient")


def build_directions(g, history: Sequence[np.ndarray], memory: int = 1) -> np.ndarray:
    """Memory-gradient direction matrix ``[-g | x_k - x_{k-1} | ...]``.

    ``history`` lists past iterates, most recent first (``history[0]`` is
    ``x_k``). At most ``memory`` differences are used; zero differences
    are kept.
    """
    g = np.asarray(g, dtype=float)
    if g.ndim != 1 or g.size == 0:
        raise DimensionError("gradient", "a nonempty vector", g.size)
    cols = [-g]
    avail = min(memory, len(history) - 1)
    for i in range(avail):
        cols.append(history[i] - history[i + 1])
    return np.column_stack(cols)


def pinv_solve(B, rhs, rank_tol: float = 1e-12) -> np.ndarray:
    """``B^+ rhs`` for a symmetric positive semi-definite ``B``.

    Eigenvalues at most ``rank_tol * max eigenvalue`` are treated as zero.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    rhs = np.asarray(rhs, dtype=float)
    scale = np.max(np.abs(B)) if B.size else 0.0
    if scale == 0.0:
        return np.zeros(B.shape[1])
    if np.max(np.abs(B - B.T)) > 1e-10 * scale:
        raise ValueError("pinv_solve expects a symmetric matrix")
    lam, U = np.linalg.eigh(0.5 * (B + B.T))
    top = lam[-1]
    if top <= 0:
        return np.zeros(B.shape[1])
    keep = lam > rank_tol * top
    coef = (U[:, keep].T @ rhs) / lam[keep]
    return U[:, keep] @ coef


def mm_step(obj: CompositeObjective, x, D, J: int = 1, rank_tol: float = 1e-12,
            evaluation=None, inner_trace: list | None = None):
    """``J`` majorant minimizations over ``x + span(D)``.

    Returns ``(x_next, u)`` with ``x_next = x + D u``. ``evaluation`` may
    carry ``obj.evaluate(x)`` to save a gradient. When ``inner_trace`` is
    a list, the inner iterates ``x^0, ..., x^J`` are appended to it.
    """
    x = np.asarray(x, dtype=float)
    D = np.asarray(D, dtype=float)
    if D.ndim == 1:
        D = D[:, None]
    if D.shape[0] != x.size:
        raise DimensionError("direction matrix rows", x.size, D.shape[0])
    # unit-norm columns condition B; the step D u is unchanged
    norms = np.linalg.norm(D, axis=0)
    norms[norms == 0] = 1.0
    Dn = D / norms
    u = np.zeros(D.shape[1])
    xj = x
    ev = evaluation if evaluation is not None else obj.evaluate(x)
    if inner_trace is not None:
        inner_trace.append(x.copy())
    for j in range(J):
        if j > 0:
            ev = obj.evaluate(xj)
        B = obj.build_B(xj, Dn, weights=ev.weights)
        du = -pinv_solve(B, Dn.T @ ev.grad, rank_tol)
        u = u + du
        xj = x + Dn @ u
        if inner_trace is not None:
            inner_trace.append(xj.copy())
    return xj, u / norms


def conjugacy_beta(variant: str, g, g_prev, d_prev) -> float:
    """Conjugacy parameter of nonlinear CG; 0 when the denominator vanishes."""
    y = g - g_prev
    if variant == "FR":
        num, den = g @ g, g_prev @ g_prev
    elif variant == "PRP+":
        num, den = g @ y, g_prev @ g_prev
    elif variant == "HS":
        num, den = g @ y, d_prev @ y
    elif variant == "LS":
        num, den = g @ y, -(d_prev @ g_prev)
    elif variant == "DY":
        num, den = g @ g, d_prev @ y
    else:
        raise ConfigurationError(f"unknown conjugacy variant {variant!r}")
    if den == 0 or not np.isfinite(den):
        return 0.0
    beta = float(num / den)
    if variant == "PRP+":
        beta = max(beta, 0.0)
    return beta


def initial_point(obj: CompositeObjective, cfg: SolverConfig, x0=None) -> np.ndarray:
    """Starting image: ``x0`` when given, else zeros, or the result of
    ``cfg.warm_iters`` 3MG iterations on the convexified criterion."""
    if x0 is not None:
        return np.array(x0, dtype=float)
    if cfg.init == "given":
        raise ConfigurationError("init='given' requires an explicit x0")
    zero = np.zeros(obj.N)
    if cfg.init == "zero":
        return zero
    warm_cfg = SolverConfig(memory=1, inner_iters=1, tol=cfg.tol,
                            max_iters=cfg.warm_iters, rank_tol=cfg.rank_tol)
    return solve_3mg(obj.convexified(), zero, warm_cfg).x


class _Run:
    """Bookkeeping shared by the solver loops."""

    def __init__(self, obj, cfg, name):
        obj._require_smooth()
        self.obj, self.cfg, self.name = obj, cfg, name
        self.sqrt_n = np.sqrt(obj.N)
        self.trace = Trace()
        self.t0 = time.perf_counter()

    def check(self, k, ev):
        """Record iteration ``k``; return a termination reason or None."""
        if not np.isfinite(ev.value) or not np.all(np.isfinite(ev.grad)):
            raise SolverError(f"{self.name}: non-finite objective at iteration {k}")
        gnorm = float(np.linalg.norm(ev.grad))
        self.trace.record(k, float(ev.value), gnorm / self.sqrt_n,
                          time.perf_counter() - self.t0)
        if gnorm == 0.0:
            return "zero_gradient"
        if gnorm / self.sqrt_n < self.cfg.tol:
            return "converged"
        if k >= self.cfg.max_iters:
            return "max_iters"
        return None

    def result(self, x, k, reason):
        log.debug("%s stopped after %d iterations: %s", self.name, k, reason)
        return SolveResult(x, self.trace, k, reason, self.name)


def solve_3mg(obj: CompositeObjective, x0=None, cfg: SolverConfig | None = None,
              callback: Callable | None = None) -> SolveResult:
    """MM memory-gradient subspace algorithm (3MG-m).

    Parameters
    ----------
    obj : CompositeObjective
        Criterion with differentiable potentials.
    x0 : array, optional
        Initial point; otherwise chosen by ``cfg.init``.
    cfg : SolverConfig, optional
    callback : callable, optional
        Called as ``callback(k, x)`` after each iteration.
    """
    cfg = cfg or SolverConfig()
    x = initial_point(obj, cfg, x0)
    run = _Run(obj, cfg, f"3mg-{cfg.memory}")
    history = [x]
    k = 0
    ev = obj.evaluate(x)
    while True:
        reason = run.check(k, ev)
        if reason:
            return run.result(x, k, reason)
        D = build_directions(ev.grad, history, cfg.memory)
        x, _ = mm_step(obj, x, D, cfg.inner_iters, cfg.rank_tol, evaluation=ev)
        history.insert(0, x)
        del history[cfg.memory + 1:]
        k += 1
        ev = obj.evaluate(x)
        if callback is not None:
            callback(k, x)


def _line_search_loop(obj, x0, cfg, name, next_direction, callback=None):
    """Descent loop with the scalar MM step along ``next_direction(k, x, g)``.

    Non-descent directions are replaced by ``-g``.
    """
    x = initial_point(obj, cfg, x0)
    run = _Run(obj, cfg, name)
    k = 0
    ev = obj.evaluate(x)
    while True:
        reason = run.check(k, ev)
        if reason:
            return run.result(x, k, reason)
        d = next_direction(k, x, ev.grad)
        if not ev.grad @ d < 0:
            d = -ev.grad
        x_new, _ = mm_step(obj, x, d, 1, cfg.rank_tol, evaluation=ev)
        next_direction.update(x_new - x, d)
        x = x_new
        k += 1
        ev = obj.evaluate(x)
        if callback is not None:
            callback(k, x)


class _ConjugateDirections:
    def __init__(self, variant):
        self.variant = variant
        self.g_prev = None
        self.d_prev = None

    def __call__(self, k, x, g):
        if self.d_prev is None:
            d = -g
        else:
            beta = conjugacy_beta(self.variant, g, self.g_prev, self.d_prev)
            d = -g + beta * self.d_prev
        self.g_pending = g
        return d

    def update(self, step, d):
        self.g_prev = self.g_pending
        self.d_prev = d


def solve_nlcg(obj: CompositeObjective, x0=None, variant: str = "PRP+",
               cfg: SolverConfig | None = None, callback=None) -> SolveResult:
    """Nonlinear conjugate gradient ``d_k = -g_k + beta_k d_{k-1}`` with the
    MM scalar step. ``d_{k-1}`` is parallel to ``x_k - x_{k-1}``."""
    if variant not in CG_VARIANTS:
        raise ConfigurationError(f"unknown conjugacy variant {variant!r}")
    cfg = cfg or SolverConfig()
    return _line_search_loop(obj, x0, cfg, f"nlcg-{variant}",
                             _ConjugateDirections(variant), callback)


class _LBFGSDirections:
    def __init__(self, mem):
        self.mem = mem
        self.pairs = []
        self.g_pending = None
        self.g_prev = None

    def __call__(self, k, x, g):
        if self.g_prev is not None:
            s, y = self.s_pending, g - self.g_prev
            sy = s @ y
            if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
                self.pairs.append((s, y, 1.0 / sy))
                del self.pairs[:-self.mem]
        self.g_prev = g
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(self.pairs):
            a = rho * (s @ q)
            q -= a * y
            alphas.append(a)
        if self.pairs:
            s, y, _ = self.pairs[-1]
            q *= (s @ y) / (y @ y)
        for (s, y, rho), a in zip(self.pairs, reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        return -q

    def update(self, step, d):
        self.s_pending = step


def solve_lbfgs(obj: CompositeObjective, x0=None, mem: int | None = None,
                cfg: SolverConfig | None = None, callback=None) -> SolveResult:
    """Limited-memory BFGS (two-loop recursion) with the MM scalar step.

    Curvature pairs with ``s^T y <= 1e-12 ||s|| ||y||`` are skipped.
    """
    cfg = cfg or SolverConfig()
    mem = cfg.lbfgs_memory if mem is None else mem
    if mem < 1:
        raise ConfigurationError("L-BFGS memory must be at least 1")
    return _line_search_loop(obj, x0, cfg, "lbfgs", _LBFGSDirections(mem), callback)


SOLVERS = ("3mg", "nlcg_hs", "nlcg_fr", "nlcg_prp+", "nlcg_ls", "nlcg_dy", "lbfgs")


def solve(name: str, obj: CompositeObjective, x0=None, cfg: SolverConfig | None = None,
          callback=None) -> SolveResult:
    """Dispatch on a solver name from :data:`SOLVERS`."""
    name = name.lower()
    if name == "3mg":
        return solve_3mg(obj, x0, cfg, callback)
    if name == "lbfgs":
        return solve_lbfgs(obj, x0, cfg=cfg, callback=callback)
    if name.startswith("nlcg_"):
        variant = name[5:].upper()
        if variant in CG_VARIANTS:
            return solve_nlcg(obj, x0, variant, cfg, callback)
    raise ConfigurationError(f"unknown solver {name!r}; choose from {SOLVERS}")
