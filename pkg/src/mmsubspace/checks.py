"""Self-checks run by the ``check`` command.

Each suite returns a :class:`CheckResult`; a suite passes when its worst
observed error stays within its threshold.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .fidelities import (BoxDistanceSq, Cauchy, Huber, L2L1, LeastSquares, SmoothedMax,
                         WeightedBlocks)
from .objective import CompositeObjective, PenaltyGroup
from .operators import Dense, Difference, Identity, Radon, Scaled, Stack, UniformBlur
from .potentials import Potential
from .problems import (ExperimentSpec, build_deblur, build_denoise, build_experiment,
                       build_segment, build_tomo, make_phantom)
from .solvers import SolverConfig, build_directions, mm_step, solve_3mg

__all__ = [
    "CheckResult",
    "operator_zoo",
    "small_objectives",
    "fd_gradient",
    "adjoint_suite",
    "gradient_suite",
    "majorant_suite",
    "descent_suite",
    "cg_suite",
    "run_all",
]

SMOOTH_KINDS = ("sc_hyperbolic", "geman_mcclure", "welsch", "tanh_pot", "tukey")


@dataclass
class CheckResult:
    name: str
    passed: bool
    checks: int
    worst: float
    threshold: float
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{self.name:<10} {status}  {self.checks:>6} checks  worst {self.worst:.3e} "
                f"(limit {self.threshold:.0e})  {self.seconds:.2f}s")


def operator_zoo(width=7, height=5):
    """One instance of every operator kind on a small grid."""
    rng = np.random.default_rng(7)
    n = width * height
    ops = [Identity(n), Identity(n, 2.5), Dense(rng.standard_normal((9, n)))]
    ops += [Difference(k, width, height) for k in Difference.KINDS]
    ops += [UniformBlur(width, height, 3), UniformBlur(width, height, 5),
            Radon(width, height, 6), Scaled(Difference("diff2_hv", width, height), np.sqrt(2))]
    ops.append(Stack([UniformBlur(width, height, 3), Identity(n)]))
    return ops


def small_objectives(size=8, seed=0):
    """``(label, objective, sample point)`` for every builder and smooth potential.

    Parameters are scaled so that block residuals at the sample points
    span the quadratic and the saturated parts of each potential.
    """
    rng = np.random.default_rng(seed)
    truth = make_phantom("blocks2d", size, size)
    out = []
    for kind in SMOOTH_KINDS:
        noisy = truth.pixels + 20.0 * rng.standard_normal(truth.size)
        img = type(truth)(size, size, noisy)
        objs = {
            "denoise": build_denoise(img, kind, 30.0, 15.0, 1.0),
            "segment": build_segment(img, kind, 30.0, 15.0),
            "deblur": build_deblur(img, kind, 30.0, 15.0, 2.0, 0.5, 0.01, 3),
        }
        R = Radon(size, size, 6)
        objs["tomo"] = build_tomo(R.apply(noisy), R, 30.0, 15.0, 2.0, 0.01, kind)
        for label, obj in objs.items():
            x = truth.pixels + 40.0 * rng.standard_normal(truth.size)
            out.append((f"{label}/{kind}", obj, x))
    return out


def fidelity_objectives(n=10, seed=1):
    """Standalone fidelities on a random dense ``H`` with no penalty."""
    rng = np.random.default_rng(seed)
    q = 12
    H = Dense(rng.standard_normal((q, n)))
    y = rng.standard_normal(q)
    M = rng.standard_normal((q, q))
    fids = {
        "least_squares": LeastSquares(M @ M.T / q),
        "l2l1": L2L1(rng.uniform(0.5, 2.0, q)),
        "huber": Huber(rng.uniform(0.5, 2.0, q), 0.7),
        "cauchy": Cauchy(rng.uniform(0.5, 2.0, q)),
        "box_distance_sq": BoxDistanceSq(-0.5, 0.5),
        "smoothed_max": SmoothedMax(0.7),
        "weighted_block": WeightedBlocks([(6, 0.5, L2L1(1.0)), (6, 2.0, BoxDistanceSq(-1, 1))]),
    }
    return [(f"fidelity/{k}", CompositeObjective(H, y, f), 2.0 * rng.standard_normal(n))
            for k, f in fids.items()]


def fd_gradient(f, x, rel_step=1e-6):
    """Central finite-difference gradient with steps ``rel_step * max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        e = x.copy()
        e[i] = x[i] + h
        fp = f(e)
        e[i] = x[i] - h
        fm = f(e)
        g[i] = (fp - fm) / (2.0 * h)
    return g


def adjoint_suite(pairs=100, seed=0) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst, count = 0.0, 0
    for op in operator_zoo():
        dense = op.to_dense()
        for _ in range(pairs):
            v = rng.standard_normal(op.in_dim)
            w = rng.standard_normal(op.out_dim)
            lhs, rhs = op.apply(v) @ w, v @ op.adjoint_apply(w)
            worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
            count += 1
        cols = np.column_stack([op.adjoint_apply(e) for e in np.eye(op.out_dim)])
        worst = max(worst, np.max(np.abs(cols - dense.T)) / max(np.max(np.abs(dense)), 1e-300))
    return CheckResult("adjoint", worst <= 1e-10, count, worst, 1e-10, time.perf_counter() - t0)


def gradient_suite(seed=0) -> CheckResult:
    t0 = time.perf_counter()
    worst, count = 0.0, 0
    for _, obj, x in small_objectives(seed=seed) + fidelity_objectives(seed=seed + 1):
        g = obj.grad(x)
        fd = fd_gradient(obj.value, x)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-12))
        count += 1
    return CheckResult("gradient", worst <= 1e-5, count, worst, 1e-5, time.perf_counter() - t0)


def majorant_gap(obj, x, D, u_anchor, u):
    """``q(u, u') - f(u)`` for ``f(u) = F(x + D u)`` and anchor ``u'``."""
    xa = x + D @ u_anchor
    ev = obj.evaluate(xa)
    B = obj.build_B(xa, D, weights=ev.weights)
    du = u - u_anchor
    q = ev.value + (D.T @ ev.grad) @ du + 0.5 * du @ B @ du
    return q - obj.value(x + D @ u)


def majorant_suite(triples=1000, seed=0) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    cases = small_objectives(seed=seed) + fidelity_objectives(seed=seed + 1)
    worst = 0.0
    for i in range(triples):
        _, obj, x = cases[i % len(cases)]
        m = 1 + i % 3
        D = rng.standard_normal((obj.N, m)) * rng.choice([0.1, 1.0, 10.0])
        ua, u = rng.standard_normal(m), rng.standard_normal(m) * rng.choice([0.1, 1.0, 10.0])
        worst = max(worst, -majorant_gap(obj, x, D, ua, u))
    return CheckResult("majorant", worst <= 1e-9, triples, max(worst, 0.0), 1e-9,
                       time.perf_counter() - t0)


def descent_suite(slack=1e-12) -> CheckResult:
    """Monotone objective on desk runs; step inequalities on tiny instances."""
    t0 = time.perf_counter()
    worst, count = 0.0, 0
    for kind in ("denoise", "segment", "deblur", "tomo"):
        res = solve_3mg(build_experiment(ExperimentSpec(kind=kind)).objective)
        f = np.asarray(res.trace.objective)
        worst = max(worst, float(np.max(np.diff(f), initial=-np.inf)))
        count += f.size - 1
    ok = worst <= slack
    lemma_worst = 0.0
    for label, obj, x in small_objectives(size=3, seed=3):
        if obj.tau > 0:
            continue
        eta = obj.curvature_bounds().eta
        for viol in lemma_violations(obj, x, eta, J=2, iters=40):
            lemma_worst = max(lemma_worst, viol)
            count += 1
    ok = ok and lemma_worst <= 1e-9
    return CheckResult("descent", ok, count, max(worst, lemma_worst, 0.0), 1e-9,
                       time.perf_counter() - t0)


def lemma_violations(obj, x, eta, J=1, memory=1, iters=50, tol=1e-10):
    """Yield the larger violation of the sufficient-decrease and step-length
    inequalities for every inner step of a 3MG run."""
    history = [np.asarray(x, dtype=float)]
    for _ in range(iters):
        ev = obj.evaluate(history[0])
        if np.linalg.norm(ev.grad) / np.sqrt(obj.N) < tol:
            return
        D = build_directions(ev.grad, history, memory)
        inner = []
        x_next, _ = mm_step(obj, history[0], D, J, evaluation=ev, inner_trace=inner)
        for a, b in zip(inner, inner[1:]):
            fa, ga = obj.value(a), obj.grad(a)
            step = np.linalg.norm(b - a)
            decrease_gap = 0.5 * eta * step ** 2 - (fa - obj.value(b))
            length_gap = eta * step - np.linalg.norm(ga)
            yield max(decrease_gap, length_gap)
        history.insert(0, x_next)
        del history[memory + 1:]


def textbook_cg(Q, b, x0, iters):
    """Linear conjugate gradient for ``Q x = b``; returns the iterates."""
    x = x0.copy()
    r = b - Q @ x
    p = r.copy()
    out = [x.copy()]
    for _ in range(iters):
        rr = r @ r
        if rr == 0:
            break
        Qp = Q @ p
        alpha = rr / (p @ Qp)
        x = x + alpha * p
        r = r - alpha * Qp
        p = r + (r @ r) / rr * p
        out.append(x.copy())
    return out


def cg_suite(n=50, iters=20, seed=0) -> CheckResult:
    """3MG with one memory direction against linear CG on a quadratic."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, n))
    Q = M @ M.T / n + np.eye(n)
    Lc = np.linalg.cholesky(Q)
    y = rng.standard_normal(n)
    # 0.5 ||L^T x - y||^2 has Hessian Q and minimizer solving Q x = L y
    obj = CompositeObjective(Dense(Lc.T), y, LeastSquares())
    ref = textbook_cg(Q, Lc @ y, np.zeros(n), iters)
    iterates = [np.zeros(n)]
    solve_3mg(obj, np.zeros(n), SolverConfig(memory=1, tol=1e-300, max_iters=len(ref) - 1),
              callback=lambda k, x: iterates.append(x.copy()))
    worst = max(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)
                for a, b in zip(iterates[1:], ref[1:]))
    return CheckResult("cg", worst <= 1e-8, len(ref) - 1, worst, 1e-8, time.perf_counter() - t0)


def run_all():
    return [adjoint_suite(), gradient_suite(), majorant_suite(), descent_suite(), cg_suite()]
