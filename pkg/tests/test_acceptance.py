"""Acceptance criteria, one test per criterion.

Every test records a one-line PASS/FAIL summary that is printed at the end
of the pytest run (see ``conftest.py``). Running this file directly prints
the same lines without pytest.
"""

import functools
import io
import itertools
import time

import numpy as np

from mmsubspace import CompositeObjective, ImageGrid, Potential, SolverConfig, solve, solve_3mg
from mmsubspace.cli import run_cli
from mmsubspace.fidelities import (BoxDistanceSq, Cauchy, Huber, L2L1, LeastSquares, SmoothedMax,
                                   WeightedBlocks)
from mmsubspace.l0 import brute_force_min_F0, epi_convergence_table, step_instance
from mmsubspace.operators import (Dense, Difference, Identity, Radon, RowBlock, Scaled, Stack,
                                  UniformBlur)
from mmsubspace.problems import (ExperimentSpec, build_deblur, build_denoise, build_experiment,
                                 build_segment, build_tomo, make_phantom)
from mmsubspace.solvers import build_directions, mm_step

SNC = ("geman_mcclure", "welsch", "tanh_pot", "tukey")
ALL_SMOOTH = ("sc_hyperbolic",) + SNC
KINDS = ("denoise", "segment", "deblur", "tomo")

RESULTS = {}


def record(number, title, passed, detail, seconds):
    line = (f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail} "
            f"[{seconds:.2f}s]")
    RESULTS[number] = line
    print(line)
    return passed


# ---------------------------------------------------------------- oracles


def fd_grad(f, x, rel=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        h = rel * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def textbook_cg(Q, b, iters):
    x = np.zeros(b.size)
    r = b.copy()
    p = r.copy()
    out = []
    for _ in range(iters):
        rr = r @ r
        Qp = Q @ p
        a = rr / (p @ Qp)
        x = x + a * p
        r = r - a * Qp
        p = r + (r @ r) / rr * p
        out.append(x.copy())
    return out


def columns_of(fn, n):
    return np.column_stack([fn(e) for e in np.eye(n)])


def every_operator():
    rng = np.random.default_rng(0)
    out = []
    for w, h in ((16, 16), (7, 5), (1, 9)):
        n = w * h
        out += [Identity(n), Identity(n, -1.7), Dense(rng.standard_normal((11, n)))]
        out += [Difference(k, w, h) for k in Difference.KINDS]
        out += [UniformBlur(w, h, 3), UniformBlur(w, h, 5), Radon(w, h, 7), Radon(w, h, 1, w)]
        out += [Scaled(Difference("diff2_hv", w, h), np.sqrt(2)),
                Stack([UniformBlur(w, h, 3), Identity(n)]),
                RowBlock(Difference("diff_h", w, h), 1, n - 1)]
    return out


def eight_by_eight(builder, kind, seed=0):
    rng = np.random.default_rng(seed)
    truth = make_phantom("blocks2d", 8, 8)
    noisy = ImageGrid(8, 8, truth.pixels + 20 * rng.standard_normal(64))
    if builder == "denoise":
        obj = build_denoise(noisy, kind, 30.0, 15.0)
    elif builder == "segment":
        obj = build_segment(noisy, kind, 30.0, 15.0)
    elif builder == "deblur":
        obj = build_deblur(noisy, kind, 30.0, 15.0, 2.0, 0.5)
    else:
        R = Radon(8, 8, 6)
        obj = build_tomo(R.apply(noisy.pixels), R, 30.0, 15.0, 2.0, pot_kind=kind)
    return obj, truth.pixels + 40 * rng.standard_normal(64)


def standalone_fidelities(seed=1):
    rng = np.random.default_rng(seed)
    q, n = 12, 10
    M = rng.standard_normal((q, q))
    fids = [LeastSquares(M @ M.T / q), L2L1(rng.uniform(0.5, 2, q)),
            Huber(rng.uniform(0.5, 2, q), 0.7), Cauchy(rng.uniform(0.5, 2, q)),
            BoxDistanceSq(-0.5, 0.5), SmoothedMax(0.7),
            WeightedBlocks([(6, 0.5, L2L1(1.0)), (6, 2.0, BoxDistanceSq(-1, 1))])]
    H = Dense(rng.standard_normal((q, n)))
    y = rng.standard_normal(q)
    return [(CompositeObjective(H, y, f), 2 * rng.standard_normal(n)) for f in fids]


def tiny_instances():
    """3x3 versions of every builder and smooth potential (N = 9)."""
    rng = np.random.default_rng(5)
    truth = make_phantom("blocks2d", 3, 3, levels=[30, 200, 120])
    out = []
    for kind in ALL_SMOOTH:
        img = ImageGrid(3, 3, truth.pixels + 20 * rng.standard_normal(9))
        R = Radon(3, 3, 4)
        out += [build_denoise(img, kind, 30.0, 15.0), build_segment(img, kind, 30.0, 15.0),
                build_deblur(img, kind, 30.0, 15.0, 2.0, 0.5),
                build_tomo(R.apply(img.pixels), R, 30.0, 15.0, 2.0, pot_kind=kind)]
    return out


@functools.lru_cache(maxsize=None)
def desk_run(kind, potential):
    obj = build_experiment(ExperimentSpec(kind=kind, potential=potential)).objective
    t0 = time.perf_counter()
    res = solve_3mg(obj)
    return obj, res, time.perf_counter() - t0


# ---------------------------------------------------------------- criteria


def criterion_1():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_adj = worst_dense = 0.0
    kinds = set()
    for op in every_operator():
        kinds.add(getattr(op, "kind", type(op).__name__))
        for _ in range(100):
            v, w = rng.standard_normal(op.in_dim), rng.standard_normal(op.out_dim)
            a, b = op.apply(v) @ w, v @ op.adjoint_apply(w)
            worst_adj = max(worst_adj, abs(a - b) / max(abs(a), abs(b), 1e-300))
        M = columns_of(op.apply, op.in_dim)
        Mt = columns_of(op.adjoint_apply, op.out_dim)
        scale = max(np.abs(M).max(), 1e-300)
        worst_dense = max(worst_dense, np.abs(M - Mt.T).max() / scale)
        for _ in range(3):
            v = rng.standard_normal(op.in_dim)
            worst_dense = max(worst_dense, np.abs(op.apply(v) - M @ v).max()
                              / (scale * np.abs(v).sum()))
    dt = time.perf_counter() - t0
    ok = worst_adj <= 1e-10 and worst_dense <= 1e-12 and dt < 5
    return record(1, "adjoint suite", ok,
                  f"{len(kinds)} kinds, worst adjoint {worst_adj:.1e} (<=1e-10), "
                  f"dense {worst_dense:.1e} (<=1e-12)", dt)


def criterion_2():
    t0 = time.perf_counter()
    cases = [eight_by_eight(b, k, s) for s, (b, k) in enumerate(itertools.product(KINDS, ALL_SMOOTH))]
    cases += standalone_fidelities()
    worst = 0.0
    for obj, x in cases:
        g = obj.grad(x)
        worst = max(worst, np.linalg.norm(g - fd_grad(obj.value, x)) / np.linalg.norm(g))
    dt = time.perf_counter() - t0
    return record(2, "gradient suite", worst <= 1e-5 and dt < 20,
                  f"{len(cases)} instances, worst relative error {worst:.1e} (<=1e-5)", dt)


def criterion_3():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    cases = [eight_by_eight(b, k, 10 + s)
             for s, (b, k) in enumerate(itertools.product(KINDS, ALL_SMOOTH))]
    cases += standalone_fidelities(seed=4)
    worst_dom, worst_touch = 0.0, 0.0
    triples = 1200
    for i in range(triples):
        obj, x = cases[i % len(cases)]
        m = 1 + i % 3
        D = rng.standard_normal((obj.N, m)) * rng.choice([0.1, 1.0, 10.0])
        ua = rng.standard_normal(m)
        u = ua + rng.standard_normal(m) * rng.choice([0.01, 0.1, 1.0, 10.0])
        xa = x + D @ ua
        fa, ga = obj.value(xa), D.T @ obj.grad(xa)
        B = obj.build_B(xa, D)

        def q(v):
            return fa + ga @ (v - ua) + 0.5 * (v - ua) @ B @ (v - ua)

        worst_dom = max(worst_dom, obj.value(x + D @ u) - q(u))
        worst_touch = max(worst_touch, abs(q(ua) - obj.value(x + D @ ua)))
    dt = time.perf_counter() - t0
    ok = worst_dom <= 1e-9 and worst_touch <= 1e-12
    return record(3, "majorant domination", ok,
                  f"{triples} triples, worst f - q {worst_dom:.1e} (<=1e-9), "
                  f"|q(u',u') - f(u')| {worst_touch:.1e} (<=1e-12)", dt)


def criterion_4():
    t0 = time.perf_counter()
    worst_dec = worst_len = -np.inf
    steps = 0
    for obj in tiny_instances():
        Hd = obj.H.to_dense()
        eta = np.linalg.eigvalsh(obj.mu * Hd.T @ Hd + 2 * obj.tau ** 2 * np.eye(obj.N))[0]
        eta = max(eta, 0.0)
        hist = [np.zeros(obj.N)]
        for _ in range(10000):
            g = obj.grad(hist[0])
            if np.linalg.norm(g) / np.sqrt(obj.N) < 1e-4:
                break
            inner = []
            x_next, _ = mm_step(obj, hist[0], build_directions(g, hist, 1), 2, inner_trace=inner)
            for a, b in zip(inner, inner[1:]):
                d = np.linalg.norm(b - a)
                worst_dec = max(worst_dec, 0.5 * eta * d * d - (obj.value(a) - obj.value(b)))
                worst_len = max(worst_len, eta * d - np.linalg.norm(obj.grad(a)))
                steps += 1
            hist = [x_next, hist[0]]
    worst_rise = -np.inf
    runs = 0
    for kind, pot in itertools.product(KINDS, ALL_SMOOTH):
        _, res, _ = desk_run(kind, pot)
        worst_rise = max(worst_rise, float(np.max(np.diff(res.trace.objective))))
        runs += 1
    dt = time.perf_counter() - t0
    ok = worst_dec <= 1e-9 and worst_len <= 1e-9 and worst_rise <= 1e-12
    return record(4, "descent and step inequalities", ok,
                  f"{steps} inner steps, worst decrease gap {worst_dec:.1e}, length gap "
                  f"{worst_len:.1e} (<=1e-9); {runs} desk runs, largest rise "
                  f"{worst_rise:.1e} (<=1e-12)", dt)


def criterion_5():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    n = 50
    M = rng.standard_normal((n, n))
    Q = M @ M.T / n + np.eye(n)
    L = np.linalg.cholesky(Q)
    y = rng.standard_normal(n)
    obj = CompositeObjective(Dense(L.T), y, LeastSquares())
    ref = textbook_cg(Q, L @ y, 20)
    its = []
    solve_3mg(obj, np.zeros(n), SolverConfig(memory=1, inner_iters=1, tol=1e-300, max_iters=20),
              callback=lambda k, x: its.append(x.copy()))
    worst = max(np.linalg.norm(a - b) / np.linalg.norm(b) for a, b in zip(its, ref))
    dt = time.perf_counter() - t0
    ok = len(its) == 20 and worst <= 1e-8 and dt < 1
    return record(5, "CG equivalence", ok, f"20 iterations, worst relative gap {worst:.1e} "
                  f"(<=1e-8)", dt)


def criterion_6():
    t0 = time.perf_counter()
    bad = []
    slowest = 0.0
    most = 0
    for kind, pot in itertools.product(KINDS, ALL_SMOOTH):
        obj, res, secs = desk_run(kind, pot)
        gnorm = np.linalg.norm(obj.grad(res.x)) / np.sqrt(obj.N)
        slowest, most = max(slowest, secs), max(most, res.iterations)
        if not (gnorm < 1e-4 and res.iterations <= 10000 and secs < 10):
            bad.append(f"{kind}/{pot}")
    dt = time.perf_counter() - t0
    return record(6, "stationarity on desk runs", not bad,
                  f"20 runs, max {most} iterations, slowest {slowest:.2f}s (<10s)"
                  + (f", failing: {', '.join(bad)}" if bad else ""), dt)


def criterion_7():
    t0 = time.perf_counter()
    family, inst = step_instance("welsch")
    assert inst.N == 8 and inst.S == 7
    table = epi_convergence_table(family, [2.0 ** -n for n in range(13)], inst)
    values = [r.value for r in table.rows]
    rises = all(b >= a - 1e-9 for a, b in zip(values, values[1:]))
    oracle = brute_force_min_F0(inst)[1]
    gap = abs(values[-1] - oracle) / abs(oracle)
    dt = time.perf_counter() - t0
    ok = rises and gap <= 1e-3 and abs(oracle - 2.19875) <= 1e-12 and dt < 5
    return record(7, "epi-convergence", ok,
                  f"13 rows nondecreasing={rises}, last {values[-1]:.9f} vs oracle "
                  f"{oracle:.9f}, relative gap {gap:.1e} (<=1e-3)", dt)


def criterion_8():
    t0 = time.perf_counter()
    summary, ok = [], True
    for pot in SNC:
        obj = build_experiment(ExperimentSpec(kind="denoise", potential=pot, width=64,
                                              height=64)).objective
        counts = []
        for m in range(6):
            res = solve_3mg(obj, None, SolverConfig(memory=m))
            ok = ok and res.converged
            counts.append(res.iterations)
        ratio = max(counts[1:]) / min(counts[1:])
        ok = ok and counts[1] < counts[0] and ratio <= 1.5
        summary.append(f"{pot} {counts} ratio {ratio:.2f}")
    dt = time.perf_counter() - t0
    ok = ok and dt < 60
    return record(8, "memory sweep trend", ok, "; ".join(summary), dt)


def criterion_9():
    t0 = time.perf_counter()
    worst = 0.0
    for kind in KINDS:
        obj, ref, _ = desk_run(kind, "sc_hyperbolic")
        for name in ("nlcg_prp+", "nlcg_hs", "nlcg_ls", "lbfgs"):
            res = solve(name, obj)
            worst = max(worst, abs(res.objective - ref.objective) / abs(ref.objective))
    dt = time.perf_counter() - t0
    return record(9, "baseline agreement", worst <= 1e-3,
                  f"16 runs, worst relative gap to 3MG {worst:.1e} (<=1e-3)", dt)


def criterion_10():
    t0 = time.perf_counter()
    ok = True
    lam = 7.0
    lows = []
    for kind in SNC:
        v = float(Potential(kind, lam, 1e-3).psi(2.0))
        lows.append(v / lam)
        ok = ok and v >= 0.999 * lam
        ok = ok and all(Potential(kind, lam, d).psi(0.0) == 0.0
                        for d in (10.0, 1.0, 1e-1, 1e-2, 1e-3, 1e-6))
    dt = time.perf_counter() - t0
    return record(10, "l0 pointwise limit", ok,
                  f"min psi(2)/lambda at delta=1e-3 is {min(lows):.6f} (>=0.999)", dt)


def criterion_11(tmp_dir):
    t0 = time.perf_counter()
    same = True
    for command in ("denoise", "reconstruct"):
        blobs = []
        for i in range(2):
            trace = tmp_dir / f"{command}{i}.csv"
            image = tmp_dir / f"{command}{i}.pgm"
            code = run_cli([command, "--pot", "welsch", "--seed", "11", "--no-timing",
                            "--trace", str(trace), "--out", str(image)], out=io.StringIO())
            same = same and code == 0
            blobs.append((trace.read_bytes(), image.read_bytes()))
        same = same and blobs[0] == blobs[1]
    dt = time.perf_counter() - t0
    return record(11, "reproducibility", same,
                  "two consecutive CLI runs (denoise, reconstruct) give identical trace CSV "
                  "and image bytes", dt)


# ---------------------------------------------------------------- pytest entry points


def test_criterion_01_adjoint_suite():
    assert criterion_1()


def test_criterion_02_gradient_suite():
    assert criterion_2()


def test_criterion_03_majorant_domination():
    assert criterion_3()


def test_criterion_04_descent_and_step_inequalities():
    assert criterion_4()


def test_criterion_05_cg_equivalence():
    assert criterion_5()


def test_criterion_06_stationarity():
    assert criterion_6()


def test_criterion_07_epi_convergence():
    assert criterion_7()


def test_criterion_08_memory_sweep():
    assert criterion_8()


def test_criterion_09_baseline_agreement():
    assert criterion_9()


def test_criterion_10_l0_pointwise_limit():
    assert criterion_10()


def test_criterion_11_reproducibility(tmp_path):
    assert criterion_11(tmp_path)


if __name__ == "__main__":
    import pathlib
    import tempfile

    with tempfile.TemporaryDirectory() as d:
        outcomes = [criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5(),
                    criterion_6(), criterion_7(), criterion_8(), criterion_9(), criterion_10(),
                    criterion_11(pathlib.Path(d))]
    raise SystemExit(0 if all(outcomes) else 1)
