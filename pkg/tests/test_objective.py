import math

import numpy as np
import pytest

from mmsubspace import (CompositeObjective, ConfigurationError, DimensionError, PenaltyGroup,
                        Potential, UnsupportedOperation)
from mmsubspace.checks import fd_gradient, majorant_gap, small_objectives
from mmsubspace.fidelities import LeastSquares
from mmsubspace.operators import Dense, Identity, Stack
from mmsubspace.problems import build_denoise, make_phantom

SMALL = small_objectives(size=3, seed=11)


def bare_quadratic(n=4):
    return CompositeObjective(Identity(n), np.zeros(n), LeastSquares())


def welsch_pair():
    group = PenaltyGroup(Dense([[1.0, -1.0]]), Potential("welsch", 1.0, 1.0))
    return CompositeObjective(Identity(2), [0.0, 1.0], LeastSquares(), [group])


def dense_A(obj, anchor):
    """Assemble the curvature matrix from dense operator copies."""
    Hd = obj.H.to_dense()
    A = obj.mu * Hd.T @ Hd + 2 * obj.tau ** 2 * np.eye(obj.N)
    for g in obj.groups:
        V = g.V.to_dense()
        r = V @ anchor - (0 if g.c is None else g.c)
        norms = np.linalg.norm(r.reshape(g.group_size, -1), axis=0)
        b = np.tile(g.potential.omega(norms), g.group_size)
        A += V.T @ (b[:, None] * V)
    return A


def test_bare_quadratic_value_and_gradient():
    obj = bare_quadratic()
    x = np.array([1.0, -2.0, 3.0, 0.5])
    assert obj.value(x) == pytest.approx(0.5 * x @ x)
    np.testing.assert_allclose(obj.grad(x), x)
    np.testing.assert_allclose(obj.apply_A(x, x), x)


def test_hand_evaluated_welsch_instance():
    assert welsch_pair().value([0.0, 1.0]) == pytest.approx(0.3934693402873666, abs=1e-15)


def test_denoise_value_at_noisy_is_penalty_only():
    rng = np.random.default_rng(0)
    img = make_phantom("blocks2d", 6, 5)
    img = type(img)(6, 5, np.clip(img.pixels + rng.normal(0, 10, 30), 0, 255))
    obj = build_denoise(img, "welsch", 10.0, 5.0)
    penalty = sum(float(np.sum(g.potential.psi(g.norms(g.residual(img.pixels)))))
                  for g in obj.groups)
    assert obj.value(img.pixels) == pytest.approx(penalty, rel=1e-14)


def test_zero_residual_block_gives_finite_zero_gradient():
    group = PenaltyGroup(Dense([[1.0, -1.0]]), Potential("sc_hyperbolic", 1.0, 1.0))
    obj = CompositeObjective(Identity(2), [2.0, 2.0], LeastSquares(), [group])
    g = obj.grad([2.0, 2.0])
    assert np.all(np.isfinite(g))
    np.testing.assert_array_equal(g, 0.0)


@pytest.mark.parametrize("label,obj,x", small_objectives(size=4, seed=2),
                         ids=[c[0] for c in small_objectives(size=4, seed=2)])
def test_gradient_matches_finite_differences(label, obj, x):
    g = obj.grad(x)
    fd = fd_gradient(obj.value, x)
    assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(g)


def test_majorant_weights_layout():
    obj = welsch_pair()
    np.testing.assert_allclose(obj.majorant_weights([0.0, 0.0]), [1.0])
    np.testing.assert_allclose(obj.majorant_weights([0.0, math.sqrt(2)]), [math.exp(-1)])
    V = Stack([Identity(2), Identity(2)])
    group = PenaltyGroup(V, Potential("welsch", 1.0, 1.0), 2)
    obj2 = CompositeObjective(Identity(2), [0.0, 0.0], LeastSquares(), [group])
    # blocks (x0, x0) and (x1, x1) have norms sqrt(2)|x_i|; each weight repeats P = 2 times
    w = obj2.majorant_weights([1.0, 0.0])
    np.testing.assert_allclose(w, [math.exp(-1), math.exp(-1), 1.0, 1.0])


def test_majorant_weights_below_omega_bar():
    rng = np.random.default_rng(3)
    for _, obj, x in SMALL:
        bars = np.concatenate([np.full(g.V.out_dim, g.potential.omega_bar()) for g in obj.groups])
        for _ in range(50):
            w = obj.majorant_weights(x + 50 * rng.standard_normal(obj.N))
            assert np.all(w >= 0) and np.all(w <= bars * (1 + 1e-12))


@pytest.mark.parametrize("label,obj,x", SMALL, ids=[c[0] for c in SMALL])
def test_apply_A_matches_dense_assembly(label, obj, x):
    A = dense_A(obj, x)
    rng = np.random.default_rng(4)
    for _ in range(5):
        v = rng.standard_normal(obj.N)
        Av = obj.apply_A(x, v)
        np.testing.assert_allclose(Av, A @ v, atol=1e-12 * max(1.0, np.abs(A).max()))
        assert v @ Av >= -1e-12


@pytest.mark.parametrize("label,obj,x", SMALL, ids=[c[0] for c in SMALL])
def test_build_B_symmetric_and_consistent(label, obj, x):
    rng = np.random.default_rng(5)
    D = rng.standard_normal((obj.N, 3))
    D[:, 1] = 0.0
    B = obj.build_B(x, D)
    assert np.max(np.abs(B - B.T)) <= 1e-12 * max(1.0, np.abs(B).max())
    np.testing.assert_array_equal(B[1], 0.0)
    ref = D.T @ dense_A(obj, x) @ D
    np.testing.assert_allclose(B, ref, atol=1e-10 * max(1.0, np.abs(ref).max()))
    v = D[:, :1]
    assert obj.build_B(x, v)[0, 0] == pytest.approx(v[:, 0] @ obj.apply_A(x, v[:, 0]))


def test_build_B_errors():
    obj = bare_quadratic()
    with pytest.raises(DimensionError):
        obj.build_B(np.zeros(4), np.zeros((4, 0)))
    with pytest.raises(DimensionError):
        obj.build_B(np.zeros(4), np.zeros((3, 2)))


@pytest.mark.parametrize("label,obj,x", SMALL, ids=[c[0] for c in SMALL])
def test_majorant_touches_and_dominates(label, obj, x):
    rng = np.random.default_rng(6)
    for m in (1, 2, 3):
        D = rng.standard_normal((obj.N, m))
        ua = rng.standard_normal(m)
        assert abs(majorant_gap(obj, x, D, ua, ua)) <= 1e-12 * max(1.0, abs(obj.value(x)))
        for _ in range(10):
            u = ua + rng.standard_normal(m) * rng.choice([0.1, 1.0, 10.0])
            assert majorant_gap(obj, x, D, ua, u) >= -1e-9


@pytest.mark.parametrize("label,obj,x", SMALL, ids=[c[0] for c in SMALL])
def test_curvature_bounds_bracket_A(label, obj, x):
    cb = obj.curvature_bounds()
    rng = np.random.default_rng(7)
    for _ in range(5):
        anchor = x + 30 * rng.standard_normal(obj.N)
        eig = np.linalg.eigvalsh(dense_A(obj, anchor))
        assert eig[0] >= cb.eta - 1e-9 * cb.nu
        assert eig[-1] <= cb.nu * (1 + 1e-12)


def test_wellposedness():
    tau_obj = CompositeObjective(Identity(3), np.zeros(3), LeastSquares(), tau=1e-10)
    assert tau_obj.check_wellposed().ok
    stacked = CompositeObjective(Stack([Identity(3), Identity(3)]), np.zeros(6), LeastSquares())
    assert stacked.check_wellposed().ok
    zero = CompositeObjective(Dense(np.zeros((1, 3))), np.zeros(1), LeastSquares())
    assert not zero.check_wellposed().ok


def test_wellposedness_refuses_huge_dense_check():
    obj = CompositeObjective(Identity(5000), np.zeros(5000), LeastSquares())
    with pytest.raises(ConfigurationError, match="too large"):
        obj.check_wellposed()


def test_mu_below_lipschitz_rejected():
    with pytest.raises(ConfigurationError):
        CompositeObjective(Identity(2), np.zeros(2), LeastSquares(2.0), mu=1.0)


def test_dimension_errors():
    with pytest.raises(DimensionError):
        CompositeObjective(Identity(2), np.zeros(3), LeastSquares())
    with pytest.raises(DimensionError):
        bare_quadratic().value(np.zeros(3))


def test_nondifferentiable_potential_rejected_for_gradient():
    group = PenaltyGroup(Identity(2), Potential("truncated_quadratic", 1.0, 1.0))
    obj = CompositeObjective(Identity(2), np.zeros(2), LeastSquares(), [group])
    assert obj.value([1.0, 0.0]) == pytest.approx(0.5 + 0.5)
    with pytest.raises(UnsupportedOperation):
        obj.grad([1.0, 0.0])
