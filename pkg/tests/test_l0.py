import itertools
import math

import numpy as np
import pytest

from mmsubspace import ConfigurationError, DimensionError
from mmsubspace.l0 import (MAX_BLOCKS, STEP_SIGNAL, L0Instance, brute_force_min_F0,
                           chain_instance, epi_convergence_table, eval_F0, step_instance)

# best piecewise-constant fit of the built-in signal: one break after sample 4,
# half squared deviation 0.19875, plus one break at lambda = 2
STEP_ORACLE = 2.19875


def diff_blocks(n):
    return [(np.eye(n)[s + 1] - np.eye(n)[s], [0.0]) for s in range(n - 1)]


def three_point(lam):
    return L0Instance(np.eye(3), [0.0, 0.0, 5.0], diff_blocks(3), lam)


def segment_oracle(y, lam):
    """Minimum over all breakpoint sets of a piecewise-constant fit to ``y``."""
    n = len(y)
    best = math.inf
    for breaks in itertools.product([0, 1], repeat=n - 1):
        cuts = [0] + [i + 1 for i, b in enumerate(breaks) if b] + [n]
        cost = lam * sum(breaks)
        for a, b in zip(cuts, cuts[1:]):
            seg = np.asarray(y[a:b])
            cost += 0.5 * float(np.sum((seg - seg.mean()) ** 2))
        best = min(best, cost)
    return best


def test_eval_F0_counts_nonzero_blocks():
    inst = three_point(7.0)
    assert eval_F0(inst, [0.0, 0.0, 5.0]) == pytest.approx(7.0)
    flat = L0Instance(np.eye(3), [2.0, 2.0, 2.0], diff_blocks(3), 7.0)
    assert eval_F0(flat, [2.0, 2.0, 2.0]) == 0.0


def test_eval_F0_indicator_ignores_magnitude():
    inst = L0Instance(np.eye(3), np.zeros(3), diff_blocks(3), 1.0)
    x = np.array([0.0, 0.0, 1.0])
    base = eval_F0(inst, x) - inst.quadratic(x)
    x2 = np.array([0.0, 0.0, 2.0])
    assert eval_F0(inst, x2) - inst.quadratic(x2) == base == 1.0


def test_eval_F0_dimension_error():
    with pytest.raises(DimensionError):
        eval_F0(three_point(1.0), [1.0, 2.0])


@pytest.mark.parametrize("lam,x_star,value", [
    (10.0, [5 / 3, 5 / 3, 5 / 3], 25 / 3),
    (1.0, [0.0, 0.0, 5.0], 1.0),
    (0.0, [0.0, 0.0, 5.0], 0.0),
])
def test_three_point_examples(lam, x_star, value):
    x, v, _ = brute_force_min_F0(three_point(lam))
    np.testing.assert_allclose(x, x_star, atol=1e-12)
    assert v == pytest.approx(value, abs=1e-12)
    assert eval_F0(three_point(lam), x) == pytest.approx(v, abs=1e-12)


def test_active_set_reported():
    _, _, active = brute_force_min_F0(three_point(1.0))
    assert active == (0,)


@pytest.mark.parametrize("seed", range(5))
def test_oracle_agrees_with_segment_enumeration(seed):
    rng = np.random.default_rng(seed)
    y = np.repeat(rng.uniform(0, 10, 3), 2) + 0.3 * rng.standard_normal(6)
    lam = rng.uniform(0.2, 3.0)
    inst = L0Instance(np.eye(6), y, diff_blocks(6), lam)
    assert brute_force_min_F0(inst)[1] == pytest.approx(segment_oracle(y, lam), rel=1e-12)


def test_oracle_beats_random_probes():
    rng = np.random.default_rng(9)
    y = np.array([1.0, 1.2, 4.0, 3.8, 0.5])
    inst = L0Instance(np.eye(5), y, diff_blocks(5), 0.8)
    x_star, value, _ = brute_force_min_F0(inst)
    assert eval_F0(inst, x_star) == pytest.approx(value, abs=1e-12)
    for _ in range(10_000):
        x = y + rng.standard_normal(5) * rng.choice([0.01, 0.3, 2.0])
        if rng.random() < 0.3:  # probes with some exactly equal neighbours
            x = np.repeat(x[rng.integers(0, 5, 1)], 5) if rng.random() < 0.2 else np.round(x, 0)
        assert value <= eval_F0(inst, x) + 1e-12


def test_smoothed_objective_bracketed_by_F0():
    family, inst = step_instance("welsch", 2.0)
    rng = np.random.default_rng(10)
    for _ in range(200):
        x = STEP_SIGNAL + rng.standard_normal(8)
        values = [family(d).value(x) for d in (1.0, 0.5, 0.1, 0.01)]
        assert all(a <= b + 1e-12 for a, b in zip(values, values[1:]))
        assert values[-1] <= eval_F0(inst, x) + 1e-12


def test_step_oracle_value():
    _, inst = step_instance()
    assert inst.S == 7 and inst.N == 8
    x, v, active = brute_force_min_F0(inst)
    assert v == pytest.approx(STEP_ORACLE, abs=1e-12)
    assert len(active) == 6


def test_epi_table_on_step_signal():
    family, inst = step_instance("welsch", 2.0)
    table = epi_convergence_table(family, [2.0 ** -n for n in range(13)], inst)
    assert len(table.rows) == 13
    assert table.nondecreasing
    assert all(r.converged for r in table.rows)
    assert table.oracle_value == pytest.approx(STEP_ORACLE)
    assert table.final_relative_error <= 1e-3
    text = table.format()
    assert "l0 oracle" in text and len(text.splitlines()) == 15


def test_epi_table_constant_signal():
    family, inst = chain_instance(np.full(5, 3.0), "geman_mcclure", 1.0)
    table = epi_convergence_table(family, [1.0, 0.1, 0.01], inst)
    assert table.oracle_value == pytest.approx(0.0, abs=1e-12)
    assert all(abs(r.value) <= 1e-12 for r in table.rows)


def test_epi_table_rejects_bad_sequence():
    family, inst = step_instance()
    with pytest.raises(ConfigurationError):
        epi_convergence_table(family, [1.0, 1.0], inst)
    with pytest.raises(ConfigurationError):
        epi_convergence_table(family, [], inst)


def test_instance_guards():
    with pytest.raises(ConfigurationError):
        L0Instance(np.eye(MAX_BLOCKS + 2), np.zeros(MAX_BLOCKS + 2),
                   diff_blocks(MAX_BLOCKS + 2), 1.0)
    with pytest.raises(DimensionError):
        L0Instance(np.eye(3), np.zeros(2), [], 1.0)


def test_incompatible_constraints_are_skipped():
    # blocks x0 = 0 and x0 = 1 cannot hold together; the enumeration must skip that subset
    blocks = [(np.array([[1.0, 0.0]]), [0.0]), (np.array([[1.0, 0.0]]), [1.0])]
    inst = L0Instance(np.eye(2), [0.5, 0.0], blocks, 1.0)
    x, v, active = brute_force_min_F0(inst)
    assert len(active) == 1
    assert v == pytest.approx(0.125 + 1.0)
