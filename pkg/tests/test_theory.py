import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rollprune.errors import DomainError
from rollprune.theory import (
    PruneInstance,
    best_prune_index,
    check_error_transfer,
    check_near_optimality,
    concentration_term,
    hoeffding_bound,
    hoeffding_tail_check,
    leave_one_out_means,
    lemma1_check,
    pruned_mean,
    random_instance,
    theorem1_batch,
    theorem1_trial,
)


def brute_force_prune_index(values, rho):
    """Exact rational enumeration; first index wins ties."""
    vals = [Fraction(v) for v in values]
    total, n = sum(vals), len(vals)
    target = Fraction(rho)
    best, best_dev = None, None
    for j, v in enumerate(vals):
        dev = abs((total - v) / (n - 1) - target)
        if best_dev is None or dev < best_dev:
            best, best_dev = j, dev
    return best


def test_pruned_mean_values():
    assert pruned_mean([0.5, 0.5, 0.5], 0) == 0.5
    assert pruned_mean([0.9, 0.9, 0.9, 0.1], 0) == pytest.approx(19 / 30)
    assert pruned_mean([0.2, 0.7], 1) == 0.2
    with pytest.raises(IndexError):
        pruned_mean([0.2, 0.7], 2)


def test_corrective_prune_examples():
    rep = lemma1_check(PruneInstance((0.9, 0.9, 0.9, 0.1), (0.9, 0.9, 0.9, 0.1), 0.0))
    assert rep["applicable"] and rep["holds"] and rep["improving_index"] in (0, 1, 2)
    assert rep["deviation_before"] == pytest.approx(0.2)
    assert rep["deviation_after"] == pytest.approx(2 / 15)
    same = (0.3,) * 5
    assert not lemma1_check(PruneInstance(same, same, 0.0))["applicable"]
    on_target = (0.25, 0.75)
    assert not lemma1_check(PruneInstance(on_target, on_target, 0.0))["applicable"]


@given(st.lists(st.floats(0, 1), min_size=2, max_size=16), st.floats(0, 1))
def test_corrective_prune_improves_unless_the_step_overshoots(q, rho):
    rep = lemma1_check(PruneInstance(tuple(q), tuple(q), 0.0, rho))
    if not rep["applicable"]:
        return
    j = rep["improving_index"]
    mu = np.mean(q)
    step = abs(q[j] - mu) / (len(q) - 1)
    # identity mean_{-j} - mean = (mean - q_j)/(G-1)
    assert pruned_mean(q, j) - mu == pytest.approx((mu - q[j]) / (len(q) - 1), abs=1e-12)
    if step < 2 * abs(mu - rho) - 1e-12:
        assert rep["holds"]
        assert rep["deviation_after"] < rep["deviation_before"]
    # if any candidate strictly improves, the smallest step does too
    side = np.array(q) > mu if mu > rho else np.array(q) < mu
    others = [abs(pruned_mean(q, k) - rho) for k in np.flatnonzero(side)]
    if min(others) < rep["deviation_before"] - 1e-12:
        assert rep["holds"]


def test_corrective_prune_overshoot_is_reported_not_raised():
    rep = lemma1_check(PruneInstance((0.0, 1.0), (0.0, 1.0), 0.0, 0.25))
    assert rep["applicable"] and not rep["holds"]
    assert rep["deviation_after"] == rep["deviation_before"] == 0.25


def test_best_prune_index_examples():
    assert best_prune_index([0.9, 0.9, 0.9, 0.1], 0.5) == 0
    assert best_prune_index([0.3, 0.7], 0.5) == 0
    assert best_prune_index([0.5] * 7, 0.5) == 0


@given(st.lists(st.integers(0, 64), min_size=2, max_size=16), st.integers(0, 16))
def test_best_prune_index_matches_enumeration_on_ties(grid, rho16):
    # dyadic values and targets make exact ties common
    values = [g / 64 for g in grid]
    rho = rho16 / 16
    assert best_prune_index(values, rho) == brute_force_prune_index(values, rho)


def test_instance_enforces_accuracy_bound():
    with pytest.raises(DomainError):
        PruneInstance((0.5, 0.5), (0.5, 0.7), 0.1)
    with pytest.raises(DomainError):
        PruneInstance((0.5,), (0.5,), 0.1)


def test_concentration_and_bound_values():
    assert concentration_term(17, 0.05) == pytest.approx(math.sqrt(math.log(40) / 32))
    assert concentration_term(17, 0.05) == pytest.approx(0.339525, abs=1e-6)
    assert hoeffding_bound(17, 0.0) == 2.0
    assert hoeffding_bound(17, concentration_term(17, 0.05)) == pytest.approx(0.05)
    assert hoeffding_bound(17, 0.33949) == pytest.approx(0.05, abs=1e-4)
    assert hoeffding_bound(9, 0.5) == pytest.approx(2 * math.exp(-4))
    assert hoeffding_bound(9, 0.5) == pytest.approx(0.03663, abs=1e-5)


def test_theorem1_trial_structure():
    inst = PruneInstance((0.5,) * 40, (0.5,) * 40, 0.0)
    row = theorem1_trial(inst, 0.05, 3)
    assert row["rhs"] == pytest.approx(concentration_term(40, 0.05))
    with pytest.raises(DomainError):
        theorem1_trial(inst, 1.0, 3)


@given(st.integers(2, 16), st.floats(0, 0.2), st.floats(0, 1), st.integers(0, 2**32 - 1))
def test_error_transfer_and_near_optimality(G, eps, rho, seed):
    inst = random_instance(G, eps, rho, seed)
    assert check_error_transfer(inst) <= eps + 1e-12
    got, bound = check_near_optimality(inst)
    assert got <= bound + 1e-12


def test_leave_one_out_means_oracle():
    v = np.array([0.1, 0.4, 0.9])
    np.testing.assert_allclose(leave_one_out_means(v), [0.65, 0.5, 0.25])


def test_theorem1_small_batch_deterministic():
    a = theorem1_batch(9, 0.05, 0.05, 300, rng_seed=1)
    b = theorem1_batch(9, 0.05, 0.05, 300, rng_seed=1)
    assert a == b
    assert sum(not r["holds"] for r in a) / len(a) <= 0.05


def test_hoeffding_tail_check_rows():
    rows = hoeffding_tail_check(9, np.full(9, 0.5), [0.0, 0.25], 2000, rng_seed=4)
    assert rows[0]["empirical"] == 1.0 and rows[0]["holds"]
    assert all(r["holds"] for r in rows)
    with pytest.raises(DomainError):
        hoeffding_tail_check(9, np.full(9, 0.5), [0.1], 999)
