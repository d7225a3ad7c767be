import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rollprune.errors import DegenerateGroupError, DomainError
from rollprune.model import (
    Rollout,
    RolloutGroup,
    advantages_from_rewards,
    balance_from_labels,
    balance_stats,
    draw_label,
    draw_labels,
    group_advantages,
    read_jsonl,
    write_jsonl,
)


def make_rollout(i=0, prompt_id=0, label=1, **kw):
    base = dict(id=i, prompt_id=prompt_id, q_star=0.5, label=label, raw_score=0.0,
                total_length=1000)
    base.update(kw)
    return Rollout(**base)


@pytest.mark.parametrize("seed", range(20))
def test_draw_label_degenerate_probabilities(seed):
    assert draw_label(0.0, seed) == 0
    assert draw_label(1.0, seed) == 1


def test_draw_label_empirical_rate():
    y = draw_labels(np.full(1_000_000, 0.7), 123)
    assert abs(y.mean() - 0.7) <= 0.002


def test_draw_label_is_seed_deterministic():
    assert [draw_label(0.4, s) for s in range(50)] == [draw_label(0.4, s) for s in range(50)]


@pytest.mark.parametrize("bad", [-0.1, 1.1, float("nan")])
def test_draw_label_rejects_out_of_range(bad):
    with pytest.raises(DomainError):
        draw_label(bad, 0)


def test_advantages_known_values():
    assert advantages_from_rewards([1, 1, 1, 1]).tolist() == [0, 0, 0, 0]
    np.testing.assert_allclose(advantages_from_rewards([1, 0]), [1, -1])
    std = math.sqrt(0.1875)
    expected = np.array([0.75, -0.25, -0.25, -0.25]) / std
    np.testing.assert_allclose(advantages_from_rewards([1, 0, 0, 0]), expected, atol=1e-12)
    np.testing.assert_allclose(expected, [1.7321, -0.5774, -0.5774, -0.5774], atol=1e-4)


def test_advantages_need_two_survivors():
    with pytest.raises(DegenerateGroupError):
        advantages_from_rewards([1])
    group = RolloutGroup(0, [make_rollout(0), make_rollout(1, pruned=True, generated_length=512)])
    with pytest.raises(DegenerateGroupError):
        group_advantages(group)


@given(st.lists(st.integers(0, 1), min_size=2, max_size=40))
def test_advantages_are_standardised(rewards):
    a = advantages_from_rewards(rewards)
    if len(set(rewards)) == 1:
        assert np.all(a == 0)
    else:
        assert abs(a.mean()) < 1e-9
        assert abs(a.std() - 1.0) < 1e-9


def test_balance_known_values():
    b = balance_from_labels([1, 0, 1, 0])
    assert (b.rho_hat, b.variance_proxy) == (0.5, 0.25)
    assert balance_from_labels([1, 1, 1, 1]).variance_proxy == 0
    b = balance_from_labels([1] * 5 + [0] * 11)
    assert b.rho_hat == 0.3125
    assert b.variance_proxy == 0.21484375


def test_balance_needs_a_survivor():
    with pytest.raises(DegenerateGroupError):
        balance_from_labels([])


@given(st.lists(st.integers(0, 1), min_size=1, max_size=64))
def test_variance_proxy_bounds(labels):
    b = balance_from_labels(labels)
    assert 0 <= b.variance_proxy <= 0.25
    assert (b.variance_proxy == 0.25) == (b.rho_hat == 0.5)


def test_group_uses_survivors_only():
    rs = [make_rollout(0, label=1), make_rollout(1, label=0),
          make_rollout(2, label=1, pruned=True, generated_length=512)]
    g = RolloutGroup(0, rs)
    assert g.group_size == 3
    assert balance_stats(g).rho_hat == 0.5
    np.testing.assert_allclose(group_advantages(g), [1, -1])


def test_group_validation():
    with pytest.raises(DomainError):
        RolloutGroup(0, [make_rollout(0)])
    with pytest.raises(DomainError):
        RolloutGroup(0, [make_rollout(0), make_rollout(1, prompt_id=1)])


@pytest.mark.parametrize("kw", [dict(label=2), dict(q_star=1.5), dict(total_length=0),
                                dict(generated_length=2000)])
def test_rollout_validation(kw):
    with pytest.raises(DomainError):
        make_rollout(**kw)


def test_jsonl_round_trip(tmp_path):
    rs = [make_rollout(i, label=i % 2, raw_score=0.1 * i, survival_prob=None if i else 0.3)
          for i in range(5)]
    path = tmp_path / "r.jsonl"
    write_jsonl(path, rs)
    assert list(read_jsonl(path)) == rs
