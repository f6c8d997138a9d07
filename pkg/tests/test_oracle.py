"""Brute-force oracle: the reference every solver is judged against.

These tests pin the oracle itself to hand closed forms and to its own
internal consistency checks (history reduction, Markov separability), so
the solver comparisons elsewhere rest on a verified reference.
"""

import math
from fractions import Fraction

import pytest

from divbands.errors import TooLarge, UndefinedAction
from divbands.model import Utility
from divbands.oracle import (
    exact_optimal,
    exact_policy_value,
    exact_probabilities,
    markov_optimum,
)
from helpers import DOWN_ONE, make_config, two_point

TINY_EXP = make_config("exponential", {1: 0.7, -1: 0.3}, 0.5, -1.0, 3, 3)
TINY_POWER = make_config("power", {1: 0.5, -1: 0.5}, 0.5, 0.5, 4, 3)

# frozen 2026-08-16 from exact_optimal(TINY_POWER, x0=1, horizon=3);
# exact rational tree, longdouble leaves
FROZEN_POWER_X1_H3 = 1.136905131730971


def test_probabilities_are_exact_rationals():
    cfg = make_config("exponential", {1: 0.1, 2: 0.2, -1: 0.7}, 0.5, -1.0, 3, 2)
    probs = exact_probabilities(cfg.dist)
    assert sum(probs.values()) == Fraction(1)
    assert all(q > 0 for q in probs.values())


def test_certain_loss_forces_pay_all_exp():
    cfg = make_config("exponential", DOWN_ONE, 0.5, -1.0, 4, 3)
    val, tree = exact_optimal(cfg, 2, 3)
    assert val == pytest.approx(math.exp(-2.0), rel=1e-14)
    assert tree.action(0, 2, Fraction(0)) == 2


def test_one_step_horizon_pays_everything():
    val, tree = exact_optimal(TINY_EXP, 3, 1)
    assert val == pytest.approx(math.exp(-3.0), rel=1e-14)
    assert tree.action(0, 3, Fraction(0)) == 3


def test_frozen_power_value():
    val, _ = exact_optimal(TINY_POWER, 1, 3)
    assert val == pytest.approx(FROZEN_POWER_X1_H3, rel=1e-13)


def test_history_reduction_power():
    # identical optima whether states are keyed by (k, x, s) or by history
    lean, _ = exact_optimal(TINY_POWER, 2, 3, memoize=True)
    full, _ = exact_optimal(TINY_POWER, 2, 3, memoize=False)
    assert lean == full


def test_markov_rules_suffice_for_exp():
    val_all, _ = exact_optimal(TINY_EXP, 2, 2)
    val_markov = markov_optimum(TINY_EXP, 2, 2)
    assert val_all == val_markov


def test_node_guard_trips():
    with pytest.raises(TooLarge):
        exact_optimal(TINY_EXP, 3, 3, node_guard=10)


def test_policy_value_brackets_optimum():
    pay_all = lambda k, x, s: x
    opt, _ = exact_optimal(TINY_EXP, 2, 3)
    val = exact_policy_value(TINY_EXP, pay_all, 2, 3)
    assert val >= opt - 1e-18  # exp objective is minimized

    opt_p, _ = exact_optimal(TINY_POWER, 2, 3)
    val_p = exact_policy_value(TINY_POWER, pay_all, 2, 3)
    assert val_p <= opt_p + 1e-18  # power objective is maximized


def test_policy_value_of_optimal_tree_is_optimal():
    opt, tree = exact_optimal(TINY_POWER, 2, 3)
    assert exact_policy_value(TINY_POWER, tree, 2, 3) == pytest.approx(opt, rel=1e-15)


def test_policy_value_rejects_illegal_action():
    with pytest.raises(UndefinedAction):
        exact_policy_value(TINY_EXP, lambda k, x, s: x + 1, 2, 2)


def test_tree_lookup_and_dump():
    _, tree = exact_optimal(TINY_EXP, 2, 2)
    with pytest.raises(UndefinedAction):
        tree.action(0, 999, Fraction(0))
    dump = tree.dump(max_depth=1)
    assert dump  # depth-limited dump stays nonempty and bounded
    assert tree.horizon == 2


def test_oracle_y0_shifts_power_wealth():
    base, _ = exact_optimal(TINY_POWER, 0, 1, y0=4.0)
    # x0=0 with one stage: no payout possible, wealth stays y0
    assert base == pytest.approx(2.0, rel=1e-15)


def test_certain_loss_power_closed_form():
    cfg = make_config("power", DOWN_ONE, 0.9, 0.5, 4, 3)
    val, tree = exact_optimal(cfg, 4, 3)
    assert val == pytest.approx(2.0, rel=1e-14)  # pay 4 now, sqrt(4)
    assert tree.action(0, 4, Fraction(0)) == 4


def test_two_point_family_monotone_in_horizon():
    cfg = make_config("exponential", two_point(0.6, 1), 0.5, -0.5, 4, 5)
    vals = [exact_optimal(cfg, 3, h)[0] for h in (1, 2, 3, 4)]
    # extra stages can only lower the minimized objective
    for a, b in zip(vals, vals[1:]):
        assert b <= a + 1e-15
