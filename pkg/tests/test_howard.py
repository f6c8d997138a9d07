"""Policy iteration: convergence to the value-iteration rule, gates, brackets."""

import math

import numpy as np
import pytest

from divbands.errors import (
    IllegalAction,
    InadmissiblePolicy,
    MaxIterations,
    ValidationError,
)
from divbands.exp_solver import solve_exp
from divbands.howard import howard_solve, improve, pay_all_rule, policy_value_exp
from divbands.oracle import exact_policy_value
from helpers import DOWN_ONE, make_config, sized_exp_config, two_point

# pay-all is not optimal here, so the iteration has real work to do
CLAIM = sized_exp_config(two_point(0.6, 1), 0.9, -1.0)


@pytest.fixture(scope="module")
def converged():
    return howard_solve(CLAIM)


def test_matches_value_iteration(converged):
    vi_table, vi_policy = solve_exp(CLAIM)
    assert converged.iterations >= 2
    assert np.array_equal(converged.policy.action, vi_policy.action)
    assert np.array_equal(converged.policy.xi, vi_policy.xi)
    # both brackets contain the same optimal values, so they overlap and
    # their hi channels differ by at most the two widths combined
    h_lo, h_hi = converged.table.lo[:, 1:], converged.table.hi[:, 1:]
    v_lo, v_hi = vi_table.lo[:, 1:], vi_table.hi[:, 1:]
    assert np.all(h_lo <= v_hi + 1e-12)
    assert np.all(v_lo <= h_hi + 1e-12)
    combined = (h_hi - h_lo) + (v_hi - v_lo)
    assert np.all(np.abs(h_hi - v_hi) <= combined + 1e-12)


def test_history_is_nonincreasing(converged):
    hist = converged.history
    assert len(hist) == converged.iterations
    assert np.all(hist[-1].j_hi <= hist[0].j_hi + 1e-9)
    assert math.isfinite(converged.final_gap)
    assert converged.final_gap >= 0.0


def test_converged_rule_is_a_fixed_point(converged):
    rule = converged.policy.action
    improved = improve(CLAIM, policy_value_exp(CLAIM, rule))
    assert np.array_equal(improved, rule)


def test_certain_loss_starts_optimal():
    cfg = make_config("exponential", DOWN_ONE, 0.5, -1.0, 4, 4)
    result = howard_solve(cfg)
    assert result.iterations <= 2
    assert np.array_equal(result.policy.action, pay_all_rule(cfg))
    assert result.final_gap <= 1e-15


def test_zero_rule_is_inadmissible():
    cfg = make_config("exponential", DOWN_ONE, 0.5, -1.0, 4, 3)
    holds = np.zeros((cfg.depth, cfg.x_max + 1), dtype=np.int64)
    with pytest.raises(InadmissiblePolicy):
        policy_value_exp(cfg, holds)


def test_overpaying_rule_is_rejected():
    cfg = make_config("exponential", {1: 0.7, -1: 0.3}, 0.5, -1.0, 3, 3)
    rule = pay_all_rule(cfg)
    rule[0, 0] = 1  # pays more than the surplus
    with pytest.raises(IllegalAction):
        policy_value_exp(cfg, rule)


def test_rule_shape_checked():
    cfg = make_config("exponential", {1: 0.7, -1: 0.3}, 0.5, -1.0, 3, 3)
    with pytest.raises(ValidationError):
        policy_value_exp(cfg, np.zeros((2, 2), dtype=np.int64))


def test_requires_exponential_utility():
    cfg = make_config("power", {1: 0.5, -1: 0.5}, 0.5, 0.5, 4, 3)
    with pytest.raises(ValidationError):
        howard_solve(cfg)


def test_callable_rule_equals_array_rule():
    cfg = make_config("exponential", {1: 0.7, -1: 0.3}, 0.5, -1.0, 3, 3)
    by_array = policy_value_exp(cfg, pay_all_rule(cfg))
    by_call = policy_value_exp(cfg, lambda n, x: x)
    assert np.array_equal(by_array.lo, by_call.lo)
    assert np.array_equal(by_array.hi, by_call.hi)


def test_pay_all_bracket_contains_truncated_expectation():
    cfg = make_config("exponential", {1: 0.7, -1: 0.3}, 0.5, -1.0, 3, 3)
    table = policy_value_exp(cfg, pay_all_rule(cfg))
    for x0 in range(cfg.x_max + 1):
        val = exact_policy_value(cfg, lambda n, x, s: x, x0, cfg.depth)
        # hi closes the tail with 1, which makes it exactly the truncated
        # expectation; lo bounds the infinite-horizon value from below
        assert abs(val - table.hi[0, x0 + 1]) <= 1e-12
        assert table.lo[0, x0 + 1] - 1e-12 <= val <= 1.0


def test_iteration_cap_raises():
    with pytest.raises(MaxIterations) as err:
        howard_solve(CLAIM, max_iterations=1)
    assert err.value.iterations == 1
    assert err.value.gap > 0
