"""Policy iteration for the exponential case.

Evaluate a fixed decision rule by the same backward induction the value
solver uses, take the largest minimiser against the evaluated table, and
repeat until the rule stops changing.  Values are bracketed throughout:
a fixed rule's tail is closed with [e^{theta x} h_lower, 1], since the
pay-all upper envelope only bounds the optimal rule, not an arbitrary one.

Rules must pay down to a bounded surplus (otherwise ruin is no longer
certain and the evaluation prices a different problem); the gate is the
provable payout-pressure bound ``s_tilde_star`` from the schedule, which
every improvement step and every solver policy satisfies by construction.

Iteration produces a pointwise non-increasing sequence of values; the
improved rule of a converged run is the rule itself, and the final table
agrees with direct backward induction within bracket widths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import IllegalAction, InadmissiblePolicy, MaxIterations, ValidationError
from .exp_solver import (ExpPolicy, ExpValueTable, ThetaSchedule, TIE_TOL,
                         _g_rows)
from .model import ProblemConfig, Utility

__all__ = [
    "HowardIteration",
    "HowardResult",
    "pay_all_rule",
    "policy_value_exp",
    "improve",
    "howard_solve",
]


def pay_all_rule(config: ProblemConfig) -> np.ndarray:
    """f(n, x) = x at every depth: the suggested starting rule."""
    row = np.arange(config.x_max + 1, dtype=np.int64)
    return np.tile(row, (config.depth, 1))


def _as_rule(config: ProblemConfig, f) -> np.ndarray:
    """Normalize a rule to an (N, x_max+1) int array and vet its actions."""
    n_depth, x_max = config.depth, config.x_max
    if isinstance(f, ExpPolicy):
        rule = np.array(f.action, dtype=np.int64)
    elif callable(f):
        rule = np.array([[f(n, x) for x in range(x_max + 1)]
                         for n in range(n_depth)], dtype=np.int64)
    else:
        rule = np.asarray(f, dtype=np.int64)
    if rule.shape != (n_depth, x_max + 1):
        raise ValidationError(
            f"rule shape {rule.shape} != {(n_depth, x_max + 1)}")
    xs = np.arange(x_max + 1)
    if np.any(rule < 0) or np.any(rule > xs):
        n, x = np.argwhere((rule < 0) | (rule > xs))[0]
        raise IllegalAction(f"rule pays {rule[n, x]} at depth {n}, x={x}")
    return rule


def _check_admissible(schedule: ThetaSchedule, rule: np.ndarray) -> None:
    bound = schedule.s_tilde_star
    xs = np.arange(rule.shape[1], dtype=float)
    required = np.ceil(xs - bound - 1e-9).astype(np.int64)
    bad = rule < np.maximum(required, 0)
    if np.any(bad):
        n, x = np.argwhere(bad)[0]
        raise InadmissiblePolicy(
            f"rule pays {rule[n, x]} at depth {n}, x={x}; needs >= "
            f"{required[x]} to keep post-payout surplus within {bound:.4g}")


def policy_value_exp(config: ProblemConfig, f) -> ExpValueTable:
    """Bracketed value of a fixed rule by backward induction.

    ``f`` may be an (N, x_max+1) array, an ExpPolicy, or a callable
    (depth, x) -> action.  Above the cap the rule is extended by paying
    the overflow, which makes the table's extension identity exact for
    any rule, not only the optimal one.
    """
    if config.utility is not Utility.EXPONENTIAL:
        raise ValidationError("policy_value_exp requires the exponential utility")
    schedule = ThetaSchedule.from_config(config)
    rule = _as_rule(config, f)
    _check_admissible(schedule, rule)

    n_depth, x_max = config.depth, config.x_max
    xs = np.arange(x_max + 1)
    lo = np.ones((n_depth + 1, x_max + 2))
    hi = np.ones((n_depth + 1, x_max + 2))
    lo[n_depth, 1:] = np.exp(schedule.thetas[n_depth] * xs) * schedule.h_lo[n_depth].lo
    for n in range(n_depth - 1, -1, -1):
        g_lo, g_hi = _g_rows(config.dist, schedule.thetas[n + 1],
                             lo[n + 1], hi[n + 1], x_max)
        acts = rule[n]
        pays = np.exp(schedule.thetas[n] * acts)
        lo[n, 1:] = pays * g_lo[xs - acts]
        hi[n, 1:] = pays * g_hi[xs - acts]
    return ExpValueTable(config=config, schedule=schedule, lo=lo, hi=hi)


def improve(config: ProblemConfig, j_f: ExpValueTable) -> np.ndarray:
    """Largest minimiser against an evaluated rule's table.

    For each depth n and surplus x, minimizes a -> e^{theta_n a} G_f(x-a)
    on the lo channel with ties broken toward the larger payout.  The
    returned rule pays down to zero pressure (improving twice from the
    post-payout surplus changes nothing) and respects the payout-pressure
    bound; both are rechecked here because they certify the iteration's
    ruin argument.
    """
    schedule = j_f.schedule
    n_depth, x_max = config.depth, config.x_max
    rule = np.zeros((n_depth, x_max + 1), dtype=np.int64)
    for n in range(n_depth - 1, -1, -1):
        g_lo, _ = _g_rows(config.dist, schedule.thetas[n + 1],
                          j_f.lo[n + 1], j_f.hi[n + 1], x_max)
        theta = schedule.thetas[n]
        for x in range(x_max + 1):
            vals = np.exp(theta * np.arange(x + 1)) * g_lo[x::-1]
            best = float(vals.min())
            ties = np.nonzero(vals <= best + TIE_TOL)[0]
            rule[n, x] = int(ties[-1])
    for n in range(n_depth):
        for x in range(x_max + 1):
            a = int(rule[n, x])
            if rule[n, x - a] != 0:
                raise InadmissiblePolicy(
                    f"improved rule pays again after paying: depth {n}, x={x}, "
                    f"a={a}, follow-up {rule[n, x - a]}")
    _check_admissible(schedule, rule)
    return rule


@dataclass(frozen=True)
class HowardIteration:
    """One evaluate/improve round: the rule used and its hi-channel values."""

    rule: np.ndarray
    j_hi: np.ndarray  # (N+1, x_max+1), without the ruined column


@dataclass(frozen=True)
class HowardResult:
    table: ExpValueTable
    policy: ExpPolicy
    iterations: int
    final_gap: float
    history: tuple[HowardIteration, ...]


def howard_solve(config: ProblemConfig, f0=None, *,
                 max_iterations: int = 1000) -> HowardResult:
    """Iterate evaluation and improvement until the rule is a fixed point.

    Starts from pay-all unless ``f0`` is given.  Asserts the theoretical
    pointwise non-increase of successive values: each new hi value may
    exceed the previous one by at most the new bracket's width.  Raises
    MaxIterations with the last sup-norm value change if the cap is hit.
    """
    rule = pay_all_rule(config) if f0 is None else _as_rule(config, f0)
    prev_hi = None
    gap = math.inf
    history: list[HowardIteration] = []
    for it in range(1, max_iterations + 1):
        table = policy_value_exp(config, rule)
        history.append(HowardIteration(rule=rule.copy(), j_hi=table.hi[:, 1:].copy()))
        if prev_hi is not None:
            slack = table.hi[:, 1:] - table.lo[:, 1:]
            worst = float(np.max(table.hi[:, 1:] - prev_hi - slack))
            if worst > 1e-12:
                raise ValidationError(
                    f"policy iteration increased a value by {worst:.3e}")
            gap = float(np.max(np.abs(table.hi[:, 1:] - prev_hi)))
        prev_hi = table.hi[:, 1:].copy()
        improved = improve(config, table)
        if np.array_equal(improved, rule):
            xi = np.array([int(np.nonzero(rule[n] == 0)[0][-1])
                           for n in range(config.depth)], dtype=np.int64)
            policy = ExpPolicy(config=config, schedule=table.schedule,
                               action=rule, xi=xi)
            return HowardResult(table=table, policy=policy, iterations=it,
                                final_gap=gap if it > 1 else 0.0,
                                history=tuple(history))
        rule = improved
    raise MaxIterations(max_iterations, gap)
