"""Ground truth by exhaustive enumeration on desk-size instances.

Everything here is deliberately brute force: optimize over *history
dependent* plans on the full outcome tree, with probabilities and
accumulated discounted dividends kept as exact rationals and utilities
taken in 80-bit floats only at the leaves.  Solver tolerances can then be
attributed to tail closures and grids, never to the reference values.

Conventions shared with the solvers:

* the discount factor is ``Fraction(config.beta)``, i.e. the exact value
  of the same binary float the solvers use;
* exponential values are reported as E exp(gamma * S) (minimized), the
  multiplicative factor without the 1/gamma scaling;
* power / log / risk-neutral values are the maximized expected utility of
  y0 + sum beta^k a_k, with y0 = 0 unless given.

A horizon-H tree takes actions at steps 0..H-1 and stops afterwards, so
it prices the truncated problem in which payouts simply cease at H.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Callable

import numpy as np

from .errors import TooLarge, UndefinedAction, ValidationError
from .model import IncomeDistribution, ProblemConfig, Utility

NODE_GUARD = 10_000_000

_LD = np.longdouble


def _ld(x: Fraction) -> np.longdouble:
    """Fraction -> longdouble via a two-step split, ~1e-35 relative error.

    Direct conversion of big integers would round through a 53-bit float;
    splitting off the nearest double first keeps full extended precision.
    """
    head = float(x)
    rest = x - Fraction(head)
    return _LD(head) + _LD(float(rest))


def exact_probabilities(dist: IncomeDistribution) -> dict[int, Fraction]:
    """Support weights as exact rationals summing to exactly 1."""
    raw = {k: Fraction(q) for k, q in dist.items()}
    total = sum(raw.values())
    return {k: q / total for k, q in raw.items()}


def _leaf(utility: Utility, gamma: float, wealth: Fraction) -> np.longdouble:
    w = _ld(wealth)
    if utility is Utility.EXPONENTIAL:
        return np.exp(_LD(gamma) * w)
    if utility is Utility.POWER:
        return w ** _LD(gamma) if w > 0 else _LD(0.0)
    if utility is Utility.LOGARITHMIC:
        if w <= 0:
            raise ValidationError("log utility needs positive wealth; pass y0 > 0")
        return np.log(w)
    return w


@dataclass
class OracleTree:
    """Optimal decisions of one enumeration run, addressable for replay.

    In the default memoized mode decisions are keyed by (depth, surplus,
    accumulated dividends); with ``memoize=False`` the key carries the
    full income history instead, so plans may differ across histories that
    share a state.
    """

    utility: Utility
    gamma: float
    beta: Fraction
    y0: Fraction
    x0: int
    horizon: int
    probs: dict[int, Fraction]
    decisions: dict = field(repr=False)
    value: float = 0.0
    by_history: bool = False

    def action(self, depth: int, x: int, s: Fraction,
               history: tuple[int, ...] = ()) -> int:
        key = (depth, x, s, history) if self.by_history else (depth, x, s)
        try:
            return self.decisions[key]
        except KeyError:
            raise UndefinedAction(f"no decision recorded at depth={depth}, "
                                  f"x={x}, s={s}") from None

    def dump(self, max_depth: int | None = None) -> dict:
        """JSON-ready nested view of the decision tree, depth-limited."""
        limit = self.horizon if max_depth is None else min(max_depth, self.horizon)

        def walk(depth: int, x: int, s: Fraction, history: tuple[int, ...]) -> dict:
            node: dict = {"depth": depth, "x": x, "s": str(s)}
            if x < 0 or depth >= self.horizon:
                node["leaf"] = float(_leaf(self.utility, self.gamma, self.y0 + s))
                return node
            a = self.action(depth, x, s, history)
            node["action"] = a
            if depth < limit:
                s_next = s + self.beta ** depth * a
                node["children"] = {
                    str(z): walk(depth + 1, x - a + z, s_next, history + (z,))
                    for z in sorted(self.probs)
                }
            return node

        return {"value": self.value, "root": walk(0, self.x0, Fraction(0), ())}


def exact_optimal(config: ProblemConfig, x0: int, horizon: int, *,
                  y0: float = 0.0, memoize: bool = True,
                  node_guard: int = NODE_GUARD) -> tuple[float, OracleTree]:
    """Optimum over history-dependent plans on the full outcome tree.

    Backward induction over every (history, action) branch; exponential
    objectives are minimized (J-convention), all others maximized.  Ties
    go to the largest action.  Raises TooLarge past ``node_guard`` visits.
    """
    if horizon < 0:
        raise ValidationError(f"horizon must be >= 0, got {horizon}")
    utility, gamma = config.utility, config.gamma
    if utility is Utility.LOGARITHMIC and y0 <= 0:
        raise ValidationError("log utility needs y0 > 0")
    probs = exact_probabilities(config.dist)
    beta = Fraction(config.beta)
    y0_frac = Fraction(y0)
    bpow = [beta ** k for k in range(horizon + 1)]
    minimize = utility is Utility.EXPONENTIAL
    decisions: dict = {}
    memo: dict = {}
    visits = 0

    def value(depth: int, x: int, s: Fraction, history: tuple[int, ...]
              ) -> np.longdouble:
        nonlocal visits
        visits += 1
        if visits > node_guard:
            raise TooLarge(f"oracle tree exceeds {node_guard} nodes")
        if x < 0 or depth == horizon:
            return _leaf(utility, gamma, y0_frac + s)
        key = (depth, x, s, history) if not memoize else (depth, x, s)
        if memoize and key in memo:
            return memo[key]
        best = None
        best_a = 0
        for a in range(x + 1):
            s_next = s + bpow[depth] * a
            acc = _LD(0.0)
            for z, q in sorted(probs.items()):
                acc += _ld(q) * value(depth + 1, x - a + z, s_next,
                                      history + (z,))
            better = best is None or (acc < best if minimize else acc > best)
            if better or acc == best:
                best = acc
                best_a = a
        decisions[key] = best_a
        if memoize:
            memo[key] = best
        return best

    val = value(0, x0, Fraction(0), ())
    tree = OracleTree(utility=utility, gamma=gamma, beta=beta, y0=y0_frac,
                      x0=x0, horizon=horizon, probs=probs,
                      decisions=decisions, value=float(val),
                      by_history=not memoize)
    return float(val), tree


def exact_policy_value(config: ProblemConfig, policy, x0: int, horizon: int,
                       *, y0: float = 0.0,
                       node_guard: int = NODE_GUARD) -> float:
    """Exact expectation of the objective under a fixed policy.

    ``policy`` may be an OracleTree, a callable (depth, x, s: Fraction)
    -> action, or any object with an ``action_at`` method (depth, x[, s])
    such as the solver policies.  Raises UndefinedAction when a reachable
    state has no action or the action leaves {0..x}.
    """
    utility, gamma = config.utility, config.gamma
    if utility is Utility.LOGARITHMIC and y0 <= 0:
        raise ValidationError("log utility needs y0 > 0")
    probs = exact_probabilities(config.dist)
    beta = Fraction(config.beta)
    y0_frac = Fraction(y0)
    bpow = [beta ** k for k in range(horizon + 1)]
    lookup = _action_lookup(policy)
    memo: dict = {}
    visits = 0
    share_states = not (isinstance(policy, OracleTree) and policy.by_history)

    def value(depth: int, x: int, s: Fraction, history: tuple[int, ...]
              ) -> np.longdouble:
        nonlocal visits
        visits += 1
        if visits > node_guard:
            raise TooLarge(f"policy tree exceeds {node_guard} nodes")
        if x < 0 or depth == horizon:
            return _leaf(utility, gamma, y0_frac + s)
        key = (depth, x, s)
        if share_states and key in memo:
            return memo[key]
        a = lookup(depth, x, s, history)
        if not isinstance(a, (int, np.integer)) or a < 0 or a > x:
            raise UndefinedAction(f"action {a!r} at depth={depth}, x={x} "
                                  f"is outside {{0..{x}}}")
        s_next = s + bpow[depth] * int(a)
        acc = _LD(0.0)
        for z, q in sorted(probs.items()):
            acc += _ld(q) * value(depth + 1, x - int(a) + z, s_next,
                                  history + (z,))
        if share_states:
            memo[key] = acc
        return acc

    return float(value(0, x0, Fraction(0), ()))


def _action_lookup(policy) -> Callable:
    if isinstance(policy, OracleTree):
        return lambda k, x, s, h: policy.action(k, x, s, h)
    if hasattr(policy, "action_at"):
        def from_table(k, x, s, h):
            try:
                return policy.action_at(k, x, float(s))
            except TypeError:
                return policy.action_at(k, x)
        return from_table
    if callable(policy):
        return lambda k, x, s, h: policy(k, x, s)
    raise UndefinedAction(f"cannot interpret {type(policy).__name__} as a policy")


def markov_optimum(config: ProblemConfig, x0: int, horizon: int, *,
                   rule_guard: int = 500_000) -> float:
    """Exponential optimum over depth-indexed surplus-only rules.

    Enumerates every map (depth, surplus) -> action on the reachable grid
    and evaluates the multiplicative objective exactly; comparing this
    against exact_optimal validates collapsing histories to (x, theta).
    Only the exponential case factorizes this way.
    """
    if config.utility is not Utility.EXPONENTIAL:
        raise ValidationError("markov_optimum applies to the exponential case")
    probs = sorted(exact_probabilities(config.dist).items())
    q_ld = [(z, _ld(q)) for z, q in probs]
    gamma, beta = config.gamma, config.beta

    reachable: list[set[int]] = [{x0}]
    for k in range(horizon - 1):
        nxt = set()
        for x in reachable[k]:
            for a in range(x + 1):
                for z, _ in probs:
                    x2 = x - a + z
                    if x2 >= 0:
                        nxt.add(x2)
        reachable.append(nxt)

    slots = [(k, x) for k in range(horizon) for x in sorted(reachable[k])]
    n_rules = 1
    for _, x in slots:
        n_rules *= x + 1
        if n_rules > rule_guard:
            raise TooLarge(f"more than {rule_guard} Markov rules to enumerate")

    theta = [_LD(gamma) * _LD(beta) ** k for k in range(horizon)]
    best = None
    for choice in product(*(range(x + 1) for _, x in slots)):
        rule = dict(zip(slots, choice))
        val = {}
        for k in range(horizon - 1, -1, -1):
            for x in sorted(reachable[k]):
                a = rule[(k, x)]
                acc = _LD(0.0)
                for z, q in q_ld:
                    x2 = x - a + z
                    acc += q * (_LD(1.0) if x2 < 0
                                else val.get((k + 1, x2), _LD(1.0)))
                val[(k, x)] = np.exp(theta[k] * a) * acc
        j = val[(0, x0)]
        if best is None or j < best:
            best = j
    return float(best)
