"""Core model: integer income distribution, surplus dynamics, utilities.

The controlled process is a surplus chain on the integers.  While the
surplus x is nonnegative the controller pays a dividend a from {0,...,x},
then an i.i.d. integer income z arrives:

    x' = x - a + z        if x >= 0,
    x' = x                if x < 0   (ruin is absorbing).

Dividends are valued through a utility applied to the discounted payout
stream.  Four utilities are supported: exponential (1/gamma)e^(gamma*w)
with gamma < 0, power w^gamma with gamma in (0,1), logarithmic, and the
risk-neutral identity.

Everything here is immutable after construction and shared freely by the
solver modules.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping

from .errors import (
    CapTooSmall,
    DomainError,
    IllegalAction,
    NegativeMass,
    NoRuinRisk,
    NotNormalized,
    ValidationError,
)

NORMALIZATION_TOL = 1e-12


class Utility(enum.Enum):
    EXPONENTIAL = "exponential"
    POWER = "power"
    LOGARITHMIC = "logarithmic"
    RISK_NEUTRAL = "risk_neutral"

    @classmethod
    def parse(cls, name: str) -> "Utility":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(u.value for u in cls)
            raise ValidationError(f"unknown utility {name!r}; expected one of {valid}")


@dataclass(frozen=True)
class IncomeDistribution:
    """Finite-support integer income distribution.

    ``support`` is ascending; ``probs[i]`` is the mass at ``support[i]``.
    Finite support makes every expectation an exact finite sum and gives
    E Z+ < infinity for free; construction rejects distributions without
    mass on negative incomes, since those make ruin impossible and the
    payout problem degenerate.
    """

    support: tuple[int, ...]
    probs: tuple[float, ...]

    @property
    def support_min(self) -> int:
        return self.support[0]

    @property
    def support_max(self) -> int:
        return self.support[-1]

    @property
    def p_negative(self) -> float:
        """Total mass on negative incomes (assumption A2 requires > 0)."""
        return math.fsum(q for k, q in self.items() if k < 0)

    @property
    def mean_positive(self) -> float:
        """E Z+ = sum of k*q_k over positive k."""
        return math.fsum(k * q for k, q in self.items() if k > 0)

    @property
    def mean(self) -> float:
        return math.fsum(k * q for k, q in self.items())

    def items(self):
        return zip(self.support, self.probs)

    def prob(self, k: int) -> float:
        try:
            return self.probs[self.support.index(k)]
        except ValueError:
            return 0.0


def validate_distribution(raw: Mapping[int, float]) -> IncomeDistribution:
    """Validate and normalize a raw integer->probability map.

    Raises NegativeMass, NotNormalized (|sum - 1| > 1e-12), or NoRuinRisk
    (no mass below zero).  Masses within tolerance are renormalized by an
    exact division so downstream sums start from a unit total.
    """
    if not raw:
        raise ValidationError("income distribution must be non-empty")
    items = sorted(raw.items())
    for k, q in items:
        if not isinstance(k, int) or isinstance(k, bool):
            raise ValidationError(f"income support must be integers, got {k!r}")
        if q < 0:
            raise NegativeMass(f"probability of income {k} is negative ({q})")
    total = math.fsum(q for _, q in items)
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise NotNormalized(f"probabilities sum to {total!r}, not 1")
    support = tuple(k for k, q in items if q > 0)
    probs = tuple(q / total for k, q in items if q > 0)
    if not support:
        raise ValidationError("income distribution has no positive mass")
    if not any(k < 0 for k in support):
        raise NoRuinRisk("no mass on negative incomes; ruin would be impossible")
    return IncomeDistribution(support=support, probs=probs)


@dataclass(frozen=True)
class SurplusState:
    """Surplus level with the derived ruin flag."""

    x: int

    @property
    def ruined(self) -> bool:
        return self.x < 0

    def action_set(self) -> range:
        return action_set(self.x)


def action_set(x: int) -> range:
    """Admissible dividends: {0,...,x} while solvent, {0} after ruin."""
    return range(0, x + 1) if x >= 0 else range(0, 1)


def step(x: int, a: int, z: int) -> int:
    """One transition of the surplus chain; ruin states are absorbing."""
    if a not in action_set(x):
        raise IllegalAction(f"dividend {a} not in {{0,...,{max(x, 0)}}} at surplus {x}")
    if x < 0:
        return x
    return x - a + z


@dataclass(frozen=True)
class ProblemConfig:
    """Everything a solver run needs, validated up front.

    ``depth`` is the induction horizon N; ``tail_eps`` controls how far
    infinite products/series are followed before their certified tail
    bracket is attached; ``s_grid_points`` sizes the accumulated-dividend
    grid of the power/log solver.  Construction checks that the surplus
    cap ``x_max`` clears the certified barrier bound of the chosen
    utility, so trajectories pushed back under the cap lose nothing.
    """

    beta: float
    gamma: float
    utility: Utility
    dist: IncomeDistribution
    x_max: int
    depth: int
    tail_eps: float = 1e-8
    s_grid_points: int = 512
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValidationError(f"beta must be in (0,1), got {self.beta}")
        if self.utility is Utility.EXPONENTIAL and not self.gamma < 0:
            raise ValidationError(f"exponential utility needs gamma < 0, got {self.gamma}")
        if self.utility is Utility.POWER and not 0.0 < self.gamma < 1.0:
            raise ValidationError(f"power utility needs gamma in (0,1), got {self.gamma}")
        if not isinstance(self.x_max, int) or self.x_max < 0:
            raise ValidationError(f"x_max must be a nonnegative integer, got {self.x_max}")
        if not isinstance(self.depth, int) or self.depth < 1:
            raise ValidationError(f"depth must be a positive integer, got {self.depth}")
        if not self.tail_eps > 0:
            raise ValidationError(f"tail_eps must be positive, got {self.tail_eps}")
        if self.s_grid_points < 2:
            raise ValidationError(f"s_grid_points must be at least 2, got {self.s_grid_points}")
        self._check_cap()

    def _check_cap(self):
        # imported lazily: the solvers import this module at load time
        if self.utility is Utility.EXPONENTIAL:
            from .exp_solver import required_cap

            need = required_cap(self)
        else:
            from .power_solver import xi_star_bound

            need = math.ceil(xi_star_bound(self) - 1e-9)
        if self.x_max < need:
            raise CapTooSmall(
                f"x_max={self.x_max} is below the certified barrier bound {need} "
                f"for {self.utility.value} utility"
            )


def utility(u: Utility, gamma: float, w: float) -> float:
    """Utility of a sure payout w >= 0 (w > 0 for logarithmic)."""
    if u is Utility.EXPONENTIAL:
        return math.exp(gamma * w) / gamma
    if u is Utility.POWER:
        if w < 0:
            raise DomainError(f"power utility needs w >= 0, got {w}")
        return w**gamma
    if u is Utility.LOGARITHMIC:
        if w <= 0:
            raise DomainError(f"log utility needs w > 0, got {w}")
        return math.log(w)
    return w


def certainty_equivalent(u: Utility, gamma: float, expected_utility: float) -> float:
    """Inverse utility: the sure payout equivalent to a given E U."""
    if u is Utility.EXPONENTIAL:
        # range of (1/gamma)e^(gamma w), w >= 0, gamma < 0 is [1/gamma, 0)
        arg = gamma * expected_utility
        if not 0.0 < arg <= 1.0 + 1e-12:
            raise DomainError(
                f"expected utility {expected_utility} outside exponential range"
            )
        return math.log(arg) / gamma
    if u is Utility.POWER:
        if expected_utility < 0:
            raise DomainError(f"power utility range is [0, inf), got {expected_utility}")
        return expected_utility ** (1.0 / gamma)
    if u is Utility.LOGARITHMIC:
        return math.exp(expected_utility)
    return expected_utility


def arrow_pratt(u: Utility, gamma: float, y: float) -> float:
    """Absolute risk aversion -U''/U' at wealth y (reporting helper)."""
    if u is Utility.EXPONENTIAL:
        return -gamma
    if u is Utility.POWER:
        if y <= 0:
            raise DomainError("power utility risk coefficient needs y > 0")
        return (1.0 - gamma) / y
    if u is Utility.LOGARITHMIC:
        if y <= 0:
            raise DomainError("log utility risk coefficient needs y > 0")
        return 1.0 / y
    return 0.0
