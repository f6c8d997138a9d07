"""Power- and log-utility dividend solvers on accumulated-dividend grids.

The natural recursion for wealth-based utilities carries the running
discounted payout along with the surplus.  Instead of the exploding
current-time wealth coordinate, the tables here use

    s = sum of beta^m * a_m paid so far,

which stays inside [0, s_max], so one fixed grid serves every depth.
``W_d(x, s)`` is the best expected utility of s plus everything paid from
depth d on, with the infinite tail closed at depth N by the rigorous
envelope

    cash(s + beta^N x)  <=  W_N(x, s)  <=  cash(s + beta^N (x + C)),

where cash is the bare utility (t^gamma or log t) and C = beta EZ+/(1-beta).
Ruined states are worth exactly cash(s) at any depth.

Off-grid evaluations never assume smoothness that is not proven: a query
between gridpoints is bracketed by the lower neighbor (monotonicity), the
upper neighbor corrected by the concave increment cash(b) - cash(a) (a
modulus valid for the true value), and the envelope above, taking the best
of each side.  Queries that hit a gridpoint exactly, which is every
reachable point when beta is dyadic and the lattice is in the grid, pass
through untouched; on such grids the lo channel is the exact value of the
(N+1)-step problem and the policy invariants below hold with equality.

Barrier structure: at any depth and any s, paying nothing is optimal only
below beta EZ+/(1-beta)^2; ``barrier_diagnostics`` re-derives the barriers
from a solved policy and fails loudly if that bound ever breaks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (BarrierViolation, CapTooSmall, DepthTooSmall,
                     DomainError, ValidationError)
from .model import IncomeDistribution, ProblemConfig, Utility

TIE_TOL = 1e-12  # absolute tie tolerance for the largest maximiser

LATTICE_LIMIT = 50_000  # max exact payout-lattice size merged into the grid

__all__ = [
    "SGrid",
    "PowerValueTable",
    "PowerPolicy",
    "BarrierReport",
    "xi_star_bound",
    "t_backup",
    "solve_power",
    "solve_log",
    "barrier_diagnostics",
]


def xi_star_bound(config_like) -> float:
    """Uniform bound on the no-payout barrier: beta EZ+ / (1-beta)^2.

    Valid for every depth and every accumulated payout level; the surplus
    cap must sit at or above its ceiling.  Reads fields only, so it is
    safe to call while a ProblemConfig is still being validated.
    """
    beta = config_like.beta
    return beta * config_like.dist.mean_positive / (1.0 - beta) ** 2


def _tail_scale(dist: IncomeDistribution, beta: float) -> float:
    """C = beta EZ+/(1-beta): mean discounted future income."""
    return beta * dist.mean_positive / (1.0 - beta)


@dataclass(frozen=True)
class SGrid:
    """Sorted accumulated-payout levels covering [0, s_max].

    Uniform with ``s_grid_points`` knots, merged with the exact payout
    lattice {sum c_m beta^m : 0 <= c_m <= x_max + support_max} whenever
    that lattice is small enough to enumerate; lattice membership makes
    dyadic-beta queries hit gridpoints exactly.
    """

    points: np.ndarray
    s_max: float
    has_lattice: bool

    def __post_init__(self):
        if len(self.points) == 0 or self.points[0] != 0.0:
            raise ValidationError("s-grid must start at 0")
        if np.any(np.diff(self.points) <= 0):
            raise ValidationError("s-grid points must be strictly increasing")

    @classmethod
    def build(cls, config: ProblemConfig) -> "SGrid":
        pay_max = config.x_max + max(config.dist.support_max, 0)
        s_max = pay_max / (1.0 - config.beta)
        uniform = np.linspace(0.0, s_max, config.s_grid_points)
        lattice = _payout_lattice(config.beta, config.depth, pay_max)
        if lattice is None:
            points = np.unique(uniform)
            return cls(points=points, s_max=s_max, has_lattice=False)
        points = np.unique(np.concatenate([uniform, lattice]))
        return cls(points=points, s_max=s_max, has_lattice=True)

    def floor_index(self, s: float) -> int:
        """Index of the closest gridpoint at or below s."""
        i = int(np.searchsorted(self.points, s, side="right")) - 1
        return max(i, 0)


def _payout_lattice(beta: float, depth: int, pay_max: int) -> np.ndarray | None:
    if pay_max < 0:
        return None
    size = (pay_max + 1) ** (depth + 1)
    if size > LATTICE_LIMIT:
        return None
    sums = {0.0}
    scale = 1.0
    for _ in range(depth + 1):
        sums = {s + c * scale for s in sums for c in range(pay_max + 1)}
        scale *= beta
    return np.array(sorted(sums))


def _cash(utility: Utility, gamma: float) -> Callable[[np.ndarray], np.ndarray]:
    if utility is Utility.POWER:
        def cash(t):
            return np.power(t, gamma)
    elif utility is Utility.LOGARITHMIC:
        def cash(t):
            with np.errstate(divide="ignore"):
                return np.log(t)
    else:
        raise ValidationError(f"no cash utility for {utility}")
    return cash


def _eval_queries(pts: np.ndarray, row_lo: np.ndarray, row_hi: np.ndarray,
                  q: np.ndarray, env_x: int, b_env: float, c_tail: float,
                  cash) -> tuple[np.ndarray, np.ndarray]:
    """Certified bracket of W(row surplus, q) for off-grid query points q.

    Exact grid hits pass the stored bracket through.  Otherwise the lower
    bound is the best of the left neighbor, the right neighbor minus the
    concave increment cash(s_right) - cash(q), and the pay-all envelope;
    the upper bound mirrors that from above.  ``env_x`` and ``b_env`` are
    the surplus and beta^depth of the row being evaluated.
    """
    m = len(pts)
    idx = np.searchsorted(pts, q)
    idx_c = np.minimum(idx, m - 1)
    exact = pts[idx_c] == q
    left = np.maximum(idx - 1, 0)
    has_right = idx < m
    right = np.where(has_right, idx, m - 1)
    cash_q = cash(q)
    cash_l = cash(pts[left])
    cash_r = cash(pts[right])
    env_lo = cash(q + b_env * env_x)
    env_hi = cash(q + b_env * (env_x + c_tail))

    with np.errstate(invalid="ignore"):
        lo_r = np.where(has_right, row_lo[right] - (cash_r - cash_q), -np.inf)
    lo_r = np.where(np.isnan(lo_r), -np.inf, lo_r)  # log row at q=0, exact anyway
    lo = np.maximum(np.maximum(row_lo[left], lo_r), env_lo)

    with np.errstate(invalid="ignore"):
        hi_l = row_hi[left] + (cash_q - cash_l)
    hi_l = np.where(np.isfinite(hi_l), hi_l, np.inf)  # log row at s=0
    hi_r = np.where(has_right, row_hi[right], np.inf)
    hi = np.minimum(np.minimum(hi_r, hi_l), env_hi)

    lo = np.where(exact, row_lo[idx_c], lo)
    hi = np.where(exact, row_hi[idx_c], hi)
    return lo, hi


@dataclass(frozen=True)
class PowerValueTable:
    """Brackets of W_d(x, s) over (depth, surplus, gridpoint).

    Arrays have shape (N+1, x_max+2, M); row index x+1, row 0 holds the
    ruined state, whose value is cash(s) exactly at every depth.
    """

    config: ProblemConfig
    grid: SGrid
    utility: Utility
    lo: np.ndarray
    hi: np.ndarray

    @property
    def depth(self) -> int:
        return int(self.lo.shape[0]) - 1

    def value_bracket(self, d: int, x: int, s: float) -> tuple[float, float]:
        """Certified bracket of W_d(x, s) at any payout level s >= 0."""
        if s < 0:
            raise DomainError(f"accumulated payout must be >= 0, got {s}")
        cash = _cash(self.utility, self.config.gamma)
        beta, cap = self.config.beta, self.config.x_max
        if x > cap:  # pay the overflow now, priced at this depth
            s = s + beta ** d * (x - cap)
            x = cap
        q = np.array([float(s)])
        if x < 0:
            v = float(cash(q)[0])
            return v, v
        lo, hi = _eval_queries(self.grid.points, self.lo[d, x + 1],
                               self.hi[d, x + 1], q, x, beta ** d,
                               _tail_scale(self.config.dist, beta), cash)
        return float(lo[0]), float(hi[0])

    def headline(self, x: int, s0: float = 0.0) -> tuple[float, float]:
        """Depth-0 value bracket at initial payout level s0."""
        return self.value_bracket(0, x, s0)

    def widths(self, d: int = 0) -> np.ndarray:
        return self.hi[d, 1:] - self.lo[d, 1:]


@dataclass(frozen=True)
class PowerPolicy:
    """Largest-maximiser actions over (depth, surplus, gridpoint)."""

    config: ProblemConfig
    grid: SGrid
    utility: Utility
    action: np.ndarray

    @property
    def depth(self) -> int:
        return int(self.action.shape[0])

    def action_at(self, d: int, x: int, s: float) -> int:
        """Total lookup: clamps depth, pays overflow, floors s to the grid."""
        if x < 0:
            return 0
        d = min(d, self.depth - 1)
        cap = self.config.x_max
        if x > cap:
            extra = x - cap
            return extra + self.action_at(d, cap, s + self.config.beta ** d * extra)
        return int(self.action[d, x, self.grid.floor_index(s)])


def _check_cap(config: ProblemConfig) -> None:
    need = math.ceil(xi_star_bound(config) - 1e-9)
    if config.x_max < need:
        raise CapTooSmall(f"x_max={config.x_max} below barrier bound {need}")


def t_backup(config: ProblemConfig, grid: SGrid, next_lo: np.ndarray,
             next_hi: np.ndarray, d: int, x: int, s: float,
             utility: Utility | None = None) -> tuple[float, float, int]:
    """One backup at (d, x, s) from depth-(d+1) rows of shape (x_max+2, M).

    Evaluates every payout a: income branches that ruin contribute
    cash(s + beta^d a) exactly, surviving branches query the next-depth
    bracket (off-grid queries bracketed, overflow above the cap paid
    immediately at next-step discount).  Returns the bracketed maximum and
    the largest action whose lo-evaluation ties the best within TIE_TOL.
    """
    _check_cap(config)
    if x < 0 or x > config.x_max:
        raise ValidationError(f"x={x} outside [0, {config.x_max}]")
    utility = config.utility if utility is None else utility
    cash = _cash(utility, config.gamma)
    cont = _continuations(config.dist, config.beta, config.x_max,
                          _tail_scale(config.dist, config.beta), grid.points,
                          cash, next_lo, next_hi, d,
                          np.array([float(s)]))
    best_lo, best_hi, best_a = -np.inf, -np.inf, 0
    for a in range(x + 1):
        f_lo, f_hi = cont(a)
        v_lo, v_hi = float(f_lo[x - a][0]), float(f_hi[x - a][0])
        best_hi = max(best_hi, v_hi)
        if v_lo >= best_lo - TIE_TOL:
            best_a = a
        best_lo = max(best_lo, v_lo)
    return best_lo, best_hi, best_a


def _continuations(dist, beta, x_max, c_tail, pts, cash,
                   next_lo, next_hi, d, base_q=None):
    """Continuation values F_a(u) = E W_{d+1}(u + Z, . ) after paying a.

    Returns a closure: cont(a) -> (F_lo, F_hi), each indexed by the
    post-payout surplus u = 0..x_max, arrays over the query points
    (the grid shifted by beta^d a, or ``base_q`` shifted likewise).
    Income terms accumulate in ascending k for bit-stable results.
    """
    bd = beta ** d
    bnext = beta ** (d + 1)
    smax = max(dist.support_max, 0)
    q0 = pts if base_q is None else base_q

    def cont(a: int):
        q = q0 + bd * a
        ruin_lo = cash(q)
        rows_lo = {}
        rows_hi = {}
        for xp in range(x_max + 1):
            rows_lo[xp], rows_hi[xp] = _eval_queries(
                pts, next_lo[xp + 1], next_hi[xp + 1], q, xp, bnext, c_tail, cash)
        for o in range(1, smax + 1):  # overflow: pay o now at next-step rate
            rows_lo[x_max + o], rows_hi[x_max + o] = _eval_queries(
                pts, next_lo[x_max + 1], next_hi[x_max + 1], q + bnext * o,
                x_max, bnext, c_tail, cash)
        f_lo = {}
        f_hi = {}
        for u in range(x_max + 1 - a if base_q is None else x_max + 1):
            acc_lo = np.zeros_like(q)
            acc_hi = np.zeros_like(q)
            for k, qk in dist.items():
                xp = u + k
                if xp < 0:
                    acc_lo += qk * ruin_lo
                    acc_hi += qk * ruin_lo
                else:
                    acc_lo += qk * rows_lo[xp]
                    acc_hi += qk * rows_hi[xp]
            f_lo[u] = acc_lo
            f_hi[u] = acc_hi
        return f_lo, f_hi

    return cont


def _solve(config: ProblemConfig, utility: Utility,
           max_width: float | None) -> tuple[PowerValueTable, PowerPolicy]:
    _check_cap(config)
    cash = _cash(utility, config.gamma)
    grid = SGrid.build(config)
    pts = grid.points
    m = len(pts)
    n_depth, x_max, beta = config.depth, config.x_max, config.beta
    c_tail = _tail_scale(config.dist, beta)

    lo = np.empty((n_depth + 1, x_max + 2, m))
    hi = np.empty((n_depth + 1, x_max + 2, m))
    ruined = cash(pts)
    lo[:, 0] = ruined
    hi[:, 0] = ruined
    b_last = beta ** n_depth
    for x in range(x_max + 1):
        lo[n_depth, x + 1] = cash(pts + b_last * x)
        hi[n_depth, x + 1] = cash(pts + b_last * (x + c_tail))
    action = np.zeros((n_depth, x_max + 1, m), dtype=np.int64)

    for d in range(n_depth - 1, -1, -1):
        cont = _continuations(config.dist, beta, x_max, c_tail, pts, cash,
                              lo[d + 1], hi[d + 1], d)
        best_lo = np.full((x_max + 1, m), -np.inf)
        best_hi = np.full((x_max + 1, m), -np.inf)
        for a in range(x_max + 1):
            f_lo, f_hi = cont(a)
            for x in range(a, x_max + 1):
                np.maximum(best_lo[x], f_lo[x - a], out=best_lo[x])
                np.maximum(best_hi[x], f_hi[x - a], out=best_hi[x])
        act = np.zeros((x_max + 1, m), dtype=np.int64)
        for a in range(x_max + 1):  # second pass: largest tying action
            f_lo, _ = cont(a)
            for x in range(a, x_max + 1):
                qualify = f_lo[x - a] >= best_lo[x] - TIE_TOL
                act[x][qualify] = a
        lo[d, 1:] = best_lo
        hi[d, 1:] = best_hi
        action[d] = act

    table = PowerValueTable(config=config, grid=grid, utility=utility,
                            lo=lo, hi=hi)
    policy = PowerPolicy(config=config, grid=grid, utility=utility,
                         action=action)
    if max_width is not None:
        worst = float(np.max(table.widths(0)))
        if worst > max_width:
            raise DepthTooSmall(
                f"depth {n_depth} leaves bracket width {worst:.3e} > {max_width:.3e}")
    return table, policy


def solve_power(config: ProblemConfig, *, max_width: float | None = None
                ) -> tuple[PowerValueTable, PowerPolicy]:
    """Backward induction for the power utility; headline is W_0(x, 0)."""
    if config.utility is not Utility.POWER:
        raise ValidationError("solve_power requires the power utility")
    return _solve(config, Utility.POWER, max_width)


def solve_log(config: ProblemConfig, *, y0: float = 1.0,
              max_width: float | None = None
              ) -> tuple[PowerValueTable, PowerPolicy]:
    """Same recursion with log wealth; headline is W_0(x, y0), y0 > 0.

    The table itself does not depend on y0 (it enters as the depth-0
    payout level), but the value of zero wealth is -inf, so a positive
    starting wealth is required for a finite answer.
    """
    if config.utility is not Utility.LOGARITHMIC:
        raise ValidationError("solve_log requires the logarithmic utility")
    if y0 <= 0:
        raise DomainError(f"log utility needs y0 > 0, got {y0}")
    return _solve(config, Utility.LOGARITHMIC, max_width)


@dataclass(frozen=True)
class BarrierReport:
    """Barriers recovered from a solved policy, checked against the bound."""

    bound: float
    xi: np.ndarray  # (depth, gridpoint): largest x paying nothing
    shift_pairs_checked: int = field(default=0)


def barrier_diagnostics(policy: PowerPolicy) -> BarrierReport:
    """Recover xi(d, s) and enforce the structural policy laws.

    Checks, raising BarrierViolation on failure:
    * xi(d, s) <= beta EZ+/(1-beta)^2 everywhere;
    * on gridpoint pairs with s' = s - beta^d exact, a positive action at
      (x+1, s') must exceed the action at (x, s) by exactly 1.
    """
    bound = xi_star_bound(policy.config)
    acts = policy.action
    n_depth, nx, m = acts.shape
    xs = np.arange(nx)[:, None]
    xi = np.where(acts == 0, xs, 0).max(axis=1)
    worst = int(xi.max())
    if worst > bound + 1e-9:
        d, j = np.argwhere(xi == worst)[0]
        raise BarrierViolation(
            f"no-payout barrier {worst} at depth {d}, s={policy.grid.points[j]:.6g} "
            f"exceeds bound {bound:.6g}")

    pts = policy.grid.points
    checked = 0
    for d in range(n_depth):
        shift = policy.config.beta ** d
        target = pts - shift
        idx = np.searchsorted(pts, target)
        idx_c = np.minimum(idx, m - 1)
        match = (target >= 0) & (pts[idx_c] == target)
        cols = np.nonzero(match)[0]
        for j in cols:
            jj = int(idx_c[j])
            for x in range(nx - 1):
                a0 = int(acts[d, x, j])
                a1 = int(acts[d, x + 1, jj])
                if a1 > 0 and a1 != a0 + 1:
                    raise BarrierViolation(
                        f"band shift broken at depth {d}, x={x}, "
                        f"s={pts[j]:.6g}: f(x,s)={a0} but f(x+1,s-b^d)={a1}")
                checked += 1
    return BarrierReport(bound=bound, xi=xi, shift_pairs_checked=checked)
