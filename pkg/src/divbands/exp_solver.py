"""Exponential-utility dividend solver with certified value brackets.

For gamma < 0 the objective splits multiplicatively, so the problem is
solved on the extended state (x, theta) where theta runs down the
deterministic orbit theta_n = gamma * beta^n.  The solver computes

    J(x, theta) = min over a in {0..x} of
        e^{theta a} * [ sum_k J(x - a + k, theta*beta) q_k,
                        ruin mass contributing 1 ],

working backward from depth N, where the unknown continuation is replaced
by the rigorous envelope

    e^{theta x} * h_lower(theta)  <=  J(x, theta)  <=  e^{theta x} * h_upper(theta).

Both envelope constants are themselves computed as two-sided brackets, so
every table entry is a certified enclosure of the true value.  The optimal
expected utility is (1/gamma) * J(x, gamma), and the depth-n decision rule
is the largest minimiser of the lo-evaluation.

A state above the surplus cap is priced by paying the overflow at once:
J(x', theta) = e^{theta (x' - x_max)} J(x_max, theta).  This is exact, not
an approximation, whenever x_max is at least the barrier bound s*; config
construction enforces that.

The module also houses the band-function parser (the structural form every
optimal rule must take) and the risk-neutral value-iteration baseline that
the gamma -> 0 limit is checked against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import CapTooSmall, DepthTooSmall, NotABand, ValidationError
from .model import IncomeDistribution, ProblemConfig, Utility

TIE_TOL = 1e-12  # absolute tie tolerance for the largest minimiser

__all__ = [
    "Interval",
    "ThetaSchedule",
    "ExpValueTable",
    "ExpPolicy",
    "BandFunction",
    "NeutralSolution",
    "mgf_plus",
    "h_lower",
    "h_upper",
    "s_bound",
    "required_cap",
    "suggest_depth",
    "bellman_backup_exp",
    "solve_exp",
    "extract_bands",
    "solve_neutral",
]


class Interval(NamedTuple):
    lo: float
    hi: float

    @property
    def width(self) -> float:
        return self.hi - self.lo


def mgf_plus(dist: IncomeDistribution, t: float) -> float:
    """E exp(t * Z+) for t <= 0; always in (0, 1]."""
    if t > 0:
        raise ValidationError(f"mgf_plus needs t <= 0, got {t}")
    return sum(q * math.exp(t * max(k, 0)) for k, q in dist.items())


def _pos_mean_tail(dist: IncomeDistribution, beta: float) -> float:
    """E Z+ * beta/(1-beta): exponent scale of the product tail."""
    return dist.mean_positive * beta / (1.0 - beta)


def _h_lower_at(dist: IncomeDistribution, beta: float, tail_eps: float, theta: float) -> Interval:
    """Bracket the infinite product prod_{k>=1} E exp(theta beta^k Z+).

    The product is truncated once the certified tail factor bracket
    [exp(theta beta^{K+1} EZ+/(1-beta)), 1] is tighter than tail_eps both
    absolutely and relative to |theta| (the relative criterion keeps the
    s(theta) estimate bounded as theta -> 0-).
    """
    if theta >= 0:
        raise ValidationError(f"h_lower needs theta < 0, got {theta}")
    ez = dist.mean_positive
    target = tail_eps * min(1.0, abs(theta))
    part = 1.0
    bk = beta  # beta^k for the next factor
    scale = ez / (1.0 - beta)
    k = 1
    while ez > 0 and -theta * bk * scale > target and k <= 100_000:
        part *= mgf_plus(dist, theta * bk)
        bk *= beta
        k += 1
    tail_lo = math.exp(theta * bk * scale)
    return Interval(part * tail_lo, part)


@dataclass(frozen=True)
class ThetaSchedule:
    """The orbit theta_n = gamma beta^n with its envelope brackets.

    ``h_lo``/``h_up`` hold the h_lower/h_upper brackets per depth, both
    obtained from the exact one-step recursions

        h_lower(theta_n) = mgf_plus(theta_{n+1}) * h_lower(theta_{n+1}),
        h_upper(theta_n) = p_neg + (sum_{m>=0} q_m e^{theta_{n+1} m}) * h_upper(theta_{n+1}),

    closed below the schedule by descending extra levels until the Jensen
    envelope pins the remainder.  ``s_hi`` is the conservative upper
    bracket of the barrier bound s(theta_n), and ``s_star`` its maximum
    over the schedule.
    """

    gamma: float
    beta: float
    depth: int
    tail_eps: float
    dist: IncomeDistribution
    thetas: tuple[float, ...]
    h_lo: tuple[Interval, ...]
    h_up: tuple[Interval, ...]
    s_hi: tuple[float, ...]
    s_star: float
    # like s_hi/s_star but with numerator -ln h_lower alone: the payout
    # pressure bound that holds for improvement steps from any admissible
    # rule, not only for the optimal rule (upper envelope unavailable there)
    s_tilde: tuple[float, ...]
    s_tilde_star: float

    @classmethod
    def build(cls, dist: IncomeDistribution, beta: float, gamma: float,
              depth: int, tail_eps: float) -> "ThetaSchedule":
        n_depth = depth
        thetas = [gamma]
        for _ in range(n_depth):
            thetas.append(thetas[-1] * beta)

        ez = dist.mean_positive
        scale = ez / (1.0 - beta)
        p_neg = dist.p_negative

        # extend the orbit below theta_N until the Jensen closure of the
        # h_upper recursion is tighter than tail_eps relative to |theta_N|
        target = tail_eps * min(1.0, abs(thetas[-1]))
        ext = [thetas[-1]]
        while ez > 0 and -ext[-1] * beta * scale > target and len(ext) <= 200_000:
            ext.append(ext[-1] * beta)

        # closure at the bottom: h in [exp(theta * beta * EZ+/(1-beta)), 1]
        t_bot = ext[-1]
        closure = Interval(math.exp(t_bot * beta * scale), 1.0)

        # roll h_upper back up through the extension, then the schedule
        def c_factor(theta_next: float) -> float:
            return sum(q * math.exp(theta_next * k) for k, q in dist.items() if k >= 0)

        d_lo, d_hi = closure
        for j in range(len(ext) - 2, -1, -1):
            c = c_factor(ext[j + 1])
            d_lo = p_neg + c * d_lo
            d_hi = p_neg + c * d_hi
        h_up = [Interval(d_lo, min(1.0, d_hi))]
        h_lo = [_h_lower_at(dist, beta, tail_eps, thetas[-1])]
        for n in range(n_depth - 1, -1, -1):
            t_next = thetas[n + 1]
            c = c_factor(t_next)
            prev_up = h_up[0]
            h_up.insert(0, Interval(p_neg + c * prev_up.lo,
                                    min(1.0, p_neg + c * prev_up.hi)))
            m = mgf_plus(dist, t_next)
            prev_lo = h_lo[0]
            h_lo.insert(0, Interval(m * prev_lo.lo, m * prev_lo.hi))

        # h_up <= 1 and the Jensen floor h_lower(theta) >= e^{theta beta scale}
        # give s(theta) <= beta EZ+/(1-beta)^2 for every theta < 0; deep in
        # the schedule the log-ratio drowns in accumulated rounding, so such
        # levels take that provable bound instead of a 0/0 artifact
        s_cap = beta * scale / (1.0 - beta)
        noise_floor = 16.0 * math.ulp(1.0) * max(n_depth + len(ext), 1)
        s_hi = []
        s_tilde = []
        for n in range(n_depth + 1):
            den = thetas[n] * (beta - 1.0)
            num = math.log(h_up[n].hi) - math.log(h_lo[n].lo)
            if abs(thetas[n]) < 1e-8 and num < noise_floor:
                s_hi.append(s_cap)
                s_tilde.append(s_cap)
                continue
            s_hi.append(max(0.0, min(num / den, s_cap)))
            s_tilde.append(max(0.0, min(-math.log(h_lo[n].lo) / den, s_cap)))
        return cls(
            gamma=gamma, beta=beta, depth=n_depth, tail_eps=tail_eps, dist=dist,
            thetas=tuple(thetas), h_lo=tuple(h_lo), h_up=tuple(h_up),
            s_hi=tuple(s_hi), s_star=max(s_hi),
            s_tilde=tuple(s_tilde), s_tilde_star=max(s_tilde),
        )

    @classmethod
    def from_config(cls, config: ProblemConfig) -> "ThetaSchedule":
        return cls.build(config.dist, config.beta, config.gamma,
                         config.depth, config.tail_eps)

    def index_of(self, theta: float) -> int:
        for n, t in enumerate(self.thetas):
            if t == theta or abs(t - theta) <= 1e-14 * abs(t):
                return n
        raise ValidationError(f"theta={theta} is not on the schedule")


def h_lower(schedule: ThetaSchedule, theta: float) -> Interval:
    """Bracket of the lower envelope constant at theta.

    Schedule points reuse the cached recursion values; any other
    theta in [gamma, 0) is priced by a fresh truncated product.
    """
    try:
        return schedule.h_lo[schedule.index_of(theta)]
    except ValidationError:
        return _h_lower_at(schedule.dist, schedule.beta, schedule.tail_eps, theta)


def h_upper(schedule: ThetaSchedule, theta: float) -> Interval:
    """Bracket of the upper envelope constant at theta (schedule points)."""
    try:
        return schedule.h_up[schedule.index_of(theta)]
    except ValidationError:
        # descend a fresh orbit from theta until the Jensen closure is tight
        sub = ThetaSchedule.build(schedule.dist, schedule.beta, theta, 1,
                                  schedule.tail_eps)
        return sub.h_up[0]


def s_bound(schedule: ThetaSchedule, theta: float) -> float:
    """Conservative upper bracket of the barrier bound s(theta) >= xi(theta)."""
    try:
        return schedule.s_hi[schedule.index_of(theta)]
    except ValidationError:
        s_cap = schedule.beta * schedule.dist.mean_positive / (1.0 - schedule.beta) ** 2
        hl = h_lower(schedule, theta)
        hu = h_upper(schedule, theta)
        num = math.log(hu.hi) - math.log(hl.lo)
        if abs(theta) < 1e-8 and num < 16.0 * math.ulp(1.0):
            return s_cap
        return max(0.0, min(num / (theta * (schedule.beta - 1.0)), s_cap))


def required_cap(config: ProblemConfig) -> int:
    """Smallest admissible x_max: ceil of the s* over-estimate."""
    schedule = ThetaSchedule.from_config(config)
    return math.ceil(schedule.s_star - 1e-12)


def suggest_depth(config_like, x_max: int | None = None) -> int:
    """Depth putting the a-priori depth-0 bracket width near tail_eps.

    The terminal bracket has width of order |theta_N| * (x_max + tail
    income scale); backups never widen it.  Accepts a ProblemConfig.
    """
    cap = config_like.x_max if x_max is None else x_max
    scale = cap + 1.0 + _pos_mean_tail(config_like.dist, config_like.beta)
    n = math.log(config_like.tail_eps / (abs(config_like.gamma) * scale)) / math.log(config_like.beta)
    return max(1, math.ceil(n))


# ---------------------------------------------------------------------------
# backward induction


def _extended_next(row: np.ndarray, theta_next: float, x_max: int,
                   support_min: int, support_max: int) -> np.ndarray:
    """Next-depth values on x' in [support_min, x_max + support_max].

    ``row`` is a table row of length x_max + 2 whose leading entry is the
    ruined state.  Ruined states are worth exactly 1; states above the cap
    are priced by the pay-down extension.
    """
    lo_x = min(support_min, -1)
    hi_x = x_max + max(support_max, 0)
    ext = np.empty(hi_x - lo_x + 1)
    off = -lo_x
    ext[: off] = 1.0  # all x' < 0
    ext[off : off + x_max + 1] = row[1:]
    for x_over in range(x_max + 1, hi_x + 1):
        ext[off + x_over] = math.exp(theta_next * (x_over - x_max)) * row[x_max + 1]
    return ext


def _g_rows(dist: IncomeDistribution, theta_next: float,
            next_lo: np.ndarray, next_hi: np.ndarray,
            x_max: int) -> tuple[np.ndarray, np.ndarray]:
    """G(v) = E J_next(v + Z) for v = 0..x_max, both bracket ends.

    Income terms accumulate in ascending k so results are reproducible
    bit-for-bit regardless of threading.
    """
    smin, smax = dist.support_min, dist.support_max
    ext_lo = _extended_next(next_lo, theta_next, x_max, smin, smax)
    ext_hi = _extended_next(next_hi, theta_next, x_max, smin, smax)
    off = -min(smin, -1)
    g_lo = np.zeros(x_max + 1)
    g_hi = np.zeros(x_max + 1)
    v = np.arange(x_max + 1)
    for k, q in dist.items():
        g_lo += q * ext_lo[off + v + k]
        g_hi += q * ext_hi[off + v + k]
    return g_lo, g_hi


def _minimise(x: int, theta: float, g_lo: np.ndarray, g_hi: np.ndarray
              ) -> tuple[float, float, int]:
    """Min over a in {0..x} of e^{theta a} G(x-a); largest lo-minimiser."""
    pays = np.exp(theta * np.arange(x + 1))
    vals_lo = pays * g_lo[x::-1]
    vals_hi = pays * g_hi[x::-1]
    lo = float(vals_lo.min())
    hi = float(vals_hi.min())
    ties = np.nonzero(vals_lo <= lo + TIE_TOL)[0]
    return lo, hi, int(ties[-1])


def bellman_backup_exp(config: ProblemConfig, theta_n: float, x: int,
                       next_lo: np.ndarray, next_hi: np.ndarray
                       ) -> tuple[float, float, int]:
    """One dynamic-programming backup at surplus x and parameter theta_n.

    ``next_lo``/``next_hi`` are depth-(n+1) table rows of length
    x_max + 2 (leading ruined entry).  Returns the bracketed minimum and
    the largest action attaining the lo-minimum within TIE_TOL.
    """
    if x < 0 or x > config.x_max:
        raise ValidationError(f"x={x} outside [0, {config.x_max}]")
    g_lo, g_hi = _g_rows(config.dist, theta_n * config.beta, next_lo, next_hi,
                         config.x_max)
    return _minimise(x, theta_n, g_lo, g_hi)


@dataclass(frozen=True)
class ExpValueTable:
    """Certified brackets lo <= J <= hi over (depth n, surplus x).

    Arrays have shape (N+1, x_max+2); column 0 is the ruined row (worth
    exactly 1), column x+1 holds surplus x.
    """

    config: ProblemConfig
    schedule: ThetaSchedule
    lo: np.ndarray
    hi: np.ndarray

    @property
    def depth(self) -> int:
        return self.schedule.depth

    def value_bracket(self, n: int, x: int) -> Interval:
        """Bracket of J(x, theta_n), extending beyond the cap exactly."""
        if x < 0:
            return Interval(1.0, 1.0)
        cap = self.config.x_max
        if x <= cap:
            return Interval(float(self.lo[n, x + 1]), float(self.hi[n, x + 1]))
        fac = math.exp(self.schedule.thetas[n] * (x - cap))
        return Interval(float(self.lo[n, cap + 1]) * fac,
                        float(self.hi[n, cap + 1]) * fac)

    def widths(self, n: int = 0) -> np.ndarray:
        return self.hi[n, 1:] - self.lo[n, 1:]


@dataclass(frozen=True)
class ExpPolicy:
    """Largest-minimiser decision rules per depth, with barriers.

    ``action[n, x]`` is the dividend at surplus x and depth n < N;
    ``xi[n]`` is the largest surplus with action 0 (the barrier).
    """

    config: ProblemConfig
    schedule: ThetaSchedule
    action: np.ndarray
    xi: np.ndarray

    @property
    def depth(self) -> int:
        return int(self.action.shape[0])

    def action_at(self, n: int, x: int) -> int:
        """Total lookup: clamps depth, pays overflow above the cap."""
        if x < 0:
            return 0
        n = min(n, self.depth - 1)
        cap = self.config.x_max
        if x <= cap:
            return int(self.action[n, x])
        return x - cap + int(self.action[n, cap])


def solve_exp(config: ProblemConfig, *, max_width: float | None = None,
              terminal: str = "tail") -> tuple[ExpValueTable, ExpPolicy]:
    """Backward induction over the theta-schedule with certified brackets.

    ``terminal`` selects the depth-N closure: "tail" (default) encloses
    the infinite-horizon continuation with the two-sided envelope, while
    "unit" sets the terminal row to exactly 1, which turns the table into
    the optimal value of the N-step problem where payouts simply stop
    (useful for exact cross-validation against brute-force enumeration).

    When ``max_width`` is given, raises DepthTooSmall if the depth-0
    bracket is wider than that anywhere.
    """
    if config.utility is not Utility.EXPONENTIAL:
        raise ValidationError("solve_exp requires the exponential utility")
    if terminal not in ("tail", "unit"):
        raise ValidationError(f"unknown terminal mode {terminal!r}")
    schedule = ThetaSchedule.from_config(config)
    cap_need = math.ceil(schedule.s_star - 1e-12)
    if config.x_max < cap_need:
        raise CapTooSmall(
            f"x_max={config.x_max} below barrier bound {cap_need}")

    n_depth, x_max = config.depth, config.x_max
    xs = np.arange(x_max + 1)
    lo = np.ones((n_depth + 1, x_max + 2))
    hi = np.ones((n_depth + 1, x_max + 2))
    if terminal == "tail":
        decay = np.exp(schedule.thetas[n_depth] * xs)
        lo[n_depth, 1:] = decay * schedule.h_lo[n_depth].lo
        hi[n_depth, 1:] = np.minimum(1.0, decay * schedule.h_up[n_depth].hi)
    action = np.zeros((n_depth, x_max + 1), dtype=np.int64)
    xi = np.zeros(n_depth, dtype=np.int64)

    for n in range(n_depth - 1, -1, -1):
        theta = schedule.thetas[n]
        # the pay-down extension prices states above the cap, except that
        # the unit terminal row is 1 everywhere, so it extends flat
        theta_next = schedule.thetas[n + 1]
        if terminal == "unit" and n + 1 == n_depth:
            theta_next = 0.0
        g_lo, g_hi = _g_rows(config.dist, theta_next,
                             lo[n + 1], hi[n + 1], x_max)
        for x in range(x_max + 1):
            v_lo, v_hi, a_star = _minimise(x, theta, g_lo, g_hi)
            lo[n, x + 1] = v_lo
            hi[n, x + 1] = v_hi
            action[n, x] = a_star
        zero_at = np.nonzero(action[n] == 0)[0]
        xi[n] = int(zero_at[-1])

    table = ExpValueTable(config=config, schedule=schedule, lo=lo, hi=hi)
    policy = ExpPolicy(config=config, schedule=schedule, action=action, xi=xi)
    if max_width is not None:
        worst = float(np.max(table.widths(0)))
        if worst > max_width:
            raise DepthTooSmall(
                f"depth {n_depth} leaves bracket width {worst:.3e} > {max_width:.3e}")
    return table, policy


# ---------------------------------------------------------------------------
# band functions


@dataclass(frozen=True)
class BandFunction:
    """Cut-point form of a payout rule.

    Pays nothing on [0, c_0] and on each [d_k, c_k]; pays down to the
    closest lower cut level everywhere else.  The interleaving
    0 <= c_0 <= d_1 <= c_1 <= ... <= d_n <= c_n with d_k - c_{k-1} >= 2
    is validated at construction.
    """

    c: tuple[int, ...]
    d: tuple[int, ...]

    def __post_init__(self):
        if not self.c:
            raise NotABand("a band function needs at least c_0")
        if len(self.d) != len(self.c) - 1:
            raise NotABand(f"cut counts mismatch: {len(self.c)} c's, {len(self.d)} d's")
        if self.c[0] < 0:
            raise NotABand(f"c_0 must be nonnegative, got {self.c[0]}")
        for k, dk in enumerate(self.d):
            if dk - self.c[k] < 2:
                raise NotABand(f"d_{k+1}={dk} too close to c_{k}={self.c[k]}")
            if self.c[k + 1] < dk:
                raise NotABand(f"c_{k+1}={self.c[k+1]} below d_{k+1}={dk}")

    def evaluate(self, x: int) -> int:
        if x <= self.c[0]:
            return 0
        for k in range(len(self.d)):
            if x < self.d[k]:  # in the gap (c_k, d_{k+1})
                return x - self.c[k]
            if x <= self.c[k + 1]:  # inside the band [d_{k+1}, c_{k+1}]
                return 0
        return x - self.c[-1]

    def cut_string(self) -> str:
        """Interleaved cuts c0;d1;c1;...;dn;cn for CSV output."""
        parts = [str(self.c[0])]
        for dk, ck in zip(self.d, self.c[1:]):
            parts.append(str(dk))
            parts.append(str(ck))
        return ";".join(parts)


def band_from_actions(column: Sequence[int]) -> BandFunction:
    """Parse one depth's action column into a band function.

    Raises NotABand when the column cannot be written in cut-point form;
    for columns produced by the solver that signals a bug, since the
    optimal rule is guaranteed to be a band.
    """
    acts = [int(a) for a in column]
    if not acts or acts[0] != 0:
        raise NotABand("action at x=0 must be 0")
    runs: list[list[int]] = []
    for x, a in enumerate(acts):
        if a == 0:
            if runs and runs[-1][1] == x - 1:
                runs[-1][1] = x
            else:
                runs.append([x, x])
    if runs[0][0] != 0:
        raise NotABand("zero-payment region must start at x=0")
    c = [runs[0][1]]
    d = []
    for start, end in runs[1:]:
        d.append(start)
        c.append(end)
    band = BandFunction(c=tuple(c), d=tuple(d))
    for x, a in enumerate(acts):
        if band.evaluate(x) != a:
            raise NotABand(f"action {a} at x={x} breaks the cut structure")
    return band


def extract_bands(policy: ExpPolicy) -> list[BandFunction]:
    """Band form of every depth's rule; NotABand signals a solver bug."""
    return [band_from_actions(policy.action[n]) for n in range(policy.depth)]


# ---------------------------------------------------------------------------
# risk-neutral baseline


@dataclass(frozen=True)
class NeutralSolution:
    """Stationary solution of the risk-neutral problem on [0, x_max]."""

    config: ProblemConfig
    values: np.ndarray
    action: np.ndarray
    iterations: int

    def band(self) -> BandFunction:
        return band_from_actions(self.action)

    def action_at(self, x: int) -> int:
        if x < 0:
            return 0
        cap = self.config.x_max
        if x <= cap:
            return int(self.action[x])
        return x - cap + int(self.action[cap])


def _neutral_g(dist: IncomeDistribution, values: np.ndarray, x_max: int) -> np.ndarray:
    """E V(v + Z) with V = 0 after ruin and linear pay-down above the cap."""
    smin, smax = dist.support_min, dist.support_max
    lo_x = min(smin, -1)
    hi_x = x_max + max(smax, 0)
    ext = np.zeros(hi_x - lo_x + 1)
    off = -lo_x
    ext[off : off + x_max + 1] = values
    for x_over in range(x_max + 1, hi_x + 1):
        ext[off + x_over] = values[x_max] + (x_over - x_max)
    g = np.zeros(x_max + 1)
    v = np.arange(x_max + 1)
    for k, q in dist.items():
        g += q * ext[off + v + k]
    return g


def solve_neutral(config: ProblemConfig, *, max_iterations: int = 1_000_000
                  ) -> NeutralSolution:
    """Value iteration for sup E sum beta^k a_k from the upper envelope.

    Starts at V_0(x) = x + beta EZ+/(1-beta), a provable over-estimate, so
    iterates decrease monotonically; stops once the contraction bound
    certifies a sup-norm error below tail_eps.
    """
    if config.utility is not Utility.RISK_NEUTRAL:
        raise ValidationError("solve_neutral requires the risk-neutral utility")
    beta, x_max, dist = config.beta, config.x_max, config.dist
    xs = np.arange(x_max + 1, dtype=float)
    values = xs + _pos_mean_tail(dist, beta)
    stop = config.tail_eps * (1.0 - beta) / beta
    iterations = 0
    while iterations < max_iterations:
        g = _neutral_g(dist, values, x_max)
        new = np.empty_like(values)
        for x in range(x_max + 1):
            new[x] = (np.arange(x + 1) + beta * g[x::-1]).max()
        iterations += 1
        diff = float(np.max(np.abs(new - values)))
        values = new
        if diff <= stop:
            break
    g = _neutral_g(dist, values, x_max)
    action = np.zeros(x_max + 1, dtype=np.int64)
    for x in range(x_max + 1):
        vals = np.arange(x + 1) + beta * g[x::-1]
        best = float(vals.max())
        ties = np.nonzero(vals >= best - TIE_TOL)[0]
        action[x] = int(ties[-1])
    return NeutralSolution(config=config, values=values, action=action,
                           iterations=iterations)
