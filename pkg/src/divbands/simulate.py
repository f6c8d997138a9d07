"""Monte Carlo validation of solved payout policies.

Paths stream through the surplus recursion in fixed-size batches of
2^14, each batch drawing from its own Philox substream obtained by
jumping the seeded generator, so path i always sees the same randomness
no matter how many paths run, in how many batches, or on how many
threads.  One uniform is drawn per path per step, ruined paths included
(their draws are burned), keeping the stream layout independent of the
ruin pattern; a batch stops early once every path in it is ruined.

Policies are looked up vectorized per step.  Beyond the solved horizon
the last depth's rule is reused (the surplus process does not care, and
the pay-down property that makes ruin certain is preserved); above the
surplus cap the overflow is paid out on top of the cap rule.  Discounted
payouts accumulate at the true beta^t scale throughout; after max_steps
a surviving path is truncated and flagged, its unpaid tail bounded by
beta^max_steps x_max/(1-beta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PolicyUndefined, InvariantViolation, ValidationError
from .exp_solver import ExpPolicy, NeutralSolution
from .model import ProblemConfig, Utility
from .power_solver import PowerPolicy

BATCH = 1 << 14  # paths per Philox substream

__all__ = ["SimulationResult", "simulate_paths", "ruin_certainty_check"]


@dataclass(frozen=True)
class SimulationResult:
    """Per-path outcomes plus the derived summary statistics."""

    config: ProblemConfig
    x0: int
    seed: int
    max_steps: int
    y0: float
    discounted_sums: np.ndarray  # per-path sum of beta^t a_t
    ruin_times: np.ndarray       # first step with x < 0, capped at max_steps
    truncated: np.ndarray        # still alive at max_steps
    utilities: np.ndarray        # U(y0 + discounted sum) per path

    @property
    def n_paths(self) -> int:
        return int(self.discounted_sums.shape[0])

    @property
    def mean_utility(self) -> float:
        return float(np.sum(self.utilities) / self.n_paths)

    @property
    def std_err(self) -> float:
        if self.n_paths < 2:
            return math.inf
        return float(np.std(self.utilities, ddof=1) / math.sqrt(self.n_paths))

    @property
    def ruin_fraction(self) -> float:
        return float(np.sum(~self.truncated) / self.n_paths)

    def summary(self) -> dict:
        """The reporting dict; mean ruin time averages ruined paths only."""
        ruined = ~self.truncated
        mean_ruin = (float(np.sum(self.ruin_times[ruined]) / np.sum(ruined))
                     if ruined.any() else None)
        return {
            "n_paths": self.n_paths,
            "mean_utility": self.mean_utility,
            "std_err": self.std_err,
            "ruin_fraction": self.ruin_fraction,
            "mean_ruin_time": mean_ruin,
            "truncated_fraction": float(np.sum(self.truncated) / self.n_paths),
        }


def _step_actions(policy, t: int, x: np.ndarray, s: np.ndarray,
                  alive: np.ndarray) -> np.ndarray:
    """Vectorized policy lookup for one step; 0 on ruined paths."""
    a = np.zeros_like(x)
    idx = np.nonzero(alive)[0]
    if idx.size == 0:
        return a
    xa = x[idx]
    if isinstance(policy, ExpPolicy):
        row = policy.action[min(t, policy.depth - 1)]
        cap = policy.config.x_max
        clipped = np.minimum(xa, cap)
        base = row[clipped]
        a[idx] = np.where(xa > cap, xa - cap + row[cap], base)
    elif isinstance(policy, NeutralSolution):
        cap = policy.config.x_max
        clipped = np.minimum(xa, cap)
        base = policy.action[clipped]
        a[idx] = np.where(xa > cap, xa - cap + policy.action[cap], base)
    elif isinstance(policy, PowerPolicy):
        d = min(t, policy.depth - 1)
        row = policy.action[d]
        cap = policy.config.x_max
        extra = np.maximum(xa - cap, 0)
        sq = s[idx] + extra * policy.config.beta ** t
        cols = np.searchsorted(policy.grid.points, sq, side="right") - 1
        cols = np.maximum(cols, 0)
        a[idx] = extra + row[np.minimum(xa, cap), cols]
    elif callable(policy):
        vals = [policy(t, int(xv), float(sv)) for xv, sv in zip(xa, s[idx])]
        arr = np.asarray(vals)
        if not np.issubdtype(arr.dtype, np.integer):
            raise PolicyUndefined(f"policy returned non-integer actions at step {t}")
        a[idx] = arr
    else:
        raise PolicyUndefined(f"cannot simulate a {type(policy).__name__}")
    bad = (a[idx] < 0) | (a[idx] > xa)
    if np.any(bad):
        j = idx[np.nonzero(bad)[0][0]]
        raise PolicyUndefined(
            f"action {a[j]} outside {{0..{x[j]}}} at step {t}, x={x[j]}")
    return a


def simulate_paths(config: ProblemConfig, policy, x0: int, n_paths: int,
                   max_steps: int = 10_000, seed: int | None = None,
                   y0: float = 0.0) -> SimulationResult:
    """Simulate the surplus process under a policy; reproducible per seed.

    Returns per-path discounted payout sums, ruin times (capped at
    max_steps, with surviving paths flagged truncated) and utilities of
    y0 plus the payout sum.  The seed defaults to the config's.
    """
    if n_paths < 1:
        raise ValidationError(f"n_paths must be positive, got {n_paths}")
    if max_steps < 1:
        raise ValidationError(f"max_steps must be positive, got {max_steps}")
    if config.utility is Utility.LOGARITHMIC and y0 <= 0:
        raise ValidationError("log utility needs y0 > 0")
    seed = config.seed if seed is None else seed
    beta = config.beta
    support = np.array(config.dist.support, dtype=np.int64)
    cum = np.cumsum(np.array(config.dist.probs))

    sums = np.empty(n_paths)
    times = np.empty(n_paths, dtype=np.int64)
    trunc = np.empty(n_paths, dtype=bool)

    base = np.random.Philox(key=seed)
    for b in range(0, n_paths, BATCH):
        rng = np.random.Generator(base.jumped(b // BATCH))
        width = min(BATCH, n_paths - b)
        x = np.full(width, x0, dtype=np.int64)
        s = np.zeros(width)
        ruined = x < 0
        rtime = np.full(width, max_steps, dtype=np.int64)
        rtime[ruined] = 0
        disc = 1.0
        for t in range(max_steps):
            if ruined.all():
                break
            alive = ~ruined
            a = _step_actions(policy, t, x, s, alive)
            s[alive] += disc * a[alive]
            draws = rng.random(BATCH)[:width]
            z = support[np.minimum(np.searchsorted(cum, draws, side="right"),
                                   len(support) - 1)]
            x_next = x - a + z
            now_ruined = alive & (x_next < 0)
            rtime[now_ruined] = t + 1
            x = np.where(alive, x_next, x)
            ruined |= now_ruined
            disc *= beta
        sums[b:b + width] = s
        times[b:b + width] = rtime
        trunc[b:b + width] = ~ruined

    wealth = y0 + sums
    if config.utility is Utility.EXPONENTIAL:
        utils = np.exp(config.gamma * wealth) / config.gamma
    elif config.utility is Utility.POWER:
        utils = np.power(wealth, config.gamma)
    elif config.utility is Utility.LOGARITHMIC:
        utils = np.log(wealth)
    else:
        utils = wealth
    return SimulationResult(config=config, x0=x0, seed=seed,
                            max_steps=max_steps, y0=y0, discounted_sums=sums,
                            ruin_times=times, truncated=trunc, utilities=utils)


def _max_retained(policy) -> int:
    """Largest post-payout surplus the rule can leave standing."""
    if isinstance(policy, ExpPolicy):
        xs = np.arange(policy.action.shape[1])
        return int((xs - policy.action).max())
    if isinstance(policy, NeutralSolution):
        xs = np.arange(policy.action.shape[0])
        return int((xs - policy.action).max())
    if isinstance(policy, PowerPolicy):
        xs = np.arange(policy.action.shape[1])[:, None]
        return int((xs - policy.action).max())
    raise PolicyUndefined(
        f"ruin bound needs a solver policy, got {type(policy).__name__}")


def ruin_certainty_check(config: ProblemConfig, policy, x0: int,
                         n_paths: int, max_steps: int = 10_000,
                         seed: int | None = None) -> float:
    """Verify that ruin is as certain as the block-counting bound demands.

    With xi* the largest surplus the rule leaves standing, any window of
    xi*+1 consecutive negative incomes forces ruin, so the ruin
    probability by max_steps is at least
    1 - (1 - p_neg^(xi*+1))^floor(max_steps/(xi*+1)).  Asserts the
    simulated fraction reaches that bound minus five standard errors and
    returns the fraction.
    """
    result = simulate_paths(config, policy, x0, n_paths,
                            max_steps=max_steps, seed=seed,
                            y0=1.0 if config.utility is Utility.LOGARITHMIC else 0.0)
    frac = result.ruin_fraction
    xi_star = _max_retained(policy)
    p_neg = config.dist.p_negative
    blocks = max_steps // (xi_star + 1)
    bound = 1.0 - (1.0 - p_neg ** (xi_star + 1)) ** blocks
    sigma = math.sqrt(max(frac * (1.0 - frac), 1e-12) / n_paths)
    if frac < bound - 5.0 * sigma:
        raise InvariantViolation(
            f"ruined fraction {frac:.6f} below certainty bound {bound:.6f} "
            f"- 5 sigma ({sigma:.2e}) with xi*={xi_star}, p_neg={p_neg:.3f}")
    return frac
