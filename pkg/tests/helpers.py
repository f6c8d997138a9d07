"""Shared instance builders for the test suite."""

from divbands.exp_solver import required_cap, suggest_depth
from divbands.model import ProblemConfig, Utility, validate_distribution

# certain unit loss every period: ruin next step, every closed form is exact
DOWN_ONE = {-1: 1.0}


def two_point(p: float, n: int) -> dict[int, float]:
    """Gain 1 with probability p, lose n otherwise."""
    return {1: p, -n: 1.0 - p}


def make_config(utility: str, mapping: dict[int, float], beta: float,
                gamma: float, x_max: int, depth: int, **kw) -> ProblemConfig:
    return ProblemConfig(beta=beta, gamma=gamma, utility=Utility.parse(utility),
                         dist=validate_distribution(mapping), x_max=x_max,
                         depth=depth, **kw)


def sized_exp_config(mapping: dict[int, float], beta: float, gamma: float,
                     depth: int | None = None, **kw) -> ProblemConfig:
    """Exponential config with x_max at the certified cap.

    The cap bound depends (weakly) on the depth through the parameter
    schedule, so the probe runs twice: once to size the depth, once to
    size the cap at that depth.
    """
    dist = validate_distribution(mapping)
    probe = ProblemConfig(beta=beta, gamma=gamma, utility=Utility.EXPONENTIAL,
                          dist=dist, x_max=10_000, depth=16, **kw)
    d = depth if depth is not None else suggest_depth(probe, x_max=required_cap(probe))
    probe = ProblemConfig(beta=beta, gamma=gamma, utility=Utility.EXPONENTIAL,
                          dist=dist, x_max=10_000, depth=d, **kw)
    return ProblemConfig(beta=beta, gamma=gamma, utility=Utility.EXPONENTIAL,
                         dist=dist, x_max=required_cap(probe), depth=d, **kw)


def claim_family_configs(depth: int | None = None) -> list[ProblemConfig]:
    """The two-point reference family used by the structural suites."""
    out = []
    for p in (0.4, 0.6):
        for n in (1, 2):
            for gamma in (-1.0, -0.1):
                out.append(sized_exp_config(two_point(p, n), 0.9, gamma,
                                            depth=depth))
    return out
