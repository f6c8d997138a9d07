"""Input validation, dynamics primitives, utility helpers."""

import math

import pytest

from divbands.errors import (
    CapTooSmall,
    DomainError,
    IllegalAction,
    NegativeMass,
    NoRuinRisk,
    NotNormalized,
    ValidationError,
)
from divbands.model import (
    ProblemConfig,
    Utility,
    action_set,
    arrow_pratt,
    certainty_equivalent,
    step,
    utility,
    validate_distribution,
)
from helpers import make_config, two_point


def test_utility_parse():
    assert Utility.parse(" Exponential ") is Utility.EXPONENTIAL
    assert Utility.parse("risk_neutral") is Utility.RISK_NEUTRAL
    with pytest.raises(ValidationError):
        Utility.parse("quadratic")


def test_distribution_accepts_float_dust():
    d = validate_distribution({1: 0.1, 2: 0.2, -1: 0.7})
    assert d.support == (-1, 1, 2)
    assert math.fsum(d.probs) == pytest.approx(1.0, abs=1e-15)


def test_distribution_rejections():
    with pytest.raises(NotNormalized):
        validate_distribution({1: 0.3, -1: 0.3})
    with pytest.raises(NegativeMass):
        validate_distribution({1: 1.2, -1: -0.2})
    with pytest.raises(NoRuinRisk):
        validate_distribution({0: 0.5, 1: 0.5})
    with pytest.raises(ValidationError):
        validate_distribution({})


def test_distribution_drops_zero_mass():
    d = validate_distribution({1: 0.5, -1: 0.5, 3: 0.0})
    assert d.support == (-1, 1)


def test_distribution_moments():
    d = validate_distribution(two_point(0.6, 2))
    assert d.p_negative == pytest.approx(0.4)
    assert d.mean_positive == pytest.approx(0.6)
    assert d.mean == pytest.approx(0.6 - 0.8)


def test_action_set_and_step():
    assert list(action_set(3)) == [0, 1, 2, 3]
    assert list(action_set(-2)) == [0]
    assert step(3, 2, -1) == 0
    assert step(-2, 0, 5) == -2  # absorbing
    with pytest.raises(IllegalAction):
        step(3, 4, 0)
    with pytest.raises(IllegalAction):
        step(-1, 1, 0)


@pytest.mark.parametrize("kw,msg", [
    (dict(beta=1.0), "beta"),
    (dict(beta=0.0), "beta"),
    (dict(gamma=0.5), "gamma"),
    (dict(x_max=-1), "x_max"),
    (dict(depth=0), "depth"),
    (dict(tail_eps=0.0), "tail_eps"),
    (dict(s_grid_points=1), "s_grid_points"),
])
def test_config_field_validation(kw, msg):
    base = dict(beta=0.5, gamma=-1.0, x_max=4, depth=3)
    base.update(kw)
    extra = {k: v for k, v in base.items()
             if k not in ("beta", "gamma", "x_max", "depth")}
    with pytest.raises(ValidationError, match=msg):
        make_config("exponential", {1: 0.5, -1: 0.5}, base["beta"],
                    base["gamma"], base["x_max"], base["depth"], **extra)


def test_power_gamma_range():
    with pytest.raises(ValidationError):
        make_config("power", {1: 0.5, -1: 0.5}, 0.5, 1.2, 4, 3)
    with pytest.raises(ValidationError):
        make_config("power", {1: 0.5, -1: 0.5}, 0.5, 0.0, 4, 3)


def test_cap_gate_exponential():
    with pytest.raises(CapTooSmall):
        make_config("exponential", two_point(0.6, 1), 0.9, -1.0, 10, 60)


def test_cap_gate_neutral_is_not_overtight():
    # bound is exactly 54; float dust must not push the gate to 55
    make_config("risk_neutral", two_point(0.6, 1), 0.9, 0.0, 54, 5)
    with pytest.raises(CapTooSmall):
        make_config("risk_neutral", two_point(0.6, 1), 0.9, 0.0, 53, 5)


@pytest.mark.parametrize("u,gamma,w", [
    (Utility.EXPONENTIAL, -0.7, 3.0),
    (Utility.POWER, 0.4, 2.5),
    (Utility.LOGARITHMIC, 0.0, 1.7),
    (Utility.RISK_NEUTRAL, 0.0, 4.2),
])
def test_certainty_equivalent_inverts_utility(u, gamma, w):
    assert certainty_equivalent(u, gamma, utility(u, gamma, w)) == pytest.approx(w, rel=1e-12)


def test_utility_domain_errors():
    with pytest.raises(DomainError):
        utility(Utility.POWER, 0.5, -1.0)
    with pytest.raises(DomainError):
        utility(Utility.LOGARITHMIC, 0.0, 0.0)
    with pytest.raises(DomainError):
        certainty_equivalent(Utility.EXPONENTIAL, -1.0, 0.5)  # wrong sign


def test_arrow_pratt():
    assert arrow_pratt(Utility.EXPONENTIAL, -2.0, 10.0) == 2.0
    assert arrow_pratt(Utility.POWER, 0.25, 3.0) == pytest.approx(0.25)
    assert arrow_pratt(Utility.LOGARITHMIC, 0.0, 4.0) == 0.25
    assert arrow_pratt(Utility.RISK_NEUTRAL, 0.0, 1.0) == 0.0


def test_config_round_trip_through_helpers():
    cfg = make_config("exponential", {1: 0.5, -1: 0.5}, 0.5, -1.0, 4, 3)
    assert cfg.utility is Utility.EXPONENTIAL
    eu = utility(cfg.utility, cfg.gamma, 2.0)
    assert certainty_equivalent(cfg.utility, cfg.gamma, eu) == pytest.approx(2.0)
