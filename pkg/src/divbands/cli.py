"""Command line front end.

Every subcommand reads one YAML config and writes fixed-name files under
the config's ``output_dir``: values.csv, policy.csv, bands.csv and
summary.json (each command writes the subset that makes sense for it).
Emission is deterministic: floats are rendered with repr (shortest
round-trip form), JSON keys are sorted, newlines are always "\\n", and
the solvers themselves are fixed-order numpy code, so re-running a
command reproduces its files byte for byte.  ``--threads`` is accepted
on every subcommand and never changes results.

Exit codes: 0 on success, 2 for rejected inputs (bad config, bad flag
values, unknown subcommand), 3 when a certified invariant fails.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigParse, InvariantViolation, UnknownSubcommand, ValidationError
from .exp_solver import extract_bands, solve_exp, solve_neutral
from .howard import howard_solve
from .model import ProblemConfig, Utility, validate_distribution
from .oracle import exact_optimal
from .power_solver import barrier_diagnostics, solve_log, solve_power
from .simulate import simulate_paths

CONFIG_KEYS = {
    "beta", "gamma", "utility", "distribution", "distribution_preset",
    "x_max", "depth", "tail_eps", "s_grid_points", "seed", "output_dir",
}
REQUIRED_KEYS = {"beta", "gamma", "utility", "x_max", "depth"}

SUBCOMMANDS = (
    "solve-exp", "solve-power", "solve-log", "solve-neutral",
    "howard", "oracle-check", "simulate", "bands",
)


# -- config ingestion -------------------------------------------------------

def _as_int(raw, key: str) -> int:
    # bool is an int subclass; "depth: true" must not slip through
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise ConfigParse(f"{key} must be an integer, got {raw!r}")
    return raw


def _as_float(raw, key: str) -> float:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigParse(f"{key} must be a number, got {raw!r}")
    return float(raw)


def _parse_distribution(raw) -> dict[int, float]:
    if not isinstance(raw, dict) or not raw:
        raise ConfigParse("distribution must be a non-empty mapping of integer offsets to probabilities")
    out: dict[int, float] = {}
    for k, v in raw.items():
        if isinstance(k, bool) or not isinstance(k, int):
            raise ConfigParse(f"distribution offset {k!r} is not an integer")
        out[k] = _as_float(v, f"distribution[{k}]")
    return out


def _parse_preset(raw) -> dict[int, float]:
    if not isinstance(raw, dict) or set(raw) != {"p", "n"}:
        raise ConfigParse("distribution_preset must be a mapping with exactly the keys p and n")
    p = _as_float(raw["p"], "distribution_preset.p")
    n = _as_int(raw["n"], "distribution_preset.n")
    if not 0.0 < p < 1.0:
        raise ConfigParse(f"distribution_preset.p must be in (0,1), got {p}")
    if n < 1:
        raise ConfigParse(f"distribution_preset.n must be a positive integer, got {n}")
    return {1: p, -n: 1.0 - p}


def load_config(path: str | Path) -> tuple[ProblemConfig, Path]:
    """Read a YAML run config; returns the validated config and output dir."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigParse(f"cannot read config {path}: {exc}")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigParse(f"invalid YAML in {path}: {exc}")
    if not isinstance(raw, dict):
        raise ConfigParse(f"config {path} must be a YAML mapping")

    unknown = sorted(set(raw) - CONFIG_KEYS)
    if unknown:
        raise ConfigParse(f"unknown config keys: {', '.join(unknown)}")
    missing = sorted(REQUIRED_KEYS - set(raw))
    if missing:
        raise ConfigParse(f"missing config keys: {', '.join(missing)}")

    has_map = "distribution" in raw
    has_preset = "distribution_preset" in raw
    if has_map == has_preset:
        raise ConfigParse("config needs exactly one of distribution, distribution_preset")
    mapping = _parse_distribution(raw["distribution"]) if has_map \
        else _parse_preset(raw["distribution_preset"])

    utility = raw["utility"]
    if not isinstance(utility, str):
        raise ConfigParse(f"utility must be a string, got {utility!r}")

    config = ProblemConfig(
        beta=_as_float(raw["beta"], "beta"),
        gamma=_as_float(raw["gamma"], "gamma"),
        utility=Utility.parse(utility),
        dist=validate_distribution(mapping),
        x_max=_as_int(raw["x_max"], "x_max"),
        depth=_as_int(raw["depth"], "depth"),
        tail_eps=_as_float(raw.get("tail_eps", 1e-8), "tail_eps"),
        s_grid_points=_as_int(raw.get("s_grid_points", 512), "s_grid_points"),
        seed=_as_int(raw.get("seed", 0), "seed"),
    )
    outdir = raw.get("output_dir", "out")
    if not isinstance(outdir, str):
        raise ConfigParse(f"output_dir must be a string, got {outdir!r}")
    return config, Path(outdir)


# -- deterministic emission -------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(float(v))  # strips numpy scalar wrappers
    return str(v)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path: Path, obj) -> None:
    with open(path, "w", newline="") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_echo(config: ProblemConfig) -> dict:
    return {
        "beta": config.beta,
        "gamma": config.gamma,
        "utility": config.utility.value,
        "distribution": {str(k): p for k, p in config.dist.items()},
        "x_max": config.x_max,
        "depth": config.depth,
        "tail_eps": config.tail_eps,
        "s_grid_points": config.s_grid_points,
        "seed": config.seed,
    }


# -- subcommands ------------------------------------------------------------

def _cmd_solve_exp(config: ProblemConfig, outdir: Path, args) -> int:
    table, policy = solve_exp(config)
    bands = extract_bands(policy)
    cuts = [b.cut_string() for b in bands]
    sched = table.schedule

    def value_rows():
        for n in range(config.depth):
            theta = sched.thetas[n]
            for x in range(config.x_max + 1):
                yield (n, theta, x, table.lo[n, x + 1], table.hi[n, x + 1],
                       int(policy.action[n, x]), int(policy.xi[n]), cuts[n])

    _write_csv(outdir / "values.csv",
               ["n", "theta", "x", "j_lo", "j_hi", "action", "xi", "band_cuts"],
               value_rows())
    _write_csv(outdir / "policy.csv", ["n", "x", "action"],
               ((n, x, int(policy.action[n, x]))
                for n in range(config.depth) for x in range(config.x_max + 1)))
    _write_csv(outdir / "bands.csv", ["n", "xi", "band_cuts"],
               ((n, int(policy.xi[n]), cuts[n]) for n in range(config.depth)))

    gamma = config.gamma
    values = []
    for x in range(config.x_max + 1):
        lo, hi = table.value_bracket(0, x)
        values.append({
            "x": x,
            "j_lo": lo,
            "j_hi": hi,
            "expected_utility_lo": hi / gamma,
            "expected_utility_hi": lo / gamma,
            "certainty_equivalent": math.log(hi) / gamma,
        })
    _write_json(outdir / "summary.json", {
        "config": _config_echo(config),
        "s_star": sched.s_star,
        "required_cap": int(math.ceil(sched.s_star - 1e-12)),
        "max_depth0_width": float(np.max(table.widths(0))),
        "values": values,
    })
    return 0


def _cmd_howard(config: ProblemConfig, outdir: Path, args) -> int:
    result = howard_solve(config)

    def iter_rows():
        for i, it in enumerate(result.history):
            for n in range(config.depth):
                for x in range(config.x_max + 1):
                    yield (i, n, x, int(it.rule[n, x]), it.j_hi[n, x])

    _write_csv(outdir / "values.csv",
               ["iteration", "n", "x", "action", "j_hi"], iter_rows())
    _write_csv(outdir / "policy.csv", ["n", "x", "action"],
               ((n, x, int(result.policy.action[n, x]))
                for n in range(config.depth) for x in range(config.x_max + 1)))
    cuts = [b.cut_string() for b in extract_bands(result.policy)]
    _write_csv(outdir / "bands.csv", ["n", "xi", "band_cuts"],
               ((n, int(result.policy.xi[n]), cuts[n]) for n in range(config.depth)))
    _write_json(outdir / "summary.json", {
        "config": _config_echo(config),
        "iterations": result.iterations,
        "final_gap": result.final_gap,
    })
    return 0


def _power_outputs(config: ProblemConfig, outdir: Path, table, policy,
                   s0: float) -> None:
    report = barrier_diagnostics(policy)
    pts = table.grid.points

    def value_rows():
        for d in range(config.depth):
            for x in range(config.x_max + 1):
                lo_row = table.lo[d, x + 1]
                hi_row = table.hi[d, x + 1]
                act_row = policy.action[d, x]
                for i, s in enumerate(pts):
                    yield (d, x, float(s), lo_row[i], hi_row[i],
                           int(act_row[i]), int(report.xi[d, i]))

    _write_csv(outdir / "values.csv",
               ["d", "x", "s", "w_lo", "w_hi", "action", "xi_of_s"],
               value_rows())
    _write_csv(outdir / "policy.csv", ["d", "x", "s", "action"],
               ((d, x, float(pts[i]), int(policy.action[d, x, i]))
                for d in range(config.depth)
                for x in range(config.x_max + 1)
                for i in range(pts.size)))
    _write_csv(outdir / "bands.csv", ["d", "s", "xi_of_s"],
               ((d, float(pts[i]), int(report.xi[d, i]))
                for d in range(config.depth) for i in range(pts.size)))

    gamma = config.gamma
    values = []
    for x in range(config.x_max + 1):
        lo, hi = table.headline(x, s0)
        if config.utility is Utility.POWER:
            ce = lo ** (1.0 / gamma)
        else:
            ce = math.exp(lo)
        values.append({"x": x, "j_hat_lo": lo, "j_hat_hi": hi,
                       "certainty_equivalent": ce})
    _write_json(outdir / "summary.json", {
        "config": _config_echo(config),
        "barrier_bound": report.bound,
        "initial_payout_level": s0,
        "values": values,
    })


def _cmd_solve_power(config: ProblemConfig, outdir: Path, args) -> int:
    table, policy = solve_power(config)
    _power_outputs(config, outdir, table, policy, 0.0)
    return 0


def _cmd_solve_log(config: ProblemConfig, outdir: Path, args) -> int:
    table, policy = solve_log(config, y0=args.y0)
    _power_outputs(config, outdir, table, policy, args.y0)
    return 0


def _cmd_solve_neutral(config: ProblemConfig, outdir: Path, args) -> int:
    sol = solve_neutral(config)
    _write_csv(outdir / "values.csv", ["x", "value"],
               ((x, float(sol.values[x])) for x in range(config.x_max + 1)))
    _write_csv(outdir / "policy.csv", ["x", "action"],
               ((x, int(sol.action[x])) for x in range(config.x_max + 1)))
    band = sol.band()
    _write_csv(outdir / "bands.csv", ["xi", "band_cuts"],
               [(band.c[0], band.cut_string())])
    _write_json(outdir / "summary.json", {
        "config": _config_echo(config),
        "iterations": sol.iterations,
        "band_cuts": band.cut_string(),
        "values": [{"x": x, "value": float(sol.values[x]),
                    "certainty_equivalent": float(sol.values[x])}
                   for x in range(config.x_max + 1)],
    })
    return 0


def _cmd_bands(config: ProblemConfig, outdir: Path, args) -> int:
    if config.utility is Utility.EXPONENTIAL:
        _, policy = solve_exp(config)
        cuts = [b.cut_string() for b in extract_bands(policy)]
        _write_csv(outdir / "bands.csv", ["n", "xi", "band_cuts"],
                   ((n, int(policy.xi[n]), cuts[n]) for n in range(config.depth)))
        _write_json(outdir / "summary.json", {
            "config": _config_echo(config),
            "bands": [{"n": n, "xi": int(policy.xi[n]), "band_cuts": cuts[n]}
                      for n in range(config.depth)],
        })
        return 0
    if config.utility is Utility.RISK_NEUTRAL:
        sol = solve_neutral(config)
        band = sol.band()
        _write_csv(outdir / "bands.csv", ["xi", "band_cuts"],
                   [(band.c[0], band.cut_string())])
        _write_json(outdir / "summary.json", {
            "config": _config_echo(config),
            "bands": [{"xi": band.c[0], "band_cuts": band.cut_string()}],
        })
        return 0
    raise ValidationError(
        "bands requires the exponential or risk_neutral utility; "
        "power/log barriers live in the solve-power and solve-log outputs")


def _cmd_oracle_check(config: ProblemConfig, outdir: Path, args) -> int:
    horizon = args.horizon if args.horizon is not None else config.depth
    if horizon < 1:
        raise ValidationError(f"--horizon must be positive, got {horizon}")
    x0s = [args.x0] if args.x0 is not None else list(range(config.x_max + 1))
    for x0 in x0s:
        if not 0 <= x0 <= config.x_max:
            raise ValidationError(f"--x0 must be in [0, {config.x_max}], got {x0}")

    checks = []
    if config.utility is Utility.EXPONENTIAL:
        # unit terminal makes the solver row 0 the exact horizon optimum
        run = dataclasses.replace(config, depth=horizon)
        table, _ = solve_exp(run, terminal="unit")
        for x0 in x0s:
            val, _ = exact_optimal(run, x0, horizon)
            lo, hi = table.value_bracket(0, x0)
            gap = max(lo - val, val - hi, 0.0)
            checks.append({"x0": x0, "oracle": val, "solver_lo": lo,
                           "solver_hi": hi, "gap": gap,
                           "pass": bool(gap <= 1e-8)})
    elif config.utility is Utility.RISK_NEUTRAL:
        sol = solve_neutral(config)
        for x0 in x0s:
            val, _ = exact_optimal(config, x0, horizon)
            v = float(sol.values[x0])
            # finite horizons underestimate; only the upper edge is sharp
            gap = max(val - v, 0.0)
            checks.append({"x0": x0, "oracle": val, "solver_lo": v - config.tail_eps,
                           "solver_hi": v, "gap": gap, "pass": bool(gap <= 1e-9)})
    else:
        # pay-everything terminal equals one extra oracle decision stage,
        # so the table is re-solved at depth horizon - 1
        if args.horizon is None:
            horizon = config.depth + 1
        elif horizon < 2:
            raise ValidationError(
                f"--horizon must be >= 2 for this utility, got {horizon}")
        run = dataclasses.replace(config, depth=horizon - 1)
        y0 = args.y0 if config.utility is Utility.LOGARITHMIC else 0.0
        table, _ = solve_log(run, y0=y0) if config.utility is Utility.LOGARITHMIC \
            else solve_power(run)
        for x0 in x0s:
            val, _ = exact_optimal(run, x0, horizon, y0=y0)
            lo, hi = table.headline(x0, y0 if config.utility is Utility.LOGARITHMIC else 0.0)
            gap = max(lo - val, val - hi, 0.0)
            checks.append({"x0": x0, "oracle": val, "solver_lo": lo,
                           "solver_hi": hi, "gap": gap,
                           "pass": bool(gap <= 1e-9)})

    ok = all(c["pass"] for c in checks)
    _write_json(outdir / "summary.json", {
        "config": _config_echo(config),
        "horizon": horizon,
        "checks": checks,
        "pass": ok,
    })
    if not ok:
        worst = max(c["gap"] for c in checks)
        raise InvariantViolation(
            f"oracle disagrees with solver, worst gap {worst:.3e} "
            f"(see {outdir / 'summary.json'})")
    return 0


def _solve_policy_for(config: ProblemConfig, y0: float):
    if config.utility is Utility.EXPONENTIAL:
        return solve_exp(config)[1]
    if config.utility is Utility.POWER:
        return solve_power(config)[1]
    if config.utility is Utility.LOGARITHMIC:
        return solve_log(config, y0=y0)[1]
    return solve_neutral(config)


def _cmd_simulate(config: ProblemConfig, outdir: Path, args) -> int:
    x0 = args.x0 if args.x0 is not None else config.x_max
    if not 0 <= x0 <= config.x_max:
        raise ValidationError(f"--x0 must be in [0, {config.x_max}], got {x0}")
    if args.paths < 1:
        raise ValidationError(f"--paths must be positive, got {args.paths}")
    if args.max_steps < 1:
        raise ValidationError(f"--max-steps must be positive, got {args.max_steps}")
    y0 = args.y0 if args.y0 is not None else \
        (1.0 if config.utility is Utility.LOGARITHMIC else 0.0)
    policy = _solve_policy_for(config, y0)
    result = simulate_paths(config, policy, x0, args.paths,
                            max_steps=args.max_steps, y0=y0)
    _write_json(outdir / "summary.json", result.summary())
    return 0


# -- driver -----------------------------------------------------------------

_HANDLERS = {
    "solve-exp": _cmd_solve_exp,
    "solve-power": _cmd_solve_power,
    "solve-log": _cmd_solve_log,
    "solve-neutral": _cmd_solve_neutral,
    "howard": _cmd_howard,
    "oracle-check": _cmd_oracle_check,
    "simulate": _cmd_simulate,
    "bands": _cmd_bands,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="divbands",
        description="Certified solvers for the discrete dividend payout problem.")
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="YAML run configuration")
        p.add_argument("--threads", type=int, default=1,
                       help="worker cap; results never depend on it")
        if name == "solve-log":
            p.add_argument("--y0", type=float, default=1.0,
                           help="initial wealth entering the logarithm")
        if name == "oracle-check":
            p.add_argument("--x0", type=int, default=None,
                           help="single start surplus (default: all)")
            p.add_argument("--horizon", type=int, default=None,
                           help="oracle tree depth (default: config depth)")
            p.add_argument("--y0", type=float, default=1.0,
                           help="initial wealth for the log utility")
        if name == "simulate":
            p.add_argument("--x0", type=int, default=None,
                           help="start surplus (default: x_max)")
            p.add_argument("--paths", type=int, default=10_000)
            p.add_argument("--max-steps", type=int, default=10_000)
            p.add_argument("--y0", type=float, default=None,
                           help="initial wealth (log utility default 1.0)")
    return parser


def run(argv: list[str]) -> int:
    """Parse arguments, dispatch, and write outputs; raises on bad input."""
    if argv and not argv[0].startswith("-") and argv[0] not in SUBCOMMANDS:
        raise UnknownSubcommand(
            f"unknown subcommand {argv[0]!r}; expected one of {', '.join(SUBCOMMANDS)}")
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise ValidationError("a subcommand is required")
    if args.threads < 1:
        raise ValidationError(f"--threads must be positive, got {args.threads}")
    config, outdir = load_config(args.config)
    outdir.mkdir(parents=True, exist_ok=True)
    return _HANDLERS[args.command](config, outdir, args)


def main(argv: list[str] | None = None) -> int:
    try:
        return run(sys.argv[1:] if argv is None else argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
