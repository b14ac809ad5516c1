"""Command-line front end.

Exit status: 0 on success, 1 on a validation/solver/runtime error, 2 on a
usage error. Every error prints one line ``error[CODE]: message`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import game, model, sim
from .strategies import StrategyError, parse_strategy


class UsageError(Exception):
    code = "USAGE"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="hypverify", description="Active hypothesis verification toolkit.", formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scenario(p):
        p.add_argument("--scenario", required=True, help="scenario JSON path, or a bundled name (setup1.json, setup2.json)")

    p = sub.add_parser("validate", help="check a scenario and print its dimensions", formatter_class=fmt)
    scenario(p)

    p = sub.add_parser("solve", help="solve the KL game for a target hypothesis", formatter_class=fmt)
    scenario(p)
    p.add_argument("--target", required=True, help="target hypothesis label")
    p.add_argument("--json", action="store_true", help="also print the solution as JSON")

    def simulation(p, horizon):
        scenario(p)
        p.add_argument("--true", dest="true_h", required=True, help="true hypothesis label")
        p.add_argument("--strategy", required=True, help="ope:H | ejs | klz:H | uniform | twophase:RHO:INNER:VERIFIER")
        p.add_argument("--trials", type=int, default=1000, help="Monte Carlo trials")
        if horizon:
            p.add_argument("--horizon", type=int, required=True, help="largest horizon N")
            p.add_argument("--points", type=int, default=25, help="log-spaced horizons reported")
        p.add_argument("--seed", type=int, default=0, help="base seed")
        p.add_argument("--workers", type=int, default=1, help="worker processes")
        p.add_argument("--out", default=None, help="CSV output path (default: stdout)")

    p = sub.add_parser("rate", help="confidence-rate curve J_N", formatter_class=fmt)
    simulation(p, True)
    p = sub.add_parser("stop", help="stopping-time curve E[N]/ln L", formatter_class=fmt)
    simulation(p, False)
    p.add_argument("--lnL", required=True, help="comma-separated ln L thresholds (nats)")
    p.add_argument("--cap", type=int, default=sim.DEFAULT_CAP, help="step cap per trial")
    p = sub.add_parser("stability", help="stability-criterion series", formatter_class=fmt)
    simulation(p, True)
    return parser


def _emit(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _cmd_validate(args, m, prior):
    print(f"hypotheses   {m.n_hypotheses}: {', '.join(m.hypotheses)}")
    print(f"experiments  {m.n_experiments}: {', '.join(m.experiments)}")
    print(f"observations {m.n_observations}: {', '.join(m.observations)}")
    print("prior        " + ", ".join(f"{p:.6g}" for p in prior.probs))
    print(f"B = {model.assumption_bound(m):.9f}")


def _cmd_solve(args, m, prior):
    h = m.hypothesis_index(args.target)
    sol = game.solve_for(m, h)
    rates = game.rate_profile(m, h, sol)
    crit_u, crit_j = game.critical_sets(sol)
    print(f"target: {m.hypotheses[h]}")
    print(f"R* = {sol.value:.9f}")
    print(f"duality gap = {sol.duality_gap:.3e}")
    print("experiment  alpha*")
    for u, a in enumerate(sol.alpha_star):
        print(f"  {m.experiments[u]:<9} {a:.9f}{'  *' if u in crit_u else ''}")
    print("alternate   beta*        R_j")
    for k, j in enumerate(sol.alternates):
        print(f"  {m.hypotheses[j]:<9} {sol.beta_star[k]:.9f}  {rates.rates[j]:.9f}{'  *' if j in crit_j else ''}")
    print("critical experiments: " + ", ".join(m.experiments[u] for u in crit_u))
    print("critical hypotheses: " + ", ".join(m.hypotheses[j] for j in crit_j))
    if args.json:
        print(json.dumps({
            "target": m.hypotheses[h],
            "value": sol.value,
            "duality_gap": sol.duality_gap,
            "alpha_star": dict(zip(m.experiments, sol.alpha_star.tolist())),
            "beta_star": {m.hypotheses[j]: b for j, b in zip(sol.alternates, sol.beta_star.tolist())},
            "rates": {m.hypotheses[j]: r for j, r in rates.rates.items()},
            "critical_experiments": [m.experiments[u] for u in crit_u],
            "critical_hypotheses": [m.hypotheses[j] for j in crit_j],
        }, indent=2))


def _config(args, m, prior, **kw):
    spec = parse_strategy(args.strategy, m)
    return sim.SimulationConfig(
        m, m.hypothesis_index(args.true_h), spec, trials=args.trials, prior=prior,
        seed=args.seed, workers=args.workers, **kw,
    )


def _cmd_rate(args, m, prior):
    cfg = _config(args, m, prior, horizons=sim.log_grid(args.horizon, args.points))
    _emit(sim.rate_csv(sim.run_rate_experiment(cfg)), args.out)


def _cmd_stop(args, m, prior):
    try:
        grid = tuple(float(v) for v in args.lnL.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"bad --lnL list {args.lnL!r}") from None
    cfg = _config(args, m, prior, thresholds=grid, cap=args.cap)
    _emit(sim.stopping_csv(sim.run_stopping_experiment(cfg)), args.out)


def _cmd_stability(args, m, prior):
    cfg = _config(args, m, prior, horizons=sim.log_grid(args.horizon, args.points))
    _emit(sim.diagnostic_csv(sim.stability_diagnostic(cfg)), args.out)


COMMANDS = {
    "validate": _cmd_validate,
    "solve": _cmd_solve,
    "rate": _cmd_rate,
    "stop": _cmd_stop,
    "stability": _cmd_stability,
}


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error[USAGE]: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        m, prior = model.read_scenario(args.scenario)
        COMMANDS[args.command](args, m, prior)
    except (UsageError, StrategyError) as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 2
    except (OSError, UnicodeDecodeError) as exc:
        print(f"error[UNREADABLE_FILE]: {exc}", file=sys.stderr)
        return 1
    except IndexError as exc:
        print(f"error[UNKNOWN_LABEL]: {exc}", file=sys.stderr)
        return 1
    except (model.ModelError, game.SolverDidNotConverge, sim.ConfigError) as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
