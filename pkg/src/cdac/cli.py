"""Command-line entry point: ``cdac {solve,simulate,compare,approx,export-map}``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .approx import GprHyper, approx_value_iteration
from .baselines import GreedyMapRunner, InfomaxRunner, infomax_solve, threshold_policy_codes
from .errors import ConvergenceError, NumericalError, TableMismatchError
from .harness import ConfigError, EnvironmentConfig, compare_policies, solve_environment
from .tableio import export_codes, export_policy_map, load_tables, save_tables
from .trials import AlwaysStop, CdacRunner, run_batch

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _env_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("environment")
    g.add_argument("--config", type=Path, help="JSON environment file; flags override it")
    g.add_argument("--task", choices=("simple", "peripheral"))
    g.add_argument("--c", type=float, help="cost per observation")
    g.add_argument("--cs", type=float, help="cost per fixation switch")
    g.add_argument("--beta", type=float, help="simple task: fixated-location reliability")
    g.add_argument("--betas", type=float, nargs=4, metavar="B",
                   help="peripheral task: four acuity levels")
    g.add_argument("--grid-n", type=int, help="simplex subdivisions per edge")
    g.add_argument("--tol", type=float, help="value-iteration tolerance")
    g.add_argument("--trials", type=int, help="Monte Carlo trials")
    g.add_argument("--seed", type=int, help="master seed")
    g.add_argument("--horizon", type=int, help="infomax planning horizon")
    g.add_argument("--cap", type=int, dest="trial_cap", help="trial step cap")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cdac", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="value iteration; optionally save the tables")
    _env_options(p)
    p.add_argument("--out", type=Path, help="table file to write")

    p = sub.add_parser("simulate", help="Monte Carlo statistics for one policy")
    _env_options(p)
    p.add_argument("--method", default="cdac",
                   choices=("cdac", "infomax", "greedy-map", "always-stop"))
    p.add_argument("--threshold", type=float, help="stop threshold for baselines")
    p.add_argument("--table", type=Path, help="load a solved table instead of solving")

    p = sub.add_parser("compare", help="C-DAC against accuracy-matched baselines")
    _env_options(p)
    p.add_argument("--greedy", action="store_true", help="also run greedy MAP")
    p.add_argument("--out", type=Path, help="CSV report to write")

    p = sub.add_parser("approx", help="approximate value iteration")
    _env_options(p)
    p.add_argument("--method", default="rbf", choices=("rbf", "gpr", "gpr-ard"))
    p.add_argument("--samples", type=int, help="beliefs per iteration (default 1000 rbf, 200 gpr)")
    p.add_argument("--out", type=Path, help="policy-map CSV (fixation l1) to write")

    p = sub.add_parser("export-map", help="write a policy map as CSV (and PGM)")
    _env_options(p)
    p.add_argument("--method", default="cdac", choices=("cdac", "infomax"))
    p.add_argument("--threshold", type=float, default=0.8, help="infomax stop threshold")
    p.add_argument("--fixation", default="l1", help="fixation slice to export")
    p.add_argument("--table", type=Path, help="load a solved table instead of solving")
    p.add_argument("--out", type=Path, required=True, help="CSV path")
    p.add_argument("--pgm", type=Path, help="optional PGM path")
    return parser


def _environment(args) -> EnvironmentConfig:
    data = {}
    if args.config is not None:
        data = EnvironmentConfig.load(args.config).to_dict()
    for key in ("task", "c", "cs", "beta", "betas", "grid_n", "tol", "trials",
                "seed", "horizon", "trial_cap"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    if data.get("task") == "peripheral" and args.beta is None:
        data.pop("beta", None)
    if data.get("task") == "simple" and args.betas is None:
        data.pop("betas", None)
    return EnvironmentConfig.from_dict({k: v for k, v in data.items() if v is not None})


def _policy(env: EnvironmentConfig, table: Path | None):
    if table is None:
        sol = solve_environment(env)
        print(f"value iteration converged in {sol.sweeps} sweeps")
        return sol.policy
    _, policy = load_tables(table, env.model(), env.costs(), env.grid_n)
    return policy


def _print_stats(name: str, stats) -> None:
    print(f"policy:    {name}")
    print(f"trials:    {stats.n_trials} (seed {stats.seed}, capped {stats.capped})")
    for label, mean, se in (("accuracy", stats.accuracy, stats.se_accuracy),
                            ("steps", stats.mean_steps, stats.se_steps),
                            ("switches", stats.mean_switches, stats.se_switches),
                            ("cost", stats.mean_cost, stats.se_cost)):
        tail = "" if se is None else f" ± {se:.4f}"
        print(f"{label + ':':<10} {mean:.4f}{tail}")


def cmd_solve(args) -> int:
    env = _environment(args)
    sol = solve_environment(env)
    stop = sol.policy.is_stop().mean()
    print(f"value iteration converged in {sol.sweeps} sweeps")
    print(f"cells: {sol.values.grid.size}, stop fraction {stop:.4f}")
    if args.out is not None:
        save_tables(args.out, env.model(), env.costs(), sol.values, sol.policy)
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    env = _environment(args)
    model = env.model()
    if args.method == "cdac":
        runner = CdacRunner(_policy(env, args.table))
    elif args.method == "always-stop":
        runner = AlwaysStop(model)
    else:
        if args.threshold is None:
            raise UsageError("--threshold is required for threshold baselines")
        try:
            if args.method == "infomax":
                runner = InfomaxRunner(model, infomax_solve(model, env.grid(), env.horizon),
                                       args.threshold)
            else:
                runner = GreedyMapRunner(model, args.threshold)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    batch = run_batch(runner, model, env.costs(), env.trials, env.seed,
                      env.fixation_index(), env.prior_array(), env.trial_cap)
    _print_stats(args.method, batch.stats())
    return EXIT_OK


def cmd_compare(args) -> int:
    env = _environment(args)
    report = compare_policies(env, include_greedy=args.greedy)
    sys.stdout.write(report.to_text())
    if args.out is not None:
        args.out.write_text(report.to_csv())
    return EXIT_OK


def cmd_approx(args) -> int:
    env = _environment(args)
    model, costs, grid = env.model(), env.costs(), env.grid()
    rep = "rbf" if args.method == "rbf" else "gpr"
    m = args.samples or (1000 if rep == "rbf" else 200)
    status = EXIT_OK
    try:
        res = approx_value_iteration(model, costs, rep, m=m, seed=env.seed, grid=grid,
                                     hyper=GprHyper(), learn_hyper=args.method == "gpr-ard")
        print(f"converged in {res.iterations} iterations")
    except ConvergenceError as exc:
        res = exc.result
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_NUMERICAL
    print(f"last change {res.changes[-1]:.3g}")
    exact = solve_environment(env).policy
    agree = float((res.policy.codes[:, 0] == exact.codes[:, 0]).mean())
    print(f"agreement with exact policy (fixation l1): {agree:.4f}")
    if args.out is not None:
        export_policy_map(res.policy, 0, args.out, model)
        print(f"wrote {args.out}")
    return status


def cmd_export_map(args) -> int:
    env = _environment(args)
    model = env.model()
    try:
        fix = model.action_index(args.fixation)
    except (ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None
    if args.method == "cdac":
        export_policy_map(_policy(env, args.table), fix, args.out, model, args.pgm)
    else:
        grid = env.grid()
        try:
            codes = threshold_policy_codes(model, infomax_solve(model, grid, env.horizon),
                                           args.threshold, fix)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        export_codes(codes, grid, args.out, model, args.pgm)
    print(f"wrote {args.out}")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "compare": cmd_compare,
            "approx": cmd_approx, "export-map": cmd_export_map}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, TableMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
