"""Command-line entry point: ``hybridlink {eval,solve,oracle,sweep}``.

Exit codes: 0 success, 1 output could not be written, 2 usage or
configuration error, 3 degenerate input (every device has zero throughput).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from .errors import ConfigError, DegenerateInputError, DomainError
from .linkmath import DeviceLink
from .oracle import dp_optimal
from .planner import Allocation, NetworkProblem, evaluate, solve
from .scenario import (ScenarioConfig, db_to_linear, draw_snrs, run_sweep, sidecar_path,
                       write_outputs)

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_DEGENERATE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    # argparse exits on its own; raise instead so cli_main can return a code.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hybridlink",
                     description="Uplink allocation for hybrid optical-RF networks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ev = sub.add_parser("eval", help="throughput report of one device at given (k, n)")
    ev.add_argument("--k", type=float, required=True, help="payload bits")
    ev.add_argument("--n", type=float, required=True, help="channel symbols")
    ev.add_argument("--snr-db", type=float, required=True)
    ev.add_argument("--p", type=float, default=0.0, help="optical blockage probability")
    ev.add_argument("--zeta", type=float, default=0.05, help="feedback cost")
    ev.add_argument("--duration", type=float, default=1.0, help="T in seconds")

    for name, text in (("solve", "solve a scenario's device set"),
                       ("oracle", "exact integer optimum and gap to the solver"),
                       ("sweep", "run the configured sweep and write CSV/JSON")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if name == "sweep":
            p.add_argument("--output", default=None, help="override the CSV path")
        else:
            p.add_argument("--draw", type=int, default=0,
                           help="Monte Carlo draw whose SNRs are used (rayleigh fading)")
    return parser


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _load(args) -> ScenarioConfig:
    cfg = ScenarioConfig.load(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _problem(cfg: ScenarioConfig, draw: int) -> NetworkProblem:
    if draw < 0:
        raise ConfigError("--draw must be >= 0")
    snrs = draw_snrs(cfg, draw, len(cfg.devices))
    links = [DeviceLink(s, d.block_prob, cfg.feedback_cost)
             for s, d in zip(snrs, cfg.devices)]
    return NetworkProblem(links, cfg.n_total, cfg.solver)


def _cmd_eval(args) -> int:
    link = DeviceLink(db_to_linear(args.snr_db), args.p, args.zeta, args.duration)
    alloc = Allocation((args.k,), (args.n,), False, 0.0)
    problem = NetworkProblem((link,), max(1, int(args.n)))
    _emit(evaluate(alloc, problem).to_dict())
    return EXIT_OK


def _cmd_solve(args) -> int:
    cfg = _load(args)
    problem = _problem(cfg, args.draw)
    plan = solve(problem)
    _emit({"snr": [l.snr for l in problem.links],
           "continuous": plan.continuous.to_dict(),
           "allocation": plan.integral.to_dict(),
           "report": plan.report.to_dict()})
    return EXIT_OK


def _cmd_oracle(args) -> int:
    cfg = _load(args)
    problem = _problem(cfg, args.draw)
    exact = dp_optimal(problem)
    plan = solve(problem)
    _emit({"snr": [l.snr for l in problem.links],
           "oracle": exact.allocation.to_dict(),
           "oracle_objective": exact.objective,
           "solver_objective": plan.report.objective,
           "gap": exact.objective - plan.report.objective})
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _load(args)
    sidecar = sidecar_path(Path(args.output or cfg.output))
    if sidecar.resolve() == Path(args.config).resolve():
        raise ConfigError(f"the JSON sidecar {sidecar} would overwrite the config file; "
                          "choose another output name")
    rows = run_sweep(cfg)
    try:
        path = write_outputs(rows, cfg, args.output)
    except OSError as exc:
        print(f"hybridlink: cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    print(path)
    return EXIT_OK


_COMMANDS = {"eval": _cmd_eval, "solve": _cmd_solve, "oracle": _cmd_oracle,
             "sweep": _cmd_sweep}


def cli_main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except DegenerateInputError as exc:
        print(f"hybridlink: degenerate input: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ConfigError, DomainError) as exc:
        print(f"hybridlink: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(cli_main())
