"""``distvolt`` command line: ``run``, ``verify`` and ``oracle`` subcommands.

Exit codes: 0 success, 1 configuration error, 2 physics or oracle
divergence, 3 failed verification check. Set ``DISTVOLT_LOG`` (e.g.
``DEBUG``) to change log verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .network import NetworkError
from .oracle import NoConvergence, baseline_voltage, centralized_solve, compute_constants, kkt_residual
from .powerflow import PhysicsDiverged
from .simulation import ConfigError, run
from .verification import prepare, verify

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("distvolt")


def _vec(a) -> str:
    return " ".join(format(float(x), ".17g") for x in a)


def cmd_run(scenario_path, out_dir) -> int:
    scenario = fileio.load_scenario(scenario_path)
    traj = run(scenario)
    summary = fileio.write_outputs(traj, scenario, out_dir)
    for k, v in summary.items():
        print(f"{k}: {v}")
    return EXIT_OK


def cmd_verify(scenario_path, report_path=None) -> int:
    scenario = fileio.load_scenario(scenario_path)
    report = verify(scenario)
    print(report.to_text())
    if report_path:
        Path(report_path).write_text(report.to_csv(), encoding="utf-8")
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_oracle(scenario_path) -> int:
    scenario = fileio.load_scenario(scenario_path)
    sc, warnings = prepare(scenario)
    for w in warnings:
        log.warning(w)
    net = sc.network
    sens = net.sensitivity()
    base = baseline_voltage(sens, sc.v0, *sc.load.at(0))
    const = compute_constants(net, sc.costs, sc.delay.tau_max, sens)
    sol = centralized_solve(sens, sc.costs, sc.limits, base)
    kkt = kkt_residual(sol.p, sol.q, sol.dual, sens, sc.costs, sc.limits, base)
    print(f"p_star: {_vec(sol.p)}")
    print(f"q_star: {_vec(sol.q)}")
    print(f"lam_lo_star: {_vec(sol.dual.lam_lo)}")
    print(f"lam_hi_star: {_vec(sol.dual.lam_hi)}")
    print(f"optimal_cost: {sc.costs.total(sol.p, sol.q):.17g}")
    print(f"L: {const.L:.17g}")
    print(f"d: {const.d}")
    print(f"N: {const.N}")
    print(f"tau_max: {const.tau_max}")
    print(f"gamma_max: {const.gamma_max:.17g}")
    print(f"kkt_residual: {kkt['max']:.3e}")
    print(f"iterations: {sol.iterations}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="distvolt", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="simulate a scenario and write trajectory files")
    p.add_argument("scenario")
    p.add_argument("--out", required=True, help="output directory")
    p = sub.add_parser("verify", help="check a scenario against the oracle and bounds")
    p.add_argument("scenario")
    p.add_argument("--report", help="also write the report as CSV to this path")
    p = sub.add_parser("oracle", help="print the centralised optimum and constants")
    p.add_argument("scenario")
    return ap


def main(argv=None) -> int:
    level = os.environ.get("DISTVOLT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.scenario, args.out)
        if args.command == "verify":
            return cmd_verify(args.scenario, args.report)
        return cmd_oracle(args.scenario)
    except (ConfigError, NetworkError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PhysicsDiverged, NoConvergence) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
