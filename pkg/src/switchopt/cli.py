"""Command-line front end.

Subcommands: ``analyze``, ``synthesize``, ``alternate``, ``simulate``,
``sweep``, ``graph-check``.  Exit codes: 0 success, 2 invalid model or
graph, 3 regulator/regulation infeasible, 4 diverged (nothing
certifiable at rate 1), 5 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .alternation import run_alternation
from .analysis import bisect_rate
from .benchmarks import delay_network
from .errors import (
    InvalidModelError,
    ReconstructionError,
    RegulationError,
    RegulatorInfeasibleError,
    SolverFailureError,
    WellPosednessError,
)
from .lmi import SolverConfig
from .model import SwitchedPlant, SwitchedSystem, validate_graph
from .simulate import deploy, empirical_rate, make_function, random_path
from .synthesis import bisect_synthesis
from .transforms import FilterCoefficients, SectorSpec

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_REGULATOR = 3
EXIT_DIVERGED = 4
EXIT_SOLVER = 5


def _sector(args) -> SectorSpec:
    return SectorSpec(args.m, args.L)


def _add_common(p):
    p.add_argument("--m", type=float, default=1.0, help="strong convexity")
    p.add_argument("--L", type=float, default=10.0, help="Lipschitz constant")
    p.add_argument("--order", type=int, default=3, help="multiplier order")
    p.add_argument("--rho-tol", type=float, default=1e-4)
    p.add_argument("--common-storage", action="store_true")
    p.add_argument("--solver", default="CLARABEL")


def _config(args) -> SolverConfig:
    return SolverConfig(solver=args.solver)


def _require_system(model) -> SwitchedSystem:
    if not isinstance(model, SwitchedSystem):
        raise InvalidModelError("expected a closed-loop system file (flat modes)")
    return model


def _require_plant(model) -> SwitchedPlant:
    if not isinstance(model, SwitchedPlant):
        raise InvalidModelError("expected a plant file (partitioned modes)")
    return model


def cmd_analyze(args) -> int:
    closed = _require_system(io.load_model(args.model))
    ok, offenders = validate_graph(closed.graph)
    if not ok:
        print(f"invalid switching graph: vertices {offenders} cannot reach a cycle",
              file=sys.stderr)
        return EXIT_INVALID
    lam = None if args.free_multiplier else FilterCoefficients.identity(args.order)
    cert = bisect_rate(closed, _sector(args), args.order, lam=lam,
                       common_storage=args.common_storage,
                       rho_tol=args.rho_tol, config=_config(args))
    if cert is None:
        print("diverged: not certifiable at rho = 1")
        return EXIT_DIVERGED
    print(f"rho = {cert.rho:.6f}")
    if args.out:
        io.save_certificate(cert, args.out)
        print(f"certificate written to {args.out}")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    plant = _require_plant(io.load_model(args.model))
    ok, offenders = validate_graph(plant.graph)
    if not ok:
        print(f"invalid switching graph: vertices {offenders} cannot reach a cycle",
              file=sys.stderr)
        return EXIT_INVALID
    lam = FilterCoefficients.identity(args.order)
    result = bisect_synthesis(plant, _sector(args), lam,
                              common_storage=args.common_storage,
                              rho_tol=args.rho_tol, config=_config(args))
    if result is None:
        print("diverged: no controller certifiable at rho = 1")
        return EXIT_DIVERGED
    print(f"rho = {result.rho:.6f} (controller order {result.subcontroller.order})")
    if args.out:
        io.save_synthesis_result(result, args.out)
        cert_path = Path(args.out).with_suffix(".cert.json")
        io.save_certificate(result.certificate, cert_path)
        print(f"controller written to {args.out}, certificate to {cert_path}")
    return EXIT_OK


def cmd_alternate(args) -> int:
    plant = _require_plant(io.load_model(args.model))
    result, trace = run_alternation(plant, _sector(args), args.order,
                                    iter_max=args.iters,
                                    common_storage=args.common_storage,
                                    rho_tol=args.rho_tol, config=_config(args))
    if args.trace_out:
        Path(args.trace_out).write_text(trace.to_json_lines() + "\n")
    if result is None:
        print("diverged: first synthesis not feasible at rho = 1")
        return EXIT_DIVERGED
    lam_str = ", ".join(f"{v:.4g}" for v in result.lam.lam)
    print(f"rho = {result.rho:.6f} with multiplier ({lam_str})")
    if args.out:
        io.save_synthesis_result(result, args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    closed = _require_system(io.load_model(args.model))
    if args.dim > 1:
        from .model import kron_lift

        closed = kron_lift(closed, args.dim)
    sector = SectorSpec(args.m, args.L)
    L_prime = args.Lprime if args.Lprime is not None else 0.5 * (args.m + args.L)
    rows = []
    rates = []
    final_dists = []
    for i in range(args.paths):
        f = make_function(sector, L_prime, args.dim, seed=args.seed + i)
        path = random_path(closed.graph, args.steps, seed=args.seed + 10_000 + i)
        trace = deploy(closed, f, path)
        rate = empirical_rate(trace)
        rates.append(rate)
        final_dists.append(trace.distances[-1])
        for k in range(len(path)):
            rows.append([i, k, int(path[k]), trace.distances[k]])
    if args.csv:
        io.write_csv(args.csv, ["run", "k", "mode", "dist"], rows)
    finite = [r for r in rates if np.isfinite(r)]
    print(f"runs = {args.paths}, worst empirical rate = "
          f"{max(finite) if finite else float('inf'):.6f}, "
          f"max final distance = {max(final_dists):.3e}")
    if any(not np.isfinite(r) for r in rates):
        print("warning: some runs diverged")
    return EXIT_OK


def _sweep_point(args, value):
    sector = _sector(args)
    lam = FilterCoefficients.identity(args.order)
    t0 = time.perf_counter()
    if args.sweep_param == "L":
        plant = _require_plant(io.load_model(args.model))
        sector = SectorSpec(args.m, value)
    else:  # delay sweep: one packet-drop network per integer delay bound
        plant = delay_network(int(value))
    result = bisect_synthesis(plant, sector, lam,
                              common_storage=args.common_storage,
                              rho_tol=args.rho_tol, config=_config(args))
    elapsed = time.perf_counter() - t0
    return value, (result.rho if result is not None else None), elapsed


def cmd_sweep(args) -> int:
    if args.sweep_param == "L":
        grid = np.linspace(getattr(args, "from"), args.to, args.points)
    else:
        grid = np.arange(int(getattr(args, "from")), int(args.to) + 1)
    points = list(grid)
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(lambda v: _sweep_point(args, v), points))
    else:
        results = [_sweep_point(args, v) for v in points]
    rows = []
    for value, rho, elapsed in results:
        rho_str = "diverged" if rho is None else f"{rho:.6f}"
        rows.append([value, rho_str, f"{elapsed:.3f}"])
        print(f"{args.sweep_param} = {value}: rho = {rho_str} ({elapsed:.1f}s)")
    if args.csv:
        io.write_csv(args.csv, [args.sweep_param, "rho", "seconds"], rows)
    return EXIT_OK


def cmd_graph_check(args) -> int:
    model = io.load_model(args.model)
    ok, offenders = validate_graph(model.graph)
    if ok:
        print(f"graph ok: {model.graph.num_modes} modes, "
              f"{len(model.graph.edges)} edges, every vertex reaches a cycle")
        return EXIT_OK
    print(f"invalid: vertices {offenders} cannot reach any cycle", file=sys.stderr)
    return EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="switchopt",
        description="Certify and synthesize optimization algorithms over "
                    "switched networks.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="certify a closed algorithm loop")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--free-multiplier", action="store_true",
                   help="search the multiplier instead of using the identity")
    p.add_argument("--out", help="certificate JSON path")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synthesize", help="design a controller for a network")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", help="controller JSON path")
    p.set_defaults(func=cmd_synthesize, order=0)

    p = sub.add_parser("alternate", help="alternate synthesis and multiplier search")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--out", help="controller JSON path")
    p.add_argument("--trace-out", help="JSON-lines trace path")
    p.set_defaults(func=cmd_alternate)

    p = sub.add_parser("simulate", help="deploy a closed loop on random problems")
    p.add_argument("--model", required=True)
    p.add_argument("--m", type=float, default=1.0)
    p.add_argument("--L", type=float, default=10.0)
    p.add_argument("--Lprime", type=float, default=None)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--paths", type=int, default=10)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", help="trace CSV path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="rate over a parameter grid (synthesis)")
    _add_common(p)
    p.add_argument("--model", help="plant (required for L sweeps)")
    p.add_argument("--sweep-param", choices=["L", "delay"], required=True)
    p.add_argument("--from", type=float, required=True)
    p.add_argument("--to", type=float, required=True)
    p.add_argument("--points", type=int, default=8)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--csv", help="output CSV path")
    p.set_defaults(func=cmd_sweep, order=0)

    p = sub.add_parser("graph-check", help="validate a switching graph")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_graph_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InvalidModelError, WellPosednessError) as e:
        print(f"invalid model: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (RegulatorInfeasibleError, RegulationError) as e:
        print(f"regulation infeasible: {e}", file=sys.stderr)
        return EXIT_REGULATOR
    except (SolverFailureError, ReconstructionError) as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
