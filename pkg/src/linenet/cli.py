"""Command-line front end.

Subcommands: exact | bounds | rbie | dbie | delay | simulate | netcod |
continuous | allocate | reproduce.  Single results are emitted as JSON
documents carrying the resolved configuration; sweeps land in CSV.
Exit codes: 0 success, 2 validation error, 3 convergence failure,
4 state-space cap exceeded.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict

import numpy as np

from . import __version__, allocate as allocate_mod, amc, dbie, delay, emc, rbie, sim
from . import netcod as netcod_mod
from .errors import (
    ConvergenceError,
    LineNetError,
    SpecValidationError,
    StateSpaceCapError,
)
from .model import NetworkSpec

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3
EXIT_CAP = 4


def _load_spec(args) -> NetworkSpec:
    if args.spec is None:
        raise SpecValidationError("--spec PATH is required for this command")
    return NetworkSpec.load(args.spec)


def _report(args, command: str, result: dict, notes: list[str] | None = None) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func" and v is not None}
    doc = {
        "tool": "linenet",
        "version": __version__,
        "command": command,
        "config": cfg,
        "result": result,
    }
    if notes:
        doc["notes"] = notes
    return doc


def _flatten(prefix: str, value, into: dict) -> None:
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, into)
    elif isinstance(value, (list, tuple)):
        into[prefix] = ";".join(str(v) for v in value)
    else:
        into[prefix] = value


def _emit(args, doc: dict) -> None:
    if getattr(args, "format", "json") == "csv":
        flat: dict = {}
        _flatten("", doc["result"], flat)
        target = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
        try:
            writer = csv.writer(target)
            writer.writerow(flat.keys())
            writer.writerow(flat.values())
        finally:
            if args.out:
                target.close()
        return
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _emit_csv(args, header: list[str], rows: list[list]) -> None:
    target = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.writer(target)
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if args.out:
            target.close()


def cmd_exact(args) -> int:
    spec = _load_spec(args)
    cap = emc.capacity_exact(spec, tol=args.tol, cap=args.state_cap)
    cross = emc.capacity_flow_crosscheck(spec, tol=args.tol, cap=args.state_cap)
    result = {
        "capacity": cap,
        "interior_link_rates": list(cross),
        "num_states": spec.num_states,
        "min_cut": spec.min_cut,
    }
    if args.dump_matrix:
        emc.build_emc(spec, cap=args.state_cap).to_csv(args.dump_matrix)
    _emit(args, _report(args, "exact", result))
    return EXIT_OK


def cmd_bounds(args) -> int:
    spec = _load_spec(args)
    res = amc.bounds(spec, tol=args.tol, cap=args.state_cap, with_exact=args.with_exact)
    notes = []
    if not res.distinct_eps:
        notes.append("erasure probabilities are not pairwise distinct")
    result = {
        "lower": res.lower,
        "upper": res.upper,
        "exact": res.exact,
        "sandwich_ok": res.sandwich_ok(),
    }
    _emit(args, _report(args, "bounds", result, notes))
    return EXIT_OK


def cmd_rbie(args) -> int:
    spec = _load_spec(args)
    sol = rbie.solve(spec, max_iter=args.max_iter, tol=args.tol)
    result = {
        "capacity": rbie.capacity(sol),
        "rates": sol.r.tolist(),
        "blocking": sol.pb.tolist(),
        "iterations": sol.iterations,
        "residual": sol.residual,
    }
    _emit(args, _report(args, "rbie", result))
    return EXIT_OK


def cmd_dbie(args) -> int:
    spec = _load_spec(args)
    sol = dbie.solve(spec, max_iter=args.max_iter, tol=args.tol)
    notes = []
    if sol.perturbed:
        notes.append(
            "equal erasure probabilities auto-perturbed to "
            f"{list(sol.eps_used)} (rank-ordered offsets of 1e-6)"
        )
    result = {
        "capacity": dbie.capacity(sol),
        "blocking": sol.pb.tolist(),
        "starvation_fraction": sol.alpha.tolist(),
        "destination_interarrival": sol.f[-1].to_obj(),
        "iterations": sol.iterations,
        "precision_digits": sol.dps,
    }
    _emit(args, _report(args, "dbie", result, notes))
    return EXIT_OK


def cmd_delay(args) -> int:
    spec = _load_spec(args)
    result: dict = {}
    if args.method in ("rbie", "both"):
        rsol = rbie.solve(spec, tol=args.tol)
        inputs = delay.psi_rho_from_rbie(rsol, spec)
        prof = delay.delay_profile(spec, inputs, include_source=args.include_source)
        mean_l, contrib = delay.mean_delay_little(rsol, spec)
        result["rbie"] = {
            "mean": prof.mean,
            "variance": prof.variance,
            "little_mean": mean_l,
            "per_node_little": contrib.tolist(),
        }
        if args.pmf_out:
            prof.to_csv(args.pmf_out)
    if args.method in ("dbie", "both"):
        dsol = dbie.solve(spec)
        inputs = delay.psi_rho_from_dbie(dsol, spec)
        prof = delay.delay_profile(spec, inputs, include_source=args.include_source)
        result["dbie"] = {"mean": prof.mean, "variance": prof.variance}
        if args.pmf_out and args.method == "dbie":
            prof.to_csv(args.pmf_out)
    _emit(args, _report(args, "delay", result))
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = _load_spec(args)
    if args.mode == "delay":
        stats = sim.simulate_delay_fcfs(spec, args.epochs, warmup=args.warmup, seed=args.seed)
    else:
        stats = sim.simulate_feedback(spec, args.epochs, warmup=args.warmup, seed=args.seed)
    result = stats.to_obj()
    if args.hist_out:
        with open(args.hist_out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            if args.mode == "delay" and stats.delay_counts is not None:
                writer.writerow(["delay_epochs", "count"])
                writer.writerows(enumerate(stats.delay_counts.tolist()))
            else:
                writer.writerow(["node", "occupancy", "count"])
                for j, row in enumerate(stats.occupancy_counts):
                    writer.writerows([j, k, int(c)] for k, c in enumerate(row))
    _emit(args, _report(args, "simulate", result))
    return EXIT_OK


def cmd_netcod(args) -> int:
    spec = _load_spec(args)
    if args.q_sweep:
        qs = [int(v) for v in args.q_sweep.split(",")]
        exact = emc.capacity_exact(spec, cap=args.state_cap) if args.compare_exact else None
        rows = []
        for q in qs:
            st = netcod_mod.simulate_no_feedback(
                spec, netcod_mod.FieldSpec(q), args.epochs, warmup=args.warmup, seed=args.seed
            )
            rows.append([q, st.innovative_rate, st.innovative_rate_se, exact])
        _emit_csv(args, ["q", "innovative_rate", "se", "exact_capacity"], rows)
        return EXIT_OK
    stats = netcod_mod.simulate_no_feedback(
        spec,
        netcod_mod.FieldSpec(args.q),
        args.epochs,
        warmup=args.warmup,
        seed=args.seed,
    )
    result = {
        "q": stats.q,
        "innovative_rate": stats.innovative_rate,
        "innovative_rate_se": stats.innovative_rate_se,
        "destination_rank": stats.destination_rank,
    }
    if args.compare_exact:
        result["exact_capacity"] = emc.capacity_exact(spec, cap=args.state_cap)
    _emit(args, _report(args, "netcod", result))
    return EXIT_OK


def cmd_continuous(args) -> int:
    lambdas = tuple(float(v) for v in args.lambdas.split(","))
    buffers = tuple(int(v) for v in args.buffers.split(","))
    cspec = sim.ContinuousSpec(lambdas=lambdas, buffers=buffers, tau=args.tau)
    disc = sim.discretize(cspec)
    result = {
        "eps": list(disc.network.eps),
        "tau": disc.tau,
        "packets_per_second": {},
    }
    scale = disc.rate_scale
    if args.method in ("exact", "all"):
        result["packets_per_second"]["exact"] = scale * emc.capacity_exact(
            disc.network, cap=args.state_cap
        )
    if args.method in ("rbie", "all"):
        result["packets_per_second"]["rbie"] = scale * rbie.capacity(rbie.solve(disc.network))
    if args.method in ("dbie", "all"):
        result["packets_per_second"]["dbie"] = scale * dbie.capacity(dbie.solve(disc.network))
    _emit(args, _report(args, "continuous", result))
    return EXIT_OK


def cmd_allocate(args) -> int:
    eps = tuple(float(v) for v in args.eps.split(","))
    res = allocate_mod.allocate(
        eps,
        args.budget,
        objective=args.objective,
        floor=args.floor,
        method=args.method,
        top=args.top,
    )
    result = asdict(res)
    _emit(args, _report(args, "allocate", result))
    return EXIT_OK


# ---------------------------------------------------------------------------
# figure-style dataset reproduction
# ---------------------------------------------------------------------------

def _sweep_row(spec: NetworkSpec, epochs: int, seed: int, state_cap: int, build_cap: float):
    lo = hi = ex = None
    try:
        if spec.num_states * 2 ** spec.h <= build_cap:
            ex = emc.capacity_exact(spec, cap=state_cap)
        expanded = spec.with_buffers(amc.prefix_sum_buffers(spec.buffers))
        if spec.num_states * 2 ** spec.h <= build_cap:
            lo = amc.capacity_lower(spec, cap=state_cap)
        if expanded.num_states * 2 ** spec.h <= build_cap:
            hi = amc.capacity_upper(spec, cap=state_cap)
    except StateSpaceCapError:
        pass
    rb = rbie.capacity(rbie.solve(spec))
    db = dbie.capacity(dbie.solve(spec))
    simv = sim.simulate_feedback(spec, epochs, seed=seed).throughput if epochs else None
    return ex, lo, hi, rb, db, simv


FIGURES = ("capacity-vs-hops", "capacity-vs-memory", "capacity-vs-eps", "delay-profile", "tau-sweep")


def cmd_reproduce(args) -> int:
    fig = args.figure
    rows: list[list] = []
    if fig == "capacity-vs-hops":
        header = ["h", "eps", "exact", "lower", "upper", "rbie", "dbie", "sim"]
        for e in (0.25, 0.5):
            for h in range(2, args.max_hops + 1):
                spec = NetworkSpec((e,) * h, (5,) * (h - 1))
                rows.append([h, e, *_sweep_row(spec, args.epochs, args.seed, args.state_cap, args.build_cap)])
    elif fig == "capacity-vs-memory":
        header = ["m", "eps", "exact", "lower", "upper", "rbie", "dbie", "sim"]
        for e in (0.25, 0.5):
            for m in range(1, args.max_memory + 1):
                spec = NetworkSpec((e,) * 5, (m,) * 4)
                rows.append([m, e, *_sweep_row(spec, args.epochs, args.seed, args.state_cap, args.build_cap)])
    elif fig == "capacity-vs-eps":
        header = ["eps", "exact", "lower", "upper", "rbie", "dbie", "sim", "min_cut"]
        for e in np.linspace(0.05, 0.5, 10):
            spec = NetworkSpec((float(e),) * 5, (5,) * 4)
            rows.append([float(e), *_sweep_row(spec, args.epochs, args.seed, args.state_cap, args.build_cap), 1 - float(e)])
    elif fig == "delay-profile":
        header = ["m", "method", "mean", "variance"]
        for m in (5, 10, 15):
            spec = NetworkSpec((0.25,) * 8, (m,) * 7)
            rsol = rbie.solve(spec)
            prof_r = delay.delay_profile(spec, delay.psi_rho_from_rbie(rsol, spec))
            dsol = dbie.solve(spec)
            prof_d = delay.delay_profile(spec, delay.psi_rho_from_dbie(dsol, spec))
            rows.append([m, "rbie", prof_r.mean, prof_r.variance])
            rows.append([m, "dbie", prof_d.mean, prof_d.variance])
            if args.epochs:
                st = sim.simulate_delay_fcfs(spec, args.epochs, seed=args.seed)
                rows.append([m, "sim", st.delay_mean, st.delay_var])
    elif fig == "tau-sweep":
        header = ["tau", "exact_pps", "rbie_pps", "dbie_pps"]
        lambdas = (10.0, 3.0, 2.99)
        for tau in (0.025, 0.0125, 0.00625, 0.0015625, 0.001):
            disc = sim.discretize(sim.ContinuousSpec(lambdas, (3, 3), tau))
            scale = disc.rate_scale
            rows.append([
                tau,
                scale * emc.capacity_exact(disc.network),
                scale * rbie.capacity(rbie.solve(disc.network)),
                scale * dbie.capacity(dbie.solve(disc.network)),
            ])
    else:
        raise SpecValidationError(f"unknown figure id {fig!r}; known: {', '.join(FIGURES)}")
    _emit_csv(args, header, rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="linenet",
        description="Finite-buffer erasure line networks: capacity, bounds, estimates, delay, simulation",
    )
    p.add_argument("--version", action="version", version=f"linenet {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, spec_required=True):
        sp.add_argument("--spec", help="path to network JSON {\"eps\": [...], \"buffers\": [...]}")
        sp.add_argument("--tol", type=float, default=1e-10, help="solver tolerance")
        sp.add_argument("--max-iter", type=int, default=10**5, dest="max_iter")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--epochs", type=int, default=10**5)
        sp.add_argument("--warmup", type=int, default=None)
        sp.add_argument("--state-cap", type=int, default=emc.DEFAULT_STATE_CAP, dest="state_cap")
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        sp.add_argument("--out", help="output path (stdout when omitted)")

    sp = sub.add_parser("exact", help="exact capacity from the occupancy chain")
    common(sp)
    sp.add_argument("--dump-matrix", help="write the transition matrix as CSV triplets")
    sp.set_defaults(func=cmd_exact)

    sp = sub.add_parser("bounds", help="capacity lower/upper bounds")
    common(sp)
    sp.add_argument("--with-exact", action="store_true")
    sp.set_defaults(func=cmd_bounds)

    sp = sub.add_parser("rbie", help="rate-based iterative estimate")
    common(sp)
    sp.set_defaults(func=cmd_rbie)

    sp = sub.add_parser("dbie", help="distribution-based iterative estimate")
    common(sp)
    sp.set_defaults(func=cmd_dbie)

    sp = sub.add_parser("delay", help="analytic delay profile")
    common(sp)
    sp.add_argument("--method", choices=("rbie", "dbie", "both"), default="both")
    sp.add_argument("--include-source", action="store_true")
    sp.add_argument("--pmf-out", help="write the delay pmf as CSV")
    sp.set_defaults(func=cmd_delay)

    sp = sub.add_parser("simulate", help="Monte-Carlo simulation of the feedback scheme")
    common(sp)
    sp.add_argument("--mode", choices=("throughput", "delay"), default="throughput")
    sp.add_argument("--hist-out", help="write histogram CSV")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("netcod", help="no-feedback coded simulation")
    common(sp)
    sp.add_argument("--q", type=int, default=65536, choices=netcod_mod.SUPPORTED_FIELD_SIZES)
    sp.add_argument("--q-sweep", dest="q_sweep", help="comma-separated field sizes; emits a rate-vs-q CSV")
    sp.add_argument("--compare-exact", action="store_true")
    sp.set_defaults(func=cmd_netcod)

    sp = sub.add_parser("continuous", help="continuous-time tandem via discretization")
    common(sp, spec_required=False)
    sp.add_argument("--lambdas", required=True, help="comma-separated service rates (1/s)")
    sp.add_argument("--buffers", required=True, help="comma-separated buffer sizes")
    sp.add_argument("--tau", type=float, required=True, help="epoch length (s)")
    sp.add_argument("--method", choices=("exact", "rbie", "dbie", "all"), default="all")
    sp.set_defaults(func=cmd_continuous)

    sp = sub.add_parser("allocate", help="buffer allocation search")
    common(sp, spec_required=False)
    sp.add_argument("--eps", required=True, help="comma-separated erasure probabilities")
    sp.add_argument("--budget", type=int, required=True)
    sp.add_argument(
        "--objective", choices=("max-throughput", "min-delay"), default="max-throughput"
    )
    sp.add_argument("--floor", type=float, default=None, help="throughput floor for min-delay")
    sp.add_argument("--method", choices=("auto", "exhaustive", "neighborhood"), default="auto")
    sp.add_argument("--top", type=int, default=10)
    sp.set_defaults(func=cmd_allocate)

    sp = sub.add_parser("reproduce", help="emit plot-ready sweep datasets")
    common(sp)
    sp.add_argument("--figure", required=True, help=f"one of: {', '.join(FIGURES)}")
    sp.add_argument("--max-hops", type=int, default=8, dest="max_hops")
    sp.add_argument("--max-memory", type=int, default=8, dest="max_memory")
    sp.add_argument(
        "--build-cap",
        type=float,
        default=3e7,
        dest="build_cap",
        help="skip exact curves when states * 2^h exceeds this",
    )
    sp.set_defaults(func=cmd_reproduce)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StateSpaceCapError as exc:
        print(f"linenet: {exc}", file=sys.stderr)
        return EXIT_CAP
    except ConvergenceError as exc:
        print(f"linenet: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (SpecValidationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"linenet: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except LineNetError as exc:
        print(f"linenet: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
