"""Command line entry point: ``insitusim {run,sweep,compare-mapping,model}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict

from . import experiments as ex
from .dtl import QueueMode
from .engine import write_trace_csv
from .errors import InfeasibleScenario, InSituError
from .model import STAGES, StageCosts, evaluate, extract_stages, split_idle, steady_state_span
from .platform import load_platform, make_cluster
from .workflow import InSituWorkflow, Mapping, WorkflowConfig, load_mapping

log = logging.getLogger("insitusim")

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


def _emit(text, path):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _fill_ranks(platform, n_ranks, ana_mapping):
    """Place ranks on cores left free by the analytics, node by node."""
    used = ana_mapping.per_node()
    entries, left = [], n_ranks
    for node in platform.nodes:
        if left == 0:
            break
        take = min(left, node.cores - used.get(node.name, 0))
        if take > 0:
            entries.append((node.name, take))
            left -= take
    if left:
        raise InfeasibleScenario(f"{n_ranks} ranks do not fit on the platform next to the analytics actors")
    return Mapping(entries)


def _run_flags(args):
    n_actors, map_file, cost, cscale, size, dscale = args.analysis
    platform = load_platform(args.platform) if args.platform else make_cluster(args.nodes)
    n_actors = int(n_actors)
    ana = load_mapping(map_file, expected=n_actors, platform=platform)
    cfg = WorkflowConfig(
        total_iterations=args.iterations, stride=args.stride, exchange_every=args.exchange_every,
        n_ranks=args.ranks, rank_iteration_work=args.rank_work, halo_bytes=args.halo_bytes,
        n_analytics_actors=n_actors, analytics_mapping=map_file, cost_per_particle=float(cost),
        compute_scale=float(cscale), size_per_particle=float(size), data_scale=float(dscale),
        n_particles=args.particles, dtl_mode=args.dtl,
    )
    ranks = (
        load_mapping(args.rank_mapping, expected=cfg.n_ranks, platform=platform)
        if args.rank_mapping else _fill_ranks(platform, cfg.n_ranks, ana)
    )
    run = InSituWorkflow(platform, cfg, ranks, ana).run()
    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            write_trace_csv(run.trace, fh)
    record = {"rho": cfg.rho, "end_time": run.end_time, "makespan_simulated": run.sim_component_end}
    if cfg.rho >= 3:
        stages, _, _ = extract_stages(run.trace, cfg)
        span, n = steady_state_span(run.trace)
        idle_S, idle_A = split_idle(stages)
        ev = evaluate(stages, cfg.rho)
        record.update(asdict(stages))
        record.update(
            idle_S=idle_S, idle_A=idle_A, makespan_predicted=ev.makespan,
            eta_predicted=ev.eta, eta_simulated=ex.simulated_efficiency(stages, span, n), scenario=ev.scenario,
        )
    _emit(json.dumps(record, indent=1) + "\n", args.output)
    return EXIT_OK


def cmd_run(args):
    if args.analysis:
        return _run_flags(args)
    if not args.scenario:
        raise SystemExit("run: give a scenario file or --analysis parameters")
    s = ex.load_scenario(args.scenario)
    result = ex.run_scenario(s, trace=bool(args.trace))
    if args.trace:
        ex.write_trace(result, args.trace)
    _emit(ex.export_report([result], format=args.format), args.output)
    return EXIT_OK


def cmd_sweep(args):
    scenarios = ex.build_scenario_grid(args.spec)
    log.info("running %d scenarios", len(scenarios))
    results = ex.run_sweep(scenarios, jobs=args.jobs)
    _emit(ex.export_report(results, format=args.format), args.output)
    return EXIT_OK


def cmd_compare(args):
    base = ex.load_scenario(args.scenario)
    rows = ex.compare_data_scaling(base, args.scales, dedicated_nodes=args.dedicated)
    lines = [("data_scale", "mode", "sim_time")] + [(repr(float(s)), m, f"{t:.9f}") for s, m, t, _ in rows]
    out = "".join(",".join(map(str, row)) + "\n" for row in lines)
    _emit(out, args.output)
    return EXIT_OK


def cmd_model(args):
    stages = StageCosts(**{k: getattr(args, k) for k in STAGES})
    if args.iterations % args.stride:
        raise InSituError(f"stride {args.stride} does not divide {args.iterations} iterations")
    rho = args.iterations // args.stride
    ev = evaluate(stages, rho, strict=args.strict)
    idle_S, idle_A = split_idle(stages, strict=args.strict)
    record = {"rho": rho, **asdict(stages), "idle_S": idle_S, "idle_A": idle_A,
              "idle_per_step": ev.idle_per_step, "makespan_predicted": ev.makespan,
              "eta_predicted": ev.eta, "scenario": ev.scenario}
    _emit(json.dumps(record, indent=1) + "\n", args.output)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="insitusim", description="In-situ workflow simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one scenario file or one --analysis configuration")
    r.add_argument("scenario", nargs="?")
    r.add_argument("--analysis", nargs=6, metavar=("N_ACTORS", "MAPPING", "COST", "COMPUTE_SCALE", "SIZE", "DATA_SCALE"))
    r.add_argument("--iterations", type=int, default=8000)
    r.add_argument("--stride", type=int, default=1000)
    r.add_argument("--exchange-every", type=int, default=20)
    r.add_argument("--ranks", type=int, default=30)
    r.add_argument("--rank-work", type=float, default=1.0 / 30)
    r.add_argument("--halo-bytes", type=float, default=0.0)
    r.add_argument("--particles", type=int, default=1_372_000)
    r.add_argument("--dtl", type=QueueMode.parse, default=QueueMode.MAILBOX)
    r.add_argument("--platform")
    r.add_argument("--nodes", type=int, default=1, help="built-in cluster size when no --platform is given")
    r.add_argument("--rank-mapping")
    r.add_argument("--trace")
    r.add_argument("--format", choices=("csv", "structured"), default="csv")
    r.add_argument("-o", "--output")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run every scenario of a grid spec")
    s.add_argument("spec")
    s.add_argument("-j", "--jobs", type=int, default=1)
    s.add_argument("--format", choices=("csv", "structured"), default="csv")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("compare-mapping", help="in-situ vs in-transit under growing data volume")
    c.add_argument("scenario")
    c.add_argument("--scales", type=float, nargs="+", default=[1, 10, 100, 500, 1000])
    c.add_argument("--dedicated", type=int, default=None)
    c.add_argument("-o", "--output")
    c.set_defaults(func=cmd_compare)

    m = sub.add_parser("model", help="evaluate idle time, makespan and efficiency from stage costs")
    for k in STAGES:
        m.add_argument(f"--{k}", type=float, default=0.0)
    m.add_argument("--iterations", type=int, default=8000)
    m.add_argument("--stride", type=int, default=1000)
    m.add_argument("--strict", action="store_true", help="charge Se and C as well")
    m.add_argument("-o", "--output")
    m.set_defaults(func=cmd_model)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InfeasibleScenario as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InSituError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
