"""Scenario grids, sweep runner and CSV/JSON reports."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .dtl import QueueMode
from .engine import write_trace_csv
from .errors import ConfigError, InfeasibleScenario, ParseError
from .model import STAGES, EfficiencyReport, StageCosts, evaluate, extract_stages, split_idle, steady_state_span
from .platform import load_platform, make_cluster
from .workflow import AllocationRatio, InSituWorkflow, Mapping, WorkflowConfig, generate_ratio_allocations

log = logging.getLogger(__name__)

IN_SITU = "in-situ"
IN_TRANSIT = "in-transit"

# workload knobs a scenario or sweep file may override
WORKLOAD_KEYS = (
    "iterations", "n_particles", "cost_per_particle", "size_per_particle", "iteration_work",
    "exchange_every", "halo_bytes", "scatter_alpha", "jitter", "seed", "cores_per_node",
    "bandwidth", "latency", "loopback_bandwidth",
)


@dataclass(frozen=True)
class Scenario:
    name: str
    n_nodes: int
    ratio: AllocationRatio
    stride_cost: tuple = (1000, 50.0)
    mapping_mode: str = IN_SITU
    dedicated_nodes: int = 1
    data_scale: float = 1.0
    dtl_mode: QueueMode = QueueMode.MAILBOX
    repetitions: int = 1
    platform: str | None = None
    iterations: int = 8000
    n_particles: int = 1_372_000
    cost_per_particle: float = 7.93e-7
    size_per_particle: float = 100.0
    # total work units per iteration, split over the ranks
    iteration_work: float = 1.0
    exchange_every: int = 20
    halo_bytes: float = 0.0
    # analytics slowdown per extra node hosting analytics actors
    scatter_alpha: float = 0.0
    jitter: float = 0.0
    seed: int = 0
    # built-in cluster used when no platform file is given
    cores_per_node: int = 32
    bandwidth: str = "10Gbps"
    latency: float = 5e-5
    loopback_bandwidth: object = 16 * 2**30

    def __post_init__(self):
        object.__setattr__(self, "dtl_mode", QueueMode.parse(self.dtl_mode))
        object.__setattr__(self, "stride_cost", (int(self.stride_cost[0]), float(self.stride_cost[1])))
        if self.mapping_mode not in (IN_SITU, IN_TRANSIT):
            raise ConfigError(f"unknown mapping mode {self.mapping_mode!r}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.n_nodes < 1:
            raise ConfigError("n_nodes must be >= 1")
        if self.mapping_mode == IN_TRANSIT and not 1 <= self.dedicated_nodes < self.n_nodes:
            raise InfeasibleScenario(
                f"{self.name}: in-transit needs 1 <= dedicated nodes ({self.dedicated_nodes}) < nodes ({self.n_nodes})"
            )
        if self.iterations % self.stride_cost[0]:
            raise InfeasibleScenario(f"{self.name}: stride {self.stride_cost[0]} does not divide {self.iterations}")

    @property
    def stride(self):
        return self.stride_cost[0]

    @property
    def cost_scale(self):
        return self.stride_cost[1]

    @property
    def mapping_label(self):
        return IN_SITU if self.mapping_mode == IN_SITU else f"{IN_TRANSIT}:{self.dedicated_nodes}"

    def sort_key(self):
        return (self.n_nodes, self.ratio.R, self.stride)

    def load_platform(self):
        if self.platform:
            p = load_platform(self.platform)
        else:
            p = make_cluster(
                self.n_nodes, cores=self.cores_per_node, bandwidth=self.bandwidth, latency=self.latency,
                loopback_bandwidth=self.loopback_bandwidth,
            )
        if len(p.nodes) < self.n_nodes:
            raise InfeasibleScenario(f"{self.name}: platform has {len(p.nodes)} nodes, scenario needs {self.n_nodes}")
        return p


@dataclass
class SweepResult:
    scenario: Scenario
    efficiency: EfficiencyReport
    component_times: dict
    record: dict
    stages: StageCosts = None
    trace: list = field(default=None, repr=False)


def _check_feasible(s, platform):
    nodes = platform.nodes[: s.n_nodes]
    for n in nodes:
        if s.mapping_mode == IN_SITU and s.ratio.cores > n.cores:
            raise InfeasibleScenario(
                f"{s.name}: ratio needs {s.ratio.sim_cores_per_node}+{s.ratio.ana_cores_per_node} cores, "
                f"node {n.name} has {n.cores}"
            )


def build_mappings(s, platform):
    """(rank mapping, analytics mapping, collector node) for a scenario."""
    _check_feasible(s, platform)
    nodes = platform.nodes[: s.n_nodes]
    if s.mapping_mode == IN_SITU:
        ranks = Mapping([(n.name, s.ratio.sim_cores_per_node) for n in nodes])
        ana = Mapping([(n.name, s.ratio.ana_cores_per_node) for n in nodes])
    else:
        sim_nodes, ana_nodes = nodes[: -s.dedicated_nodes], nodes[-s.dedicated_nodes:]
        ranks = Mapping([(n.name, n.cores) for n in sim_nodes])
        ana = Mapping([(n.name, n.cores) for n in ana_nodes])
    if ranks.total < 1 or ana.total < 1:
        raise InfeasibleScenario(f"{s.name}: mapping leaves a component without cores")
    return ranks, ana, ana.nodes()[0]


def workflow_config(s, ranks, ana, seed=None):
    n_ana_nodes = len(ana.nodes())
    return WorkflowConfig(
        total_iterations=s.iterations,
        stride=s.stride,
        exchange_every=s.exchange_every,
        n_ranks=ranks.total,
        rank_iteration_work=s.iteration_work / ranks.total,
        halo_bytes=s.halo_bytes,
        n_analytics_actors=ana.total,
        cost_per_particle=s.cost_per_particle,
        compute_scale=s.cost_scale,
        size_per_particle=s.size_per_particle,
        data_scale=s.data_scale,
        n_particles=s.n_particles,
        dtl_mode=s.dtl_mode,
        scatter_penalty=1.0 + s.scatter_alpha * (n_ana_nodes - 1),
        jitter=s.jitter,
        seed=s.seed if seed is None else seed,
    )


def _measure(run, cfg):
    stages, reports, deviation = extract_stages(run.trace, cfg)
    span, n_steps = steady_state_span(run.trace)
    return stages, span, n_steps, deviation


def simulated_efficiency(stages, span, n_steps):
    """Efficiency from the measured step period rather than the stage sum."""
    period = span / n_steps
    if period <= 0:
        return 1.0
    sim, ana = stages.sides()
    idle = max(period - sim, 0.0) + max(period - ana, 0.0)
    return max(0.0, 1.0 - idle / period)


def run_scenario(s, trace=False, trace_flows=False):
    """Simulate a scenario and reduce it to stage costs and idle/active times."""
    platform = s.load_platform()
    ranks, ana, collector = build_mappings(s, platform)
    measured = []
    last = None
    for rep in range(s.repetitions):
        cfg = workflow_config(s, ranks, ana, seed=s.seed + rep)
        wf = InSituWorkflow(platform, cfg, ranks, ana, collector_node=collector, trace=True, trace_flows=trace_flows)
        last = wf.run()
        measured.append((*_measure(last, cfg), last.sim_component_end))
    n = len(measured)
    stages = StageCosts(*(sum(getattr(m[0], k) for m in measured) / n for k in STAGES))
    span = sum(m[1] for m in measured) / n
    n_steps = measured[0][2]
    end = sum(m[4] for m in measured) / n
    rho = cfg.rho
    report = evaluate(stages, rho)
    sim_side, ana_side = stages.sides()
    sim_active = min(n_steps * sim_side, span)
    ana_active = min(n_steps * ana_side, span)
    times = {
        "sim_active": sim_active,
        "sim_idle": span - sim_active,
        "ana_active": ana_active,
        "ana_idle": span - ana_active,
        "span": span,
    }
    idle_S, idle_A = split_idle(stages)
    record = {
        "name": s.name,
        "nodes": s.n_nodes,
        "R": s.ratio.R,
        "sim_cores": s.ratio.sim_cores_per_node,
        "ana_cores": s.ratio.ana_cores_per_node,
        "stride": s.stride,
        "cost_scale": s.cost_scale,
        "mapping": s.mapping_label,
        "data_scale": s.data_scale,
        "dtl": s.dtl_mode.value,
        "n_ranks": cfg.n_ranks,
        "n_analytics": cfg.n_analytics_actors,
        "rho": rho,
        **{k: getattr(stages, k) for k in STAGES},
        "idle_S": idle_S,
        "idle_A": idle_A,
        "makespan_predicted": report.makespan,
        "makespan_simulated": end,
        "eta_predicted": report.eta,
        "eta_simulated": simulated_efficiency(stages, span, n_steps),
        "scenario": report.scenario,
        **{k: times[k] for k in ("sim_active", "sim_idle", "ana_active", "ana_idle")},
        "deviation": max(m[3] for m in measured),
        "analytics_work": last.analytics_work,
    }
    return SweepResult(s, report, times, record, stages, last.trace if trace else None)


def _run_quiet(s):
    return run_scenario(s)


def run_sweep(scenarios, jobs=1):
    """Run scenarios, in a process pool when ``jobs > 1``; order is preserved."""
    scenarios = list(scenarios)
    if jobs <= 1 or len(scenarios) <= 1:
        return [run_scenario(s) for s in scenarios]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_quiet, scenarios))


def compare_data_scaling(base, scales, dedicated_nodes=None):
    """Simulation-component time at each data scale, in-situ vs in-transit.

    Returns rows ``(scale, mode, time)`` with the in-situ row first for each
    scale. Both modes use the mailbox DTL.
    """
    scales = list(scales)
    if not scales:
        raise ValueError("need at least one data scale")
    if any(x < 0 for x in scales):
        raise ValueError("data scales must be >= 0")
    dedicated = base.dedicated_nodes if dedicated_nodes is None else dedicated_nodes
    rows = []
    for scale in scales:
        for mode in (IN_SITU, IN_TRANSIT):
            s = replace(
                base, name=f"{base.name}-{mode}-x{scale:g}", mapping_mode=mode, dedicated_nodes=dedicated,
                data_scale=scale, dtl_mode=QueueMode.MAILBOX,
            )
            res = run_scenario(s)
            rows.append((scale, mode, res.record["makespan_simulated"], res))
    return rows


# scenario and sweep files ----------------------------------------------


def _ratio(value, cores):
    if isinstance(value, AllocationRatio):
        return value
    if isinstance(value, dict):
        sim, ana = int(value["sim"]), int(value["ana"])
    elif isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ParseError(f"ratio pair must be [sim, ana], got {value!r}")
        sim, ana = int(value[0]), int(value[1])
    else:
        R = int(value)
        try:
            table = generate_ratio_allocations(cores)
        except Exception as exc:
            raise InfeasibleScenario(f"cannot derive ratio R={R} for {cores} cores: {exc}") from exc
        match = [r for r in table if r.R == R]
        if not match:
            raise InfeasibleScenario(f"ratio R={R} not available with {cores} cores per node")
        return match[0]
    if sim < 1 or ana < 1:
        raise InfeasibleScenario(f"ratio {sim}:{ana} needs at least one core per component")
    if sim + ana > cores:
        raise InfeasibleScenario(f"ratio {sim}:{ana} needs {sim + ana} cores, nodes have {cores}")
    R = sim // ana if sim % ana == 0 else sim / ana
    return AllocationRatio(R, sim, ana)


def _mapping(value):
    if isinstance(value, str):
        if value == IN_SITU:
            return IN_SITU, 1
        if value.startswith(IN_TRANSIT):
            _, _, n = value.partition(":")
            return IN_TRANSIT, int(n or 1)
    if isinstance(value, dict) and len(value) == 1 and IN_TRANSIT in value:
        return IN_TRANSIT, int(value[IN_TRANSIT] or 1)
    raise ParseError(f"bad mapping mode {value!r}")


def _read_yaml(path_or_data):
    if isinstance(path_or_data, dict):
        return dict(path_or_data)
    try:
        data = yaml.safe_load(Path(path_or_data).read_text())
    except yaml.YAMLError as exc:
        raise ParseError(f"{path_or_data}: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path_or_data}: expected a mapping")
    return data


def _workload(data):
    wl = dict(data.pop("workload", None) or {})
    for k in WORKLOAD_KEYS:
        if k in data:
            wl[k] = data.pop(k)
    unknown = set(wl) - set(WORKLOAD_KEYS)
    if unknown:
        raise ParseError(f"unknown workload keys {sorted(unknown)}")
    return wl


def _cores_of(data, wl):
    if data.get("platform"):
        return max(n.cores for n in load_platform(data["platform"]).nodes)
    return int(wl.get("cores_per_node", 32))


def load_scenario(path_or_data):
    """Read a single-scenario file (same keys as a sweep, scalars only)."""
    data = _read_yaml(path_or_data)
    wl = _workload(data)
    cores = _cores_of(data, wl)
    mode, dedicated = _mapping(data.pop("mapping", IN_SITU))
    if "stride_cost" in data:
        stride, cost = data.pop("stride_cost")
    else:
        stride, cost = data.pop("stride", 1000), data.pop("cost_scale", 50)
    s = Scenario(
        name=str(data.pop("name", "scenario")),
        n_nodes=int(data.pop("nodes", 1)),
        ratio=_ratio(data.pop("ratio", 15), cores),
        stride_cost=(stride, cost),
        mapping_mode=mode,
        dedicated_nodes=int(data.pop("dedicated_nodes", dedicated)),
        data_scale=float(data.pop("data_scale", 1.0)),
        dtl_mode=data.pop("dtl", QueueMode.MAILBOX),
        repetitions=int(data.pop("repetitions", 1)),
        platform=data.pop("platform", None),
        **wl,
    )
    if data:
        raise ParseError(f"unknown scenario keys {sorted(data)}")
    return s


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def build_scenario_grid(spec):
    """Expand a sweep spec into scenarios ordered by (nodes, R, stride, ...).

    With ``budget`` set, each stride ``T`` gets cost scale
    ``budget * T / iterations`` so every pair performs the same total
    analysis.
    """
    data = _read_yaml(spec)
    name = str(data.pop("name", "sweep"))
    wl = _workload(data)
    iterations = int(wl.get("iterations", 8000))
    cores = _cores_of(data, wl)
    platform = data.pop("platform", None)
    nodes = [int(n) for n in _as_list(data.pop("nodes", [1]))]
    ratios = [_ratio(r, cores) for r in _as_list(data.pop("ratios", data.pop("ratio", [15])))]
    budget = data.pop("budget", None)
    if "stride_cost" in data:
        if budget is not None:
            raise ParseError("give either stride_cost pairs or strides with a budget")
        pairs = [(int(t), float(c)) for t, c in data.pop("stride_cost")]
    else:
        strides = [int(t) for t in _as_list(data.pop("strides", data.pop("stride", [1000])))]
        if budget is None:
            cost = float(data.pop("cost_scale", 1.0))
            pairs = [(t, cost) for t in strides]
        else:
            pairs = []
            for t in strides:
                if iterations % t:
                    raise InfeasibleScenario(f"stride {t} does not divide {iterations} iterations")
                pairs.append((t, float(budget) * t / iterations))
    mappings = [_mapping(m) for m in _as_list(data.pop("mapping", IN_SITU))]
    scales = [float(x) for x in _as_list(data.pop("data_scale", [1.0]))]
    dtls = [QueueMode.parse(d) for d in _as_list(data.pop("dtl", [QueueMode.MAILBOX]))]
    repetitions = int(data.pop("repetitions", 1))
    if data:
        raise ParseError(f"unknown sweep keys {sorted(data)}")

    out = []
    for n, ratio, (t, c), (mode, ded), scale, dtl in itertools.product(nodes, ratios, pairs, mappings, scales, dtls):
        label = f"{name}-n{n}-R{ratio.R}-T{t}-c{c:g}-{mode}" + (f"{ded}" if mode == IN_TRANSIT else "")
        if len(scales) > 1:
            label += f"-x{scale:g}"
        if len(dtls) > 1:
            label += f"-{dtl.value}"
        out.append(
            Scenario(
                name=label, n_nodes=n, ratio=ratio, stride_cost=(t, c), mapping_mode=mode, dedicated_nodes=ded,
                data_scale=scale, dtl_mode=dtl, repetitions=repetitions, platform=platform, **wl,
            )
        )
    for s in out:
        if s.mapping_mode == IN_SITU and s.ratio.cores > cores:
            raise InfeasibleScenario(f"{s.name}: ratio needs {s.ratio.cores} cores, nodes have {cores}")
    return out


# reports ---------------------------------------------------------------

REPORT_COLUMNS = (
    "name", "nodes", "R", "sim_cores", "ana_cores", "stride", "cost_scale", "mapping", "data_scale", "dtl",
    "n_ranks", "n_analytics", "rho", "S", "I", "G", "A", "Se", "C", "idle_S", "idle_A",
    "makespan_predicted", "makespan_simulated", "eta_predicted", "eta_simulated", "scenario",
    "sim_active", "sim_idle", "ana_active", "ana_idle",
)
TIME_COLUMNS = frozenset(
    ("S", "I", "G", "A", "Se", "C", "idle_S", "idle_A", "makespan_predicted", "makespan_simulated",
     "sim_active", "sim_idle", "ana_active", "ana_idle")
)
ETA_COLUMNS = frozenset(("eta_predicted", "eta_simulated"))
INT_COLUMNS = frozenset(("nodes", "sim_cores", "ana_cores", "stride", "n_ranks", "n_analytics", "rho"))
FLOAT_COLUMNS = frozenset(("cost_scale", "data_scale"))


def _fmt(col, value):
    if col in TIME_COLUMNS:
        return f"{value:.9f}"
    if col in ETA_COLUMNS:
        return f"{value:.6f}"
    if col in FLOAT_COLUMNS:
        return repr(float(value))
    return str(value)


def _ordered(results):
    results = list(results)
    if not results:
        raise ValueError("no results to export")
    return sorted(results, key=lambda r: r.scenario.sort_key())


def export_report(results, path=None, format="csv"):
    """Write one row per scenario; returns the text written.

    CSV times carry 9 decimals and efficiencies 6. ``structured`` writes a
    JSON list of records with full precision.
    """
    rows = [r.record for r in _ordered(results)]
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for rec in rows:
            w.writerow([_fmt(c, rec[c]) for c in REPORT_COLUMNS])
        text = buf.getvalue()
    elif format in ("structured", "json"):
        text = json.dumps([{c: rec[c] for c in REPORT_COLUMNS} for rec in rows], indent=1) + "\n"
    else:
        raise ValueError(f"unknown report format {format!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def _parse_value(col, text):
    if col in INT_COLUMNS:
        return int(text)
    if col in TIME_COLUMNS or col in ETA_COLUMNS or col in FLOAT_COLUMNS:
        return float(text)
    if col == "R":
        f = float(text)
        return int(f) if f.is_integer() else f
    return text


def parse_report(text):
    """Inverse of :func:`export_report` for both formats."""
    stripped = text.lstrip()
    if stripped.startswith("["):
        return json.loads(text)
    return [{c: _parse_value(c, v) for c, v in row.items()} for row in csv.DictReader(io.StringIO(text))]


def write_trace(result, path):
    with open(path, "w", newline="") as fh:
        write_trace_csv(result.trace, fh)


def scenario_to_dict(s):
    d = asdict(s)
    d["ratio"] = [s.ratio.sim_cores_per_node, s.ratio.ana_cores_per_node]
    d["dtl_mode"] = s.dtl_mode.value
    return d
