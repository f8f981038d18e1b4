"""In-situ application model: simulation ranks, analytics actors, collector.

Each simulation rank repeats ``rho = N / T`` steps. A step computes ``T``
iterations (with a halo exchange every ``exchange_every`` iterations), then,
once the previous step's metrics are back, fire-and-forgets its state share
into the DTL. Analytics actors pull state shares, charge
``particles * cost_per_particle * compute_scale`` work and send a metrics
record to the collector, which hands one copy back to every rank when a
full round is in.

Queue layout:

* ``state@<node>``: one state partition per node hosting analytics actors.
  A rank feeds the partition on its own node when there is one, so in-situ
  placements move data through the loopback.
* ``metrics``: analytics to collector.
* ``results/<rank>``: collector back to each rank.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dtl import POISON, Message, QueueMode, create_queue
from .engine import TERMINATED, Event, Simulation
from .errors import ConfigError, CountMismatch, InvalidCoreCount, ParseError, UnknownNode

METRICS_BYTES = 64


@dataclass
class WorkflowConfig:
    total_iterations: int = 8000
    stride: int = 1000
    exchange_every: int = 20
    n_ranks: int = 1
    rank_iteration_work: float = 1e-3
    halo_bytes: float = 0.0
    n_analytics_actors: int = 1
    analytics_mapping: str | None = None
    cost_per_particle: float = 7.93e-7
    compute_scale: float = 1.0
    size_per_particle: float = 100.0
    data_scale: float = 1.0
    n_particles: int = 1_372_000
    dtl_mode: QueueMode = QueueMode.INSTANTANEOUS
    # analytics slowdown from spreading actors over several nodes
    scatter_penalty: float = 1.0
    metrics_bytes: float = METRICS_BYTES
    # relative per-step noise on rank work; 0 keeps runs deterministic
    jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.dtl_mode = QueueMode.parse(self.dtl_mode)
        self.validate()

    def validate(self):
        for name in ("total_iterations", "stride", "exchange_every", "n_ranks", "n_analytics_actors"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.total_iterations % self.stride:
            raise ConfigError(f"stride {self.stride} does not divide {self.total_iterations} iterations")
        for name in ("compute_scale", "data_scale", "rank_iteration_work", "halo_bytes",
                     "cost_per_particle", "size_per_particle", "jitter"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.n_particles < 0:
            raise ConfigError("n_particles must be >= 0")
        if self.scatter_penalty <= 0:
            raise ConfigError("scatter_penalty must be > 0")

    @property
    def rho(self):
        return self.total_iterations // self.stride

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class Mapping:
    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple((str(n), int(c)) for n, c in self.entries))

    @property
    def total(self):
        return sum(c for _, c in self.entries)

    def expand(self):
        """Node of each mapped entity, in mapping order."""
        return [node for node, count in self.entries for _ in range(count)]

    def per_node(self):
        out = {}
        for node, count in self.entries:
            out[node] = out.get(node, 0) + count
        return out

    def nodes(self):
        return list(dict.fromkeys(n for n, c in self.entries if c > 0))

    def dumps(self):
        return "".join(f"{n} {c}\n" for n, c in self.entries)


_SLOTS = re.compile(r"^slots=(\d+)$")


def parse_mapping(text):
    entries = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) == 1:
            count = 1
        elif len(parts) == 2:
            m = _SLOTS.match(parts[1])
            token = m.group(1) if m else parts[1]
            try:
                count = int(token)
            except ValueError:
                raise ParseError(f"line {lineno}: bad slot count {parts[1]!r}") from None
        else:
            raise ParseError(f"line {lineno}: expected 'node count', got {raw!r}")
        if count < 0:
            raise ParseError(f"line {lineno}: negative slot count")
        entries.append((parts[0], count))
    return Mapping(entries)


def validate_mapping(mapping, expected=None, platform=None, used_cores=None, oversubscribe=False):
    if expected is not None and mapping.total != expected:
        raise CountMismatch(f"mapping has {mapping.total} slots, expected {expected}")
    if platform is None:
        return mapping
    used = dict(used_cores or {})
    for node, count in mapping.per_node().items():
        if not platform.has_node(node):
            raise UnknownNode(f"unknown node {node!r} in mapping")
        free = platform.node(node).cores - used.get(node, 0)
        if count > free and not oversubscribe:
            raise ConfigError(f"node {node}: {count} slots but only {free} free cores")
    return mapping


def load_mapping(path, expected=None, platform=None, used_cores=None, oversubscribe=False):
    """Read a hostfile-like mapping (``node count`` per line, ``#`` comments)."""
    mapping = parse_mapping(Path(path).read_text())
    return validate_mapping(mapping, expected, platform, used_cores, oversubscribe)


def assign_particles(n_particles, n_actors, index):
    """Near-equal split; the first ``n_particles % n_actors`` get one extra."""
    if n_actors < 1:
        raise ValueError("n_actors must be >= 1")
    if not 0 <= index < n_actors:
        raise IndexError(f"actor index {index} out of range")
    base, extra = divmod(int(n_particles), int(n_actors))
    return base + (1 if index < extra else 0)


@dataclass(frozen=True)
class AllocationRatio:
    R: int
    sim_cores_per_node: int
    ana_cores_per_node: int

    @property
    def cores(self):
        return self.sim_cores_per_node + self.ana_cores_per_node


def generate_ratio_allocations(cores_per_node):
    """Simulation/analytics core splits with ``k = c/2, c/4, ..., 1`` analytics cores."""
    c = cores_per_node
    if not isinstance(c, (int, np.integer)) or c < 2 or c & (c - 1):
        raise InvalidCoreCount(f"cores per node must be a power of two >= 2, got {c!r}")
    out = []
    k = c // 2
    while k >= 1:
        out.append(AllocationRatio((c - k) // k, c - k, k))
        k //= 2
    return out


def rank_grid(n_ranks):
    """Three-factor split of ``n_ranks`` with the least surface, largest first."""
    best = None
    for a in range(1, n_ranks + 1):
        if n_ranks % a:
            continue
        rest = n_ranks // a
        for b in range(1, rest + 1):
            if rest % b:
                continue
            c = rest // b
            dims = tuple(sorted((a, b, c), reverse=True))
            key = (a * b + b * c + a * c, dims)
            if best is None or key < best:
                best = key
    return best[1]


def halo_neighbors(rank, dims):
    """Periodic face neighbours of ``rank`` (self-neighbours dropped)."""
    nx, ny, nz = dims
    x, rem = divmod(rank, ny * nz)
    y, z = divmod(rem, nz)
    out = []
    for axis, size in enumerate(dims):
        if size == 1:
            continue
        for step in (1, -1):
            c = [x, y, z]
            c[axis] = (c[axis] + step) % size
            out.append((c[0] * ny + c[1]) * nz + c[2])
    return out


@dataclass
class WorkflowRun:
    sim: Simulation
    config: WorkflowConfig
    end_time: float
    sim_component_end: float
    analytics_work: float
    puts: int
    gets: int
    trace: list = field(repr=False, default_factory=list)

    @property
    def conserved(self):
        return self.puts == self.gets


class InSituWorkflow:
    """Wire ranks, analytics actors and the collector into one simulation."""

    def __init__(self, platform, config, rank_mapping, analytics_mapping, collector_node=None,
                 trace=True, trace_flows=False, oversubscribe=False):
        self.platform = platform
        self.cfg = config
        validate_mapping(rank_mapping, config.n_ranks, platform, oversubscribe=oversubscribe)
        validate_mapping(
            analytics_mapping, config.n_analytics_actors, platform,
            used_cores=rank_mapping.per_node(), oversubscribe=oversubscribe,
        )
        self.rank_nodes = rank_mapping.expand()
        self.ana_nodes = analytics_mapping.expand()
        self.collector_node = collector_node or self.ana_nodes[0]
        platform.node(self.collector_node)

        self.sim = Simulation(platform, trace=trace, trace_flows=trace_flows)
        mode = config.dtl_mode
        self.state_queues = {
            node: create_queue(self.sim, f"state@{node}", mode) for node in analytics_mapping.nodes()
        }
        self.metrics = create_queue(self.sim, "metrics", mode)
        self.results = [create_queue(self.sim, f"results/{r}", mode) for r in range(config.n_ranks)]

        ana_nodes = list(self.state_queues)
        self.rank_target = [
            node if node in self.state_queues else ana_nodes[r % len(ana_nodes)]
            for r, node in enumerate(self.rank_nodes)
        ]
        self.partition_live = {n: 0 for n in ana_nodes}
        for node in self.ana_nodes:
            self.partition_live[node] += 1
        self.live_analytics = len(self.ana_nodes)
        self.live_ranks = config.n_ranks
        self.sim_component_end = 0.0
        self.analytics_work = 0.0

        self.dims = rank_grid(config.n_ranks)
        self.halo_on = config.halo_bytes > 0 and config.n_ranks > 1
        self._neighbors = [halo_neighbors(r, self.dims) for r in range(config.n_ranks)] if self.halo_on else None
        self._halo_in = {}
        self._rng = np.random.default_rng(config.seed) if config.jitter > 0 else None
        self._jitter_cache = {}

        self.rank_actors = [
            self.sim.spawn_actor(node, simulation_rank, self, r, name=f"rank{r}") for r, node in enumerate(self.rank_nodes)
        ]
        self.analytics_actors = [
            self.sim.spawn_actor(node, analytics_actor, self, i, name=f"analytics{i}")
            for i, node in enumerate(self.ana_nodes)
        ]
        self.collector = self.sim.spawn_actor(self.collector_node, metric_collector, self, name="collector")

    def run(self):
        end = self.sim.run()
        puts = sum(q.n_puts for q in self.sim.queues.values())
        gets = sum(q.n_gets for q in self.sim.queues.values())
        return WorkflowRun(
            self.sim, self.cfg, end, self.sim_component_end, self.analytics_work, puts, gets, self.sim.events
        )

    # simulation component ---------------------------------------------

    def _step_work(self, step):
        w = self.cfg.rank_iteration_work
        if self._rng is None:
            return w
        factor = self._jitter_cache.get(step)
        if factor is None:
            # one draw per step keeps ranks in lock-step
            factor = 1.0 + self.cfg.jitter * float(self._rng.uniform(-1.0, 1.0))
            self._jitter_cache[step] = factor
        return w * factor

    def _halo_event(self, rank, rnd):
        key = (rank, rnd)
        slot = self._halo_in.get(key)
        if slot is None:
            slot = [0, Event(self.sim, f"halo round {rnd} for rank {rank}")]
            self._halo_in[key] = slot
        return slot

    def _halo_arrival(self, dst, rnd):
        slot = self._halo_event(dst, rnd)
        slot[0] += 1
        if slot[0] == len(self._neighbors[dst]):
            slot[1].succeed(self.sim.now)
            del self._halo_in[(dst, rnd)]

    def _simulate(self, actor, rank, step):
        cfg = self.cfg
        work = self._step_work(step)
        first = (step - 1) * cfg.stride
        if not self.halo_on:
            yield actor.compute(cfg.stride * work)
            return
        done = 0
        while done < cfg.stride:
            g = first + done
            chunk = min(cfg.stride - done, cfg.exchange_every - g % cfg.exchange_every)
            yield actor.compute(chunk * work)
            done += chunk
            g += chunk
            if g % cfg.exchange_every == 0:
                rnd = g // cfg.exchange_every
                sends = []
                for nb in self._neighbors[rank]:
                    ev = actor.comm(self.rank_actors[nb], cfg.halo_bytes)
                    ev.add_callback(lambda _e, nb=nb, rnd=rnd: self._halo_arrival(nb, rnd))
                    sends.append(ev)
                sends.append(self._halo_event(rank, rnd)[1])
                yield sends

    def _collect(self, actor, rank, step):
        msg = yield self.results[rank].get(actor, on_match=lambda m: actor.trace("C", f"begin step={m.tag}"))
        actor.trace("C", f"end step={msg.tag}")
        if msg.tag != step:
            raise RuntimeError(f"rank {rank} collected metrics of step {msg.tag} while expecting {step}")

    def _rank_finished(self, actor):
        self.live_ranks -= 1
        self.sim_component_end = max(self.sim_component_end, self.sim.now)
        if self.live_ranks == 0:
            for q in self.state_queues.values():
                q.put(actor, Message(0, POISON))


def simulation_rank(actor, wf, rank):
    cfg = wf.cfg
    share = assign_particles(cfg.n_particles, cfg.n_ranks, rank)
    nbytes = share * cfg.size_per_particle * cfg.data_scale
    state_q = wf.state_queues[wf.rank_target[rank]]
    for step in range(1, cfg.rho + 1):
        actor.trace("S", f"begin step={step}")
        yield from wf._simulate(actor, rank, step)
        actor.trace("S", f"end step={step}")
        if step > 1:
            yield from wf._collect(actor, rank, step - 1)
        actor.trace("I", f"begin step={step}")
        state_q.put(actor, Message(nbytes, step, data=share))
        actor.trace("I", f"end step={step}")
    yield from wf._collect(actor, rank, cfg.rho)
    wf._rank_finished(actor)


def analytics_actor(actor, wf, index):
    cfg = wf.cfg
    node = actor.node
    q = wf.state_queues[node]

    def matched(m):
        if not m.is_poison:
            actor.trace("G", f"begin step={m.tag}")

    while True:
        msg = yield q.get(actor, on_match=matched)
        if msg.is_poison:
            wf.partition_live[node] -= 1
            wf.live_analytics -= 1
            if wf.partition_live[node] > 0:
                q.put(actor, Message(0, POISON))
            if wf.live_analytics == 0:
                wf.metrics.put(actor, Message(0, POISON))
            return
        actor.trace("G", f"end step={msg.tag}")
        work = msg.data * cfg.cost_per_particle * cfg.compute_scale * cfg.scatter_penalty
        wf.analytics_work += work
        actor.trace("A", f"begin step={msg.tag}")
        yield actor.compute(work)
        actor.trace("A", f"end step={msg.tag}")
        actor.trace("Se", f"begin step={msg.tag}")
        wf.metrics.put(actor, Message(cfg.metrics_bytes, msg.tag))
        actor.trace("Se", f"end step={msg.tag}")


def metric_collector(actor, wf):
    n_ranks = wf.cfg.n_ranks
    for rnd in itertools.count(1):
        collected = 0
        while collected < n_ranks:
            msg = yield wf.metrics.get(actor)
            if msg.is_poison:
                actor.trace("other", f"collector exit rounds={rnd - 1} partial={collected}")
                return
            collected += 1
            actor.trace("other", f"collector recv step={msg.tag} n={collected}")
        actor.trace("other", f"collector fire round={rnd} metrics={collected} step={msg.tag}")
        for r in range(n_ranks):
            wf.results[r].put(actor, Message(wf.cfg.metrics_bytes, msg.tag))
        actor.trace("other", f"collector copies round={rnd} copies={n_ranks}")


def run_workflow(platform, config, rank_mapping, analytics_mapping, **kwargs):
    return InSituWorkflow(platform, config, rank_mapping, analytics_mapping, **kwargs).run()


def all_terminated(sim):
    return all(a.state == TERMINATED for a in sim.actors)
