"""Deterministic discrete-event core.

Actors are generator functions. An actor yields :class:`Event` objects and is
resumed with the event's value once it fires::

    def worker(actor):
        t = yield actor.compute(10.0)
        yield actor.comm(peer, 1e6)

    sim = Simulation(platform)
    sim.spawn_actor("n0", worker)
    sim.run()

Events fire in ``(time, priority, seq)`` order, so identical inputs always
replay identically. Compute activities hold one core of the actor's node;
communications are fluid flows sharing link bandwidth max-min fairly.
"""

from __future__ import annotations

import csv
import heapq
import itertools
import math
from collections import deque
from typing import NamedTuple

import numpy as np

from .errors import DeadlockDetected, UnknownNode
from .maxmin import max_min_rates

RUNNABLE = "runnable"
BLOCKED = "blocked"
TERMINATED = "terminated"

STAGE_LABELS = ("S", "I", "G", "A", "Se", "C", "other")

# finishing tolerance, relative to the current clock
_TIME_EPS = 1e-13


class TraceEvent(NamedTuple):
    time: float
    actor: int
    label: str
    detail: str
    seq: int


class Event:
    """Something an actor can wait on. Fires once, carrying ``value``."""

    __slots__ = ("sim", "callbacks", "triggered", "value", "desc")

    def __init__(self, sim, desc="event"):
        self.sim = sim
        self.callbacks = []
        self.triggered = False
        self.value = None
        self.desc = desc

    def succeed(self, value=None):
        if self.triggered:
            raise RuntimeError(f"{self.desc} fired twice")
        self.triggered = True
        self.value = value
        callbacks, self.callbacks = self.callbacks, None
        for cb in callbacks:
            self.sim.schedule(0.0, cb, self)
        return self

    def add_callback(self, cb):
        if self.triggered:
            self.sim.schedule(0.0, cb, self)
        else:
            self.callbacks.append(cb)

    @property
    def completed(self):
        return self.triggered

    def __repr__(self):
        state = "done" if self.triggered else "pending"
        return f"<{type(self).__name__} {self.desc} {state}>"


class AllOf(Event):
    __slots__ = ("_left", "_events")

    def __init__(self, sim, events, desc="all-of"):
        super().__init__(sim, desc)
        self._events = list(events)
        self._left = len(self._events)
        if not self._left:
            self.succeed([])
            return
        for ev in self._events:
            ev.add_callback(self._one_done)

    def _one_done(self, _ev):
        self._left -= 1
        if self._left == 0:
            self.succeed([e.value for e in self._events])


class Actor:
    """Handle on a simulated process pinned to one node."""

    def __init__(self, sim, aid, node, name, gen):
        self.sim = sim
        self.id = aid
        self.node = node
        self.name = name
        self.state = RUNNABLE
        self._gen = gen
        self.waiting_on = None

    def compute(self, work):
        return self.sim.execute_compute(self, work)

    def comm(self, dst, size):
        return self.sim.execute_comm(self, dst, size)

    def timeout(self, delay):
        return self.sim.timeout(delay)

    def trace(self, label, detail=""):
        self.sim.trace(self.id, label, detail)

    def describe(self):
        return f"actor {self.id} ({self.name}@{self.node})"

    def __repr__(self):
        return f"<Actor {self.id} {self.name}@{self.node} {self.state}>"


class _Flow:
    __slots__ = ("id", "links", "size", "remaining", "rate", "event", "start", "src", "dst", "owner")


class Network:
    """Fluid network model with progressive max-min sharing.

    A flow first waits the summed latency of its route, then competes for
    bandwidth. Rates are recomputed whenever a flow enters or leaves.
    """

    def __init__(self, sim, platform):
        self.sim = sim
        self.platform = platform
        self.capacities = np.array([l.bandwidth for l in platform.all_links], dtype=float)
        self.link_names = [l.name for l in platform.all_links]
        self._route_idx = {}
        self.active = []
        self._last = 0.0
        self._version = 0
        self._reshare_pending = False
        self._ids = itertools.count()
        self.completed = 0

    def route_indices(self, src, dst):
        key = (src, dst)
        hit = self._route_idx.get(key)
        if hit is None:
            links = self.platform.route(src, dst)
            idx = self.platform.link_index
            hit = (tuple(idx[l.name] for l in links), math.fsum(l.latency for l in links))
            self._route_idx[key] = hit
        return hit

    def start_flow(self, src, dst, size, owner=None):
        links, latency = self.route_indices(src, dst)
        f = _Flow()
        f.id = next(self._ids)
        f.links = links
        f.size = float(size)
        f.remaining = float(size)
        f.rate = 0.0
        f.start = self.sim.now
        f.src, f.dst = src, dst
        f.owner = owner
        f.event = Event(self.sim, f"comm {src}->{dst} ({size:g} B)")
        if self.sim.trace_flows:
            names = "+".join(self.link_names[i] for i in links)
            self.sim.trace(
                -1 if owner is None else owner.id, "other",
                f"flow {f.id} begin {src}->{dst} size={f.size:.0f} links={names}",
            )
        if latency > 0:
            self.sim.schedule(latency, self._activate, f)
        else:
            self._activate(f)
        return f.event

    def _advance(self):
        now = self.sim.now
        dt = now - self._last
        if dt > 0:
            for f in self.active:
                f.remaining -= f.rate * dt
        self._last = now

    def _activate(self, f):
        self._advance()
        self.active.append(f)
        self._request_reshare()

    def _request_reshare(self):
        if not self._reshare_pending:
            self._reshare_pending = True
            self.sim.schedule(0.0, self._reshare, None, priority=1)

    def _reshare(self, _arg=None):
        self._reshare_pending = False
        self._advance()
        self._version += 1
        if not self.active:
            return
        rates = max_min_rates([f.links for f in self.active], self.capacities)
        soonest = math.inf
        for f, r in zip(self.active, rates):
            f.rate = float(r)
            soonest = min(soonest, max(f.remaining, 0.0) / f.rate)
        self.sim.schedule(soonest, self._wake, self._version, priority=1)

    def _wake(self, version):
        if version != self._version:
            return
        self._advance()
        now = self.sim.now
        slack = max(abs(now), 1e-9) * _TIME_EPS
        done = [f for f in self.active if f.remaining <= f.rate * slack]
        if not done:
            # rounding left a sliver; finish the closest flow
            done = [min(self.active, key=lambda f: (f.remaining / f.rate, f.id))]
        finished = set(id(f) for f in done)
        self.active = [f for f in self.active if id(f) not in finished]
        for f in done:
            f.remaining = 0.0
            self.completed += 1
            if self.sim.trace_flows:
                self.sim.trace(-1 if f.owner is None else f.owner.id, "other", f"flow {f.id} end {f.src}->{f.dst}")
            f.event.succeed(now)
        self._request_reshare()

    def link_loads(self):
        load = np.zeros(len(self.capacities))
        for f in self.active:
            for l in f.links:
                load[l] += f.rate
        return load


class _Cores:
    __slots__ = ("free", "waiting")

    def __init__(self, n):
        self.free = n
        self.waiting = deque()


class Simulation:
    """One single-threaded simulation instance over a platform."""

    def __init__(self, platform, trace=True, trace_flows=False):
        self.platform = platform
        self.now = 0.0
        self._heap = []
        self._seq = itertools.count()
        self._trace_seq = itertools.count()
        self.actors = []
        self.network = Network(self, platform)
        self._cores = {n.name: _Cores(n.cores) for n in platform.nodes}
        self.tracing = trace
        self.trace_flows = trace_flows
        self.events = []
        self.queues = {}
        self.closed = False
        self.processed = 0

    # scheduling -------------------------------------------------------

    def schedule(self, delay, callback, arg=None, priority=0):
        if delay < 0:
            raise ValueError("negative delay")
        heapq.heappush(self._heap, (self.now + delay, priority, next(self._seq), callback, arg))

    def timeout(self, delay, value=None):
        ev = Event(self, f"timeout({delay:g})")
        self.schedule(delay, lambda _a: ev.succeed(value if value is not None else self.now))
        return ev

    def all_of(self, events, desc="all-of"):
        return AllOf(self, events, desc)

    # actors -----------------------------------------------------------

    def spawn_actor(self, node, behavior, *args, name=None, **kwargs):
        """Start ``behavior(actor, *args, **kwargs)`` on ``node`` at the current time."""
        if not self.platform.has_node(node):
            raise UnknownNode(f"unknown node {node!r}")
        aid = len(self.actors)
        actor = Actor(self, aid, node, name or getattr(behavior, "__name__", "actor"), None)
        actor._gen = behavior(actor, *args, **kwargs)
        self.actors.append(actor)
        self.schedule(0.0, self._step, (actor, None))
        return actor

    def _step(self, payload):
        actor, value = payload
        if actor.state == TERMINATED:
            return
        actor.state = RUNNABLE
        actor.waiting_on = None
        gen = actor._gen
        try:
            target = gen.send(value) if gen is not None else None
        except StopIteration:
            actor.state = TERMINATED
            return
        if target is None:
            actor.state = TERMINATED if gen is None else RUNNABLE
            if gen is not None:
                self.schedule(0.0, self._step, (actor, None))
            return
        if isinstance(target, (list, tuple)):
            target = AllOf(self, target)
        if not isinstance(target, Event):
            raise TypeError(f"{actor.describe()} yielded {target!r}, expected an Event")
        actor.state = BLOCKED
        actor.waiting_on = target
        target.add_callback(lambda ev, a=actor: self._step((a, ev.value)))

    # activities -------------------------------------------------------

    def execute_compute(self, actor, work):
        """Run ``work`` units on one core of the actor's node.

        Duration is ``work / core_speed``. When every core is busy the
        request waits FIFO for one to free up.
        """
        if work < 0:
            raise ValueError("compute work must be >= 0")
        node = self.platform.node(actor.node)
        ev = Event(self, f"compute({work:g})@{actor.node}")
        if work == 0:
            ev.succeed(self.now)
            return ev
        cores = self._cores[actor.node]
        duration = work / node.core_speed
        if cores.free > 0:
            cores.free -= 1
            self.schedule(duration, self._compute_done, (actor.node, ev))
        else:
            cores.waiting.append((duration, ev))
        return ev

    def _compute_done(self, payload):
        node, ev = payload
        cores = self._cores[node]
        if cores.waiting:
            duration, nxt = cores.waiting.popleft()
            self.schedule(duration, self._compute_done, (node, nxt))
        else:
            cores.free += 1
        ev.succeed(self.now)

    def execute_comm(self, src, dst, size):
        """Transfer ``size`` bytes between two actors (or node names)."""
        if not size > 0:
            raise ValueError("communication size must be > 0")
        src_node = src.node if isinstance(src, Actor) else src
        dst_node = dst.node if isinstance(dst, Actor) else dst
        owner = src if isinstance(src, Actor) else None
        return self.network.start_flow(src_node, dst_node, size, owner)

    # tracing ----------------------------------------------------------

    def trace(self, actor_id, label, detail=""):
        if self.tracing:
            self.events.append(TraceEvent(self.now, actor_id, label, detail, next(self._trace_seq)))

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            write_trace_csv(self.events, fh)

    # main loop --------------------------------------------------------

    def run(self, until=None):
        """Process events in order; return the time of the last one processed."""
        heap = self._heap
        last = self.now
        while heap:
            if until is not None and heap[0][0] > until:
                self.now = until
                return last
            t, _prio, _seq, callback, arg = heapq.heappop(heap)
            self.now = t
            last = t
            callback(arg)
            self.processed += 1
        blocked = {a.describe(): _describe_wait(a.waiting_on) for a in self.actors if a.state != TERMINATED}
        if blocked:
            raise DeadlockDetected(blocked)
        self.closed = True
        return last

    def blocked_actors(self):
        return [a for a in self.actors if a.state == BLOCKED]


def _describe_wait(ev):
    if ev is None:
        return "nothing"
    if isinstance(ev, AllOf):
        pending = [e.desc for e in ev._events if not e.triggered]
        return "all of [" + ", ".join(pending) + "]"
    return ev.desc


TRACE_HEADER = ("time", "actor", "label", "detail", "seq")


def write_trace_csv(events, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for e in events:
        w.writerow((f"{e.time:.9f}", e.actor, e.label, e.detail, e.seq))


def read_trace_csv(fh):
    rows = csv.DictReader(fh)
    return [
        TraceEvent(float(r["time"]), int(r["actor"]), r["label"], r["detail"], int(r["seq"]))
        for r in rows
    ]
