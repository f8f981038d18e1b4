"""Simulated data transport layer: producer/consumer message queues.

Two internal implementations share one interface:

``instantaneous``
    A bounded FIFO. Exchanges cost no simulated time but still order
    producers before consumers. A full queue blocks producers.
``mailbox``
    A rendezvous point. A put and a get are matched FIFO, then the payload
    moves from the producer's node to the consumer's node through the
    network model (the node loopback when both sit on the same node).

``put`` returns an :class:`AsyncHandle`. Yielding it right away gives a
synchronous put; keeping it and yielding later gives an asynchronous one.
"""

from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass, field
from enum import Enum

from .engine import Event
from .errors import DuplicateName, QueueClosed

POISON = "POISON"


class QueueMode(str, Enum):
    INSTANTANEOUS = "instantaneous"
    MAILBOX = "mailbox"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown DTL mode {value!r} (expected instantaneous or mailbox)") from None


UNBOUNDED = math.inf


@dataclass
class Message:
    payload_size: float
    tag: object
    producer: object = None
    data: object = None
    put_time: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if self.payload_size < 0:
            raise ValueError("payload_size must be >= 0")
        if self.tag == POISON and self.payload_size != 0:
            raise ValueError("POISON messages carry no payload")

    @property
    def is_poison(self):
        return self.tag == POISON


class AsyncHandle(Event):
    __slots__ = ("id",)

    def __init__(self, sim, hid, desc):
        super().__init__(sim, desc)
        self.id = hid


class _Waiter:
    __slots__ = ("key", "actor", "event", "on_match")

    def __init__(self, key, actor, event, on_match):
        self.key = key
        self.actor = actor
        self.event = event
        self.on_match = on_match

    def __lt__(self, other):
        return self.key < other.key


class MessageQueue:
    def __init__(self, sim, name, mode=QueueMode.INSTANTANEOUS, capacity=UNBOUNDED):
        if capacity != UNBOUNDED and (int(capacity) != capacity or capacity < 1):
            raise ValueError("capacity must be a positive integer or unbounded")
        self.sim = sim
        self.name = name
        self.mode = QueueMode.parse(mode)
        self.capacity = capacity
        # instantaneous: stored messages; mailbox: unmatched puts
        self.pending = []
        self._overflow = []
        self._getters = []
        self._handle_ids = itertools.count()
        self._seq = itertools.count()
        self.n_puts = 0
        self.n_gets = 0

    def __len__(self):
        return len(self.pending)

    def _check_open(self):
        if self.sim.closed:
            raise QueueClosed(f"queue {self.name} is closed")

    def put(self, actor, message, on_match=None):
        """Offer ``message``; the returned handle fires when the put completes."""
        self._check_open()
        message.producer = actor
        message.put_time = self.sim.now
        self.n_puts += 1
        handle = AsyncHandle(self.sim, next(self._handle_ids), f"put({self.name})")
        entry = (message, handle, actor, on_match)
        if self._getters:
            self._match(entry, self._getters.pop(0))
        elif len(self.pending) < self.capacity:
            self.pending.append(entry)
            if self.mode is QueueMode.INSTANTANEOUS:
                handle.succeed(self.sim.now)
        else:
            self._overflow.append(entry)
        return handle

    def get(self, actor, on_match=None):
        """Event firing with the next message once it is matched and delivered."""
        self._check_open()
        ev = Event(self.sim, f"get({self.name})")
        if self.pending:
            entry = self.pending.pop(0)
            self._admit_overflow()
            self._match(entry, _Waiter(None, actor, ev, on_match))
        else:
            key = (self.sim.now, actor.id, next(self._seq))
            bisect.insort(self._getters, _Waiter(key, actor, ev, on_match))
        return ev

    def _admit_overflow(self):
        if self._overflow and len(self.pending) < self.capacity:
            entry = self._overflow.pop(0)
            self.pending.append(entry)
            if self.mode is QueueMode.INSTANTANEOUS:
                entry[1].succeed(self.sim.now)

    def _match(self, entry, waiter):
        message, handle, producer, put_on_match = entry
        if put_on_match is not None:
            put_on_match(message)
        if waiter.on_match is not None:
            waiter.on_match(message)
        if self.mode is QueueMode.INSTANTANEOUS:
            if not handle.triggered:
                handle.succeed(self.sim.now)
            self._deliver(message, waiter)
            return
        if message.payload_size > 0:
            transfer = self.sim.execute_comm(producer.node, waiter.actor.node, message.payload_size)
            transfer.add_callback(lambda _ev: self._finish(message, handle, waiter))
        else:
            self._finish(message, handle, waiter)

    def _finish(self, message, handle, waiter):
        handle.succeed(self.sim.now)
        self._deliver(message, waiter)

    def _deliver(self, message, waiter):
        self.n_gets += 1
        waiter.event.succeed(message)


class DTL:
    """Registry of the named queues living in one simulation."""

    def __init__(self, sim):
        self.sim = sim
        self.queues = {}

    def create_queue(self, name, mode=QueueMode.INSTANTANEOUS, capacity=UNBOUNDED):
        if name in self.queues:
            raise DuplicateName(f"queue {name!r} already exists")
        q = MessageQueue(self.sim, name, mode, capacity)
        self.queues[name] = q
        self.sim.queues[name] = q
        return q

    def __getitem__(self, name):
        return self.queues[name]

    def totals(self):
        return sum(q.n_puts for q in self.queues.values()), sum(q.n_gets for q in self.queues.values())


def create_queue(sim, name, mode=QueueMode.INSTANTANEOUS, capacity=UNBOUNDED):
    """Create and register a queue directly on a simulation."""
    if name in sim.queues:
        raise DuplicateName(f"queue {name!r} already exists")
    q = MessageQueue(sim, name, mode, capacity)
    sim.queues[name] = q
    return q
