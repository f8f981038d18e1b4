import math

import pytest

from conftest import two_node_flat
from insitusim.dtl import DTL, POISON, UNBOUNDED, AsyncHandle, Message, QueueMode, create_queue
from insitusim.engine import TERMINATED, Simulation
from insitusim.errors import DuplicateName, QueueClosed


@pytest.fixture
def sim(flat2):
    return Simulation(flat2, trace_flows=True)


def test_create_queues(sim):
    q = create_queue(sim, "state", QueueMode.INSTANTANEOUS, UNBOUNDED)
    assert len(q) == 0 and q.capacity == math.inf
    m = create_queue(sim, "box", "mailbox", 4)
    assert m.mode is QueueMode.MAILBOX and m.capacity == 4 and len(m) == 0
    with pytest.raises(DuplicateName):
        create_queue(sim, "state", "mailbox")


def test_registry(sim):
    dtl = DTL(sim)
    q = dtl.create_queue("state")
    assert dtl["state"] is q and sim.queues["state"] is q
    with pytest.raises(DuplicateName):
        dtl.create_queue("state", QueueMode.MAILBOX)


@pytest.mark.parametrize("capacity", [0, -1, 2.5])
def test_bad_capacity(sim, capacity):
    with pytest.raises(ValueError):
        create_queue(sim, "q", capacity=capacity)


def test_bad_mode():
    with pytest.raises(ValueError):
        QueueMode.parse("carrier-pigeon")


def test_message_invariants():
    with pytest.raises(ValueError):
        Message(-1, 0)
    with pytest.raises(ValueError):
        Message(5, POISON)
    assert Message(0, POISON).is_poison


def test_instantaneous_waiting_consumer_unblocks_same_time(sim):
    q = create_queue(sim, "q")
    got = {}

    def consumer(actor):
        msg = yield q.get(actor)
        got["t"], got["tag"] = sim.now, msg.tag

    def producer(actor):
        yield actor.compute(2.0)
        h = q.put(actor, Message(1e9, 7))
        got["put"] = sim.now
        yield h
        got["put_done"] = sim.now

    sim.spawn_actor("n1", consumer)
    sim.spawn_actor("n0", producer)
    sim.run()
    assert got == {"t": 2.0, "tag": 7, "put": 2.0, "put_done": 2.0}


def test_instantaneous_get_pending_returns_immediately(sim):
    q = create_queue(sim, "q")
    got = {}

    def producer(actor):
        q.put(actor, Message(10, 1))
        yield actor.compute(0)

    def consumer(actor):
        yield actor.compute(3.0)
        msg = yield q.get(actor)
        got["t"] = sim.now
        got["msg"] = msg.tag

    sim.spawn_actor("n0", producer)
    sim.spawn_actor("n0", consumer)
    sim.run()
    assert got == {"t": 3.0, "msg": 1}


def test_mailbox_cross_node_transfer(sim):
    q = create_queue(sim, "box", QueueMode.MAILBOX)
    got = {}

    def consumer(actor):
        yield q.get(actor)
        got["c"] = sim.now

    def producer(actor):
        got["h"] = yield q.put(actor, Message(1e6, 0))

    sim.spawn_actor("n1", consumer)
    sim.spawn_actor("n0", producer)
    sim.run()
    assert got["c"] == pytest.approx(9.0e-4, rel=1e-12)
    assert got["h"] == pytest.approx(9.0e-4, rel=1e-12)


def test_async_put_returns_immediately(sim):
    q = create_queue(sim, "box", QueueMode.MAILBOX)
    got = {}

    def producer(actor):
        h = q.put(actor, Message(1e6, 0))
        assert isinstance(h, AsyncHandle)
        got["returned"] = sim.now
        got["completed_early"] = h.completed
        yield actor.compute(1e-4)
        yield h
        got["waited"] = sim.now
        yield h
        got["again"] = sim.now

    def consumer(actor):
        yield actor.compute(5e-4)
        yield q.get(actor)

    sim.spawn_actor("n0", producer)
    sim.spawn_actor("n1", consumer)
    sim.run()
    assert got["returned"] == 0.0 and not got["completed_early"]
    assert got["waited"] == pytest.approx(5e-4 + 9e-4, rel=1e-12)
    assert got["again"] == got["waited"]


def test_mailbox_same_node_uses_loopback_only(sim):
    q = create_queue(sim, "box", QueueMode.MAILBOX)

    def producer(actor, n):
        for i in range(n):
            yield q.put(actor, Message(1e6, i))

    def consumer(actor, n):
        for _ in range(n):
            yield q.get(actor)

    sim.spawn_actor("n0", producer, 2)
    sim.spawn_actor("n0", consumer, 1)
    sim.spawn_actor("n1", consumer, 1)
    sim.run()
    flows = [e.detail for e in sim.events if "begin" in e.detail and e.detail.startswith("flow")]
    assert len(flows) == 2
    for d in flows:
        src_dst = d.split()[3]
        links = d.split("links=")[1]
        src, dst = src_dst.split("->")
        if src == dst:
            assert links == f"loopback({src})"
        else:
            assert "loopback" not in links


def test_fifo_order(sim):
    q = create_queue(sim, "q")
    got = []

    def producer(actor, tag, delay):
        yield actor.timeout(delay)
        q.put(actor, Message(1, tag))

    def consumer(actor):
        yield actor.timeout(1)
        for _ in range(2):
            got.append((yield q.get(actor)).tag)

    sim.spawn_actor("n0", producer, "P1", 0.1)
    sim.spawn_actor("n0", producer, "P2", 0.2)
    sim.spawn_actor("n1", consumer)
    sim.run()
    assert got == ["P1", "P2"]


def test_waiting_consumers_matched_by_block_time_then_id(sim):
    q = create_queue(sim, "q")
    order = []

    def consumer(actor, delay):
        yield actor.timeout(delay)
        yield q.get(actor)
        order.append(actor.id)

    def producer(actor):
        yield actor.timeout(5)
        for i in range(3):
            q.put(actor, Message(0, i))

    sim.spawn_actor("n0", consumer, 2.0)
    sim.spawn_actor("n0", consumer, 1.0)
    sim.spawn_actor("n0", consumer, 1.0)
    sim.spawn_actor("n0", producer)
    sim.run()
    assert order == [1, 2, 0]


def test_bounded_queue_applies_back_pressure(sim):
    q = create_queue(sim, "q", capacity=2)
    times = []

    def producer(actor):
        for i in range(4):
            yield q.put(actor, Message(0, i))
            times.append(sim.now)

    def consumer(actor):
        yield actor.timeout(10)
        for _ in range(4):
            yield q.get(actor)
            assert len(q) <= 2

    sim.spawn_actor("n0", producer)
    sim.spawn_actor("n0", consumer)
    sim.run()
    assert times == [0, 0, 10, 10]


def test_flow_dependency_never_before_put(sim):
    q = create_queue(sim, "box", QueueMode.MAILBOX)
    log = []

    def producer(actor):
        for i in range(5):
            yield actor.compute(0.3)
            q.put(actor, Message(1e5 * (i + 1), i))

    def consumer(actor):
        for _ in range(5):
            msg = yield q.get(actor)
            log.append((sim.now, msg.put_time))
            yield actor.compute(0.1)

    sim.spawn_actor("n0", producer)
    sim.spawn_actor("n1", consumer)
    sim.run()
    assert all(recv >= put for recv, put in log)


@pytest.mark.parametrize("mode", list(QueueMode))
def test_poison_rebroadcast_unblocks_every_consumer(flat2, mode):
    sim = Simulation(flat2)
    q = create_queue(sim, "q", mode)
    live = {"n": 3}

    def producer(actor):
        for i in range(4):
            yield actor.compute(1)
            q.put(actor, Message(100, i))
        q.put(actor, Message(0, POISON))

    def consumer(actor):
        while True:
            msg = yield q.get(actor)
            if msg.is_poison:
                live["n"] -= 1
                if live["n"]:
                    q.put(actor, Message(0, POISON))
                return

    sim.spawn_actor("n0", producer)
    for node in ("n0", "n1", "n1"):
        sim.spawn_actor(node, consumer)
    sim.run()
    assert all(a.state == TERMINATED for a in sim.actors)
    assert q.n_puts == q.n_gets == 4 + 3


def test_queue_closed_after_run(sim):
    q = create_queue(sim, "q")
    holder = {}

    def body(actor):
        holder["a"] = actor
        yield actor.compute(1)

    sim.spawn_actor("n0", body)
    sim.run()
    with pytest.raises(QueueClosed):
        q.put(holder["a"], Message(0, 1))
    with pytest.raises(QueueClosed):
        q.get(holder["a"])


def test_instantaneous_adds_no_time():
    p = two_node_flat()
    sim = Simulation(p)
    q = create_queue(sim, "q")
    got = {}

    def body(actor):
        yield actor.compute(1.5)
        yield q.put(actor, Message(1e9, 0))
        yield q.get(actor)
        got["t"] = sim.now

    sim.spawn_actor("n0", body)
    sim.run()
    assert got["t"] == 1.5
