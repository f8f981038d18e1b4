import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from insitusim.platform import platform_from_dict  # noqa: E402


def two_node_flat(bandwidth=1.25e9, latency=1e-4, cores=4, **node):
    """Two nodes joined by one shared link."""
    return platform_from_dict({
        "topology": "flat",
        "nodes": [{"name": "n", "count": 2, "cores": cores, **node}],
        "links": [{"name": "backbone", "bandwidth": bandwidth, "latency": latency}],
    })


@pytest.fixture
def flat2():
    return two_node_flat()


def stage_times(trace):
    """{(label, step, actor): [(begin, end), ...]} from a workflow trace."""
    out, open_ = {}, {}
    for e in trace:
        if e.label == "other":
            continue
        kind, step = e.detail.split()
        step = int(step.split("=")[1])
        if kind == "begin":
            open_[(e.label, step, e.actor)] = e.time
        else:
            out.setdefault((e.label, step, e.actor), []).append((open_.pop((e.label, step, e.actor)), e.time))
    assert not open_
    return out


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for num in sorted(lines):
            terminalreporter.write_line(lines[num])
