"""Simulated cluster description: nodes, links, topology and routing.

Platform files are YAML (plain JSON also parses) with three top-level keys::

    topology: star            # or flat
    nodes:
      - {name: n, count: 32, cores: 32, core_speed: 1.0}
    links:
      - {name: backbone, bandwidth: 10Gbps, latency: 50us}
      - {name: link, per_node: true, bandwidth: 10Gbps, latency: 25us}

A node entry with ``count`` expands to ``n0 .. n31``. A link entry with
``per_node: true`` expands to one link per node named ``<node>-<name>``;
in a star topology that link is the node's access link unless the node
names one explicitly with ``link``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ParseError, UnknownNode, ValidationError

DEFAULT_LOOPBACK_BANDWIDTH = 16 * 2**30
DEFAULT_LOOPBACK_LATENCY = 1e-7

TOPOLOGIES = ("star", "flat")

_BW_UNITS = {
    "bps": 1 / 8, "kbps": 1e3 / 8, "mbps": 1e6 / 8, "gbps": 1e9 / 8, "tbps": 1e12 / 8,
    "Bps": 1.0, "kBps": 1e3, "KBps": 1e3, "MBps": 1e6, "GBps": 1e9, "TBps": 1e12,
    "KiBps": 2.0**10, "MiBps": 2.0**20, "GiBps": 2.0**30, "TiBps": 2.0**40,
}
_TIME_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9}
_QUANTITY = re.compile(r"^\s*([-+0-9.eE]+)\s*([A-Za-z]*)\s*$")


def _split_quantity(text):
    m = _QUANTITY.match(str(text))
    if not m:
        raise ParseError(f"cannot parse quantity {text!r}")
    try:
        return float(m.group(1)), m.group(2)
    except ValueError as exc:
        raise ParseError(f"cannot parse quantity {text!r}") from exc


def parse_bandwidth(value) -> float:
    """Return a bandwidth in bytes/second.

    Bare numbers are bytes/second. Suffixes with a lowercase ``bps`` are
    bits (``10Gbps`` is 1.25e9 B/s); ``Bps`` suffixes are bytes.
    """
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    number, unit = _split_quantity(value)
    if not unit:
        return number
    if unit in _BW_UNITS:
        return number * _BW_UNITS[unit]
    if unit.lower() in _BW_UNITS and unit.endswith("bps"):
        return number * _BW_UNITS[unit.lower()]
    raise ParseError(f"unknown bandwidth unit {unit!r}")


def parse_duration(value) -> float:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    number, unit = _split_quantity(value)
    if not unit:
        return number
    if unit not in _TIME_UNITS:
        raise ParseError(f"unknown time unit {unit!r}")
    return number * _TIME_UNITS[unit]


@dataclass(frozen=True)
class NodeSpec:
    name: str
    cores: int = 32
    core_speed: float = 1.0
    loopback_bandwidth: float = DEFAULT_LOOPBACK_BANDWIDTH
    loopback_latency: float = DEFAULT_LOOPBACK_LATENCY

    def validate(self):
        if not self.name:
            raise ValidationError("node name must be non-empty")
        if int(self.cores) != self.cores or self.cores < 1:
            raise ValidationError(f"node {self.name}: cores must be a positive integer")
        if not self.core_speed > 0 or not math.isfinite(self.core_speed):
            raise ValidationError(f"node {self.name}: core_speed must be > 0")
        if not self.loopback_bandwidth > 0:
            raise ValidationError(f"node {self.name}: loopback_bandwidth must be > 0")
        if not self.loopback_latency >= 0:
            raise ValidationError(f"node {self.name}: loopback_latency must be >= 0")


@dataclass(frozen=True)
class LinkSpec:
    name: str
    bandwidth: float
    latency: float = 0.0
    loopback: bool = False

    def validate(self):
        if not self.bandwidth > 0 or not math.isfinite(self.bandwidth):
            raise ValidationError(f"link {self.name}: bandwidth must be > 0")
        if not self.latency >= 0:
            raise ValidationError(f"link {self.name}: latency must be >= 0")


@dataclass(frozen=True)
class Platform:
    """Immutable cluster description.

    ``access`` maps node name to its access link name (star topology only).
    ``links`` holds the network links; per-node loopback pseudo-links live
    in ``loopbacks`` and are indexed after them in :attr:`all_links`.
    """

    nodes: tuple
    links: tuple
    topology: str = "star"
    backbone: str = "backbone"
    access: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "links", tuple(self.links))
        loopbacks = {
            n.name: LinkSpec(f"loopback({n.name})", n.loopback_bandwidth, n.loopback_latency, loopback=True)
            for n in self.nodes
        }
        object.__setattr__(self, "loopbacks", loopbacks)
        object.__setattr__(self, "_node_index", {n.name: i for i, n in enumerate(self.nodes)})
        object.__setattr__(self, "_link_by_name", {l.name: l for l in self.links})
        object.__setattr__(self, "_route_cache", {})
        self.validate()
        all_links = tuple(self.links) + tuple(loopbacks[n.name] for n in self.nodes)
        object.__setattr__(self, "all_links", all_links)
        object.__setattr__(self, "link_index", {l.name: i for i, l in enumerate(all_links)})

    def validate(self):
        if not self.nodes:
            raise ValidationError("platform needs at least one node")
        if self.topology not in TOPOLOGIES:
            raise ValidationError(f"unknown topology {self.topology!r}")
        if len(self._node_index) != len(self.nodes):
            seen = set()
            dup = next(n.name for n in self.nodes if n.name in seen or seen.add(n.name))
            raise ValidationError(f"duplicate node name {dup!r}")
        if len(self._link_by_name) != len(self.links):
            raise ValidationError("duplicate link name")
        for n in self.nodes:
            n.validate()
        for l in self.links:
            l.validate()
        if len(self.nodes) > 1:
            if self.backbone not in self._link_by_name:
                raise ValidationError(f"route references missing link {self.backbone!r}")
            if self.topology == "star":
                for n in self.nodes:
                    name = self.access.get(n.name)
                    if name is None:
                        raise ValidationError(f"node {n.name} has no access link")
                    if name not in self._link_by_name:
                        raise ValidationError(f"route references missing link {name!r}")

    @property
    def total_cores(self) -> int:
        return sum(n.cores for n in self.nodes)

    @property
    def node_names(self):
        return [n.name for n in self.nodes]

    def node(self, name) -> NodeSpec:
        try:
            return self.nodes[self._node_index[name]]
        except KeyError:
            raise UnknownNode(f"unknown node {name!r}") from None

    def has_node(self, name) -> bool:
        return name in self._node_index

    def link(self, name) -> LinkSpec:
        return self._link_by_name[name]

    def route(self, src, dst):
        return route(self, src, dst)


def route(p: Platform, src, dst):
    """Ordered list of links a transfer from ``src`` to ``dst`` crosses."""
    key = (src, dst)
    cached = p._route_cache.get(key)
    if cached is not None:
        return list(cached)
    p.node(src)
    p.node(dst)
    if src == dst:
        links = (p.loopbacks[src],)
    elif p.topology == "flat":
        links = (p.link(p.backbone),)
    else:
        links = (p.link(p.access[src]), p.link(p.backbone), p.link(p.access[dst]))
    p._route_cache[key] = links
    return list(links)


def _expand_nodes(entries):
    nodes = []
    for entry in entries:
        if not isinstance(entry, dict) or "name" not in entry:
            raise ParseError(f"node entry needs a name: {entry!r}")
        entry = dict(entry)
        count = entry.pop("count", None)
        access = entry.pop("link", None)
        try:
            kwargs = dict(
                cores=int(entry.pop("cores", 32)),
                core_speed=float(entry.pop("core_speed", 1.0)),
                loopback_bandwidth=parse_bandwidth(entry.pop("loopback_bandwidth", DEFAULT_LOOPBACK_BANDWIDTH)),
                loopback_latency=parse_duration(entry.pop("loopback_latency", DEFAULT_LOOPBACK_LATENCY)),
            )
        except (TypeError, ValueError) as exc:
            raise ParseError(f"bad node entry {entry!r}: {exc}") from exc
        name = str(entry.pop("name"))
        if entry:
            raise ParseError(f"unknown node keys {sorted(entry)}")
        names = [name] if count is None else [f"{name}{i}" for i in range(int(count))]
        nodes.extend((NodeSpec(n, **kwargs), access) for n in names)
    return nodes


def platform_from_dict(data) -> Platform:
    if not isinstance(data, dict):
        raise ParseError("platform document must be a mapping")
    topology = data.get("topology", "star")
    node_entries = _expand_nodes(data.get("nodes") or [])
    node_names = [n.name for n, _ in node_entries]
    links, templates, expanded = [], [], set()
    for entry in data.get("links") or []:
        if not isinstance(entry, dict) or "name" not in entry or "bandwidth" not in entry:
            raise ParseError(f"link entry needs name and bandwidth: {entry!r}")
        bw = parse_bandwidth(entry["bandwidth"])
        lat = parse_duration(entry.get("latency", 0.0))
        if entry.get("per_node"):
            templates.append(entry["name"])
            for n in node_names:
                links.append(LinkSpec(f"{n}-{entry['name']}", bw, lat))
                expanded.add(links[-1].name)
        else:
            links.append(LinkSpec(str(entry["name"]), bw, lat))
    backbone = data.get("backbone")
    if backbone is None:
        shared = [l.name for l in links if l.name not in expanded]
        backbone = "backbone" if "backbone" in shared or len(shared) != 1 else shared[0]
    access = {}
    for node, explicit in node_entries:
        if explicit is not None:
            access[node.name] = explicit
        elif len(templates) == 1:
            access[node.name] = f"{node.name}-{templates[0]}"
    return Platform(
        nodes=[n for n, _ in node_entries], links=links, topology=topology, backbone=backbone, access=access
    )


def load_platform(path) -> Platform:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return platform_from_dict(data)


def make_cluster(
    n_nodes,
    cores=32,
    bandwidth="10Gbps",
    latency=5e-5,
    topology="star",
    backbone_bandwidth=None,
    backbone_latency=None,
    core_speed=1.0,
    loopback_bandwidth=DEFAULT_LOOPBACK_BANDWIDTH,
    loopback_latency=DEFAULT_LOOPBACK_LATENCY,
    prefix="n",
) -> Platform:
    """Homogeneous single-switch cluster, the shape of the reference testbed."""
    bw = parse_bandwidth(bandwidth)
    links = [
        {
            "name": "backbone",
            "bandwidth": parse_bandwidth(backbone_bandwidth) if backbone_bandwidth is not None else bw,
            "latency": latency if backbone_latency is None else backbone_latency,
        }
    ]
    if topology == "star":
        links.append({"name": "link", "per_node": True, "bandwidth": bw, "latency": latency})
    return platform_from_dict(
        {
            "topology": topology,
            "nodes": [
                {
                    "name": prefix,
                    "count": n_nodes,
                    "cores": cores,
                    "core_speed": core_speed,
                    "loopback_bandwidth": loopback_bandwidth,
                    "loopback_latency": loopback_latency,
                }
            ],
            "links": links,
        }
    )


def platform_to_dict(p: Platform) -> dict:
    return {
        "topology": p.topology,
        "backbone": p.backbone,
        "nodes": [
            {
                "name": n.name,
                "cores": n.cores,
                "core_speed": n.core_speed,
                "loopback_bandwidth": n.loopback_bandwidth,
                "loopback_latency": n.loopback_latency,
                **({"link": p.access[n.name]} if n.name in p.access else {}),
            }
            for n in p.nodes
        ],
        "links": [{"name": l.name, "bandwidth": l.bandwidth, "latency": l.latency} for l in p.links],
    }


def save_platform(p: Platform, path):
    Path(path).write_text(yaml.safe_dump(platform_to_dict(p), sort_keys=False))
