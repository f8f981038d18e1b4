"""Max-min fair bandwidth allocation by progressive filling."""

import numpy as np


def max_min_rates(flow_links, capacities):
    """Return the max-min fair rate of every flow.

    ``flow_links[f]`` is the sequence of link indices flow ``f`` crosses;
    ``capacities[l]`` is the bandwidth of link ``l``. All unfrozen flows grow
    at the same pace until some link saturates; flows crossing a saturated
    link are frozen, and filling continues with the rest.
    """
    n_flows = len(flow_links)
    if n_flows == 0:
        return np.zeros(0)
    lengths = np.fromiter((len(l) for l in flow_links), dtype=np.int64, count=n_flows)
    if (lengths == 0).any():
        raise ValueError("every flow must cross at least one link")
    edge_flow = np.repeat(np.arange(n_flows), lengths)
    edge_link_raw = np.fromiter((i for l in flow_links for i in l), dtype=np.int64, count=int(lengths.sum()))
    # compact to the links actually used
    used, edge_link = np.unique(edge_link_raw, return_inverse=True)
    remaining = np.asarray(capacities, dtype=float)[used].copy()
    n_links = len(used)

    rate = np.zeros(n_flows)
    frozen = np.zeros(n_flows, dtype=bool)
    while True:
        live_edges = ~frozen[edge_flow]
        if not live_edges.any():
            break
        counts = np.bincount(edge_link[live_edges], minlength=n_links)
        loaded = counts > 0
        share = np.full(n_links, np.inf)
        share[loaded] = remaining[loaded] / counts[loaded]
        delta = share.min()
        rate[~frozen] += delta
        remaining -= delta * counts
        saturated = loaded & (share <= delta * (1 + 1e-12))
        remaining[saturated] = 0.0
        hit = np.zeros(n_flows, dtype=bool)
        hit[edge_flow[saturated[edge_link] & live_edges]] = True
        frozen |= hit
    return rate


def link_loads(flow_links, rates, n_links):
    """Total allocated bandwidth per link (for conservation checks)."""
    load = np.zeros(n_links)
    for links, r in zip(flow_links, rates):
        for l in links:
            load[l] += r
    return load
