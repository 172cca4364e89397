"""
Brute-force reference implementations used to check the fast code paths.
They are deliberately naive and share no logic with the library.
"""

from __future__ import annotations

import itertools
import math
import random
from typing import List, Optional, Sequence, Tuple

from bikestress.geo import haversine_m
from bikestress.network import Edge, EdgeAttributes, StreetNetwork

TIE_RTOL = 1e-9


def linear_nearest(points: Sequence[Tuple[int, float, float]], lat: float, lon: float) -> Tuple[int, float]:
    best = None
    for pid, plat, plon in points:
        key = (haversine_m(lat, lon, plat, plon), pid)
        if best is None or key < best:
            best = key
    return best[1], best[0]


def linear_within(points, lat: float, lon: float, r: float) -> List[Tuple[int, float]]:
    hits = []
    for pid, plat, plon in points:
        d = haversine_m(lat, lon, plat, plon)
        if d <= r:
            hits.append((d, pid))
    hits.sort()
    return [(pid, d) for d, pid in hits]


def all_simple_paths(net: StreetNetwork, origin: int, dest: int):
    """Every simple directed path as (nodes, edges)."""
    out = []

    def walk(u, nodes, edges):
        if u == dest:
            out.append((list(nodes), list(edges)))
            return
        for ei, e in enumerate(net.edges):
            if e.source != u or e.target in nodes:
                continue
            nodes.append(e.target)
            edges.append(ei)
            walk(e.target, nodes, edges)
            nodes.pop()
            edges.pop()

    walk(origin, [origin], [])
    return out


def brute_shortest(net: StreetNetwork, weights: Sequence[float], origin: int, dest: int):
    """
    Minimum weight over all simple paths, and the tie-broken winner: among
    paths within the tie tolerance, smallest node sequence, then smallest
    per-step (weight, edge id).
    """
    paths = all_simple_paths(net, origin, dest)
    if not paths:
        return None
    scored = [(sum(weights[e] for e in edges), nodes, edges) for nodes, edges in paths]
    best = min(s[0] for s in scored)
    budget = best + TIE_RTOL * max(1.0, best)
    tied = [s for s in scored if s[0] <= budget]
    tied.sort(key=lambda s: (s[1], [(weights[e], e) for e in s[2]]))
    return best, tied[0][1], tied[0][2]


def random_network(rng: random.Random, n_nodes: int, extra_edges: int, lattice: bool = True) -> StreetNetwork:
    """
    Strongly connected network: a random two-way spanning tree plus extra
    one-way edges. On a lattice many lengths coincide, which exercises ties.
    """
    lat0, lon0 = 44.83, 11.62
    coords = set()
    while len(coords) < n_nodes:
        if lattice:
            coords.add((rng.randint(0, 4), rng.randint(0, 4)))
        else:
            coords.add((rng.uniform(0, 4), rng.uniform(0, 4)))
    coords = sorted(coords)
    rng.shuffle(coords)
    step = 0.001
    lats = tuple(round(lat0 + y * step, 7) for _, y in coords)
    lons = tuple(round(lon0 + x * step, 7) for x, _ in coords)
    speeds = (None, 10.0, 30.0, 50.0)
    edges = []

    def add(u, v):
        attrs = EdgeAttributes(highway="residential", maxspeed_kmh=rng.choice(speeds))
        edges.append(Edge(u, v, haversine_m(lats[u], lons[u], lats[v], lons[v]), attrs))

    order = list(range(n_nodes))
    for k in range(1, n_nodes):
        parent = order[rng.randrange(k)]
        add(order[k], parent)
        add(parent, order[k])
    for _ in range(extra_edges):
        u, v = rng.sample(range(n_nodes), 2)
        add(u, v)
    return StreetNetwork(lats, lons, tuple(edges))


def brute_viterbi(emissions, transitions) -> Tuple[Optional[List[int]], float]:
    best, arg = -math.inf, None
    for states in itertools.product(*[range(len(layer)) for layer in emissions]):
        total = emissions[0][states[0]]
        for t in range(1, len(states)):
            total = total + transitions[t - 1][states[t - 1]][states[t]]
            total = total + emissions[t][states[t]]
        if total > best:
            best, arg = total, list(states)
    return arg, best


def path_logp(emissions, transitions, states) -> float:
    total = emissions[0][states[0]]
    for t in range(1, len(states)):
        total = total + transitions[t - 1][states[t - 1]][states[t]]
        total = total + emissions[t][states[t]]
    return total


def random_lattice(rng: random.Random, max_len: int = 8, max_states: int = 4):
    n = rng.randint(1, max_len)
    sizes = [rng.randint(1, max_states) for _ in range(n)]

    def val():
        # small integer grid forces ties; occasional impossible moves
        if rng.random() < 0.1:
            return -math.inf
        return -float(rng.randint(0, 6)) if rng.random() < 0.5 else -rng.uniform(0, 6)

    emissions = [[val() for _ in range(k)] for k in sizes]
    transitions = [
        [[val() for _ in range(sizes[t + 1])] for _ in range(sizes[t])] for t in range(n - 1)
    ]
    return emissions, transitions
