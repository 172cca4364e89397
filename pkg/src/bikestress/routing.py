"""
Shortest paths on a street network under length or travel-time weights.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .geo import Trajectory
from .network import Edge, StreetNetwork
from .spatial import BallTree

DEFAULT_SPEED_KMH = 15.0
DEFAULT_MAX_SNAP_M = 500.0
# Paths whose weights differ by less than this (relative) are treated as tied.
TIE_RTOL = 1e-9


class RoutingError(Exception):
    pass


class NoPathError(RoutingError):
    def __init__(self, origin: int, dest: int):
        self.origin = origin
        self.dest = dest
        super().__init__(f"no path from node {origin} to node {dest}")


class SnapError(RoutingError):
    def __init__(self, which: str, distance_m: float, limit_m: float):
        self.which = which
        self.distance_m = distance_m
        self.limit_m = limit_m
        super().__init__(
            f"{which} is {distance_m:.1f} m from the nearest node (limit {limit_m:.1f} m)"
        )


class SchemeKind(str, Enum):
    LENGTH = "length"
    TIME = "time"


@dataclass(frozen=True)
class WeightScheme:
    """Edge weighting: meters for ``length``, seconds for ``time``."""

    kind: SchemeKind = SchemeKind.LENGTH
    speed_kmh: float = DEFAULT_SPEED_KMH

    def __post_init__(self):
        object.__setattr__(self, "kind", SchemeKind(self.kind))
        if not (self.speed_kmh > 0 and math.isfinite(self.speed_kmh)):
            raise ValueError(f"cruising speed must be positive, got {self.speed_kmh}")

    @classmethod
    def length(cls) -> "WeightScheme":
        return cls(SchemeKind.LENGTH)

    @classmethod
    def time(cls, speed_kmh: float = DEFAULT_SPEED_KMH) -> "WeightScheme":
        return cls(SchemeKind.TIME, speed_kmh)


def edge_weight(scheme: WeightScheme, edge: Edge) -> float:
    if not edge.length_m > 0:
        raise ValueError("edge length must be positive")
    if scheme.kind is SchemeKind.LENGTH:
        return edge.length_m
    speed = scheme.speed_kmh
    if edge.attrs.maxspeed_kmh is not None:
        speed = min(speed, edge.attrs.maxspeed_kmh)
    return edge.length_m / (speed / 3.6)


@dataclass
class RoutePath:
    nodes: List[int]
    edges: List[int]
    total_weight: float
    total_length_m: float

    @property
    def is_empty(self) -> bool:
        return not self.edges


def _dijkstra(
    n: int,
    source: int,
    adjacency: Sequence[Sequence[int]],
    far_end: Callable[[int], int],
    weights: Sequence[float],
    limit: float = math.inf,
) -> List[float]:
    dist = [math.inf] * n
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for ei in adjacency[u]:
            v = far_end(ei)
            nd = d + weights[ei]
            if nd < dist[v] and nd <= limit:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


class Router:
    """
    Dijkstra router bound to one network and one weight scheme.

    Edge weights are computed once. Among paths whose weight is within
    ``TIE_RTOL`` of the optimum, the lexicographically smallest node sequence
    is returned, which makes results independent of heap ordering.
    """

    def __init__(
        self,
        net: StreetNetwork,
        scheme: WeightScheme | None = None,
        weights: Sequence[float] | None = None,
    ):
        self.net = net
        self.scheme = scheme or WeightScheme.length()
        if weights is None:
            weights = [edge_weight(self.scheme, e) for e in net.edges]
        elif len(weights) != net.num_edges or not all(w > 0 and math.isfinite(w) for w in weights):
            raise ValueError("custom weights must be positive and finite, one per edge")
        self.weights = list(weights)
        self._targets = [e.target for e in net.edges]
        self._sources = [e.source for e in net.edges]

    def distances_from(self, source: int, limit: float = math.inf) -> List[float]:
        return _dijkstra(
            self.net.num_nodes, source, self.net.out_edges, self._targets.__getitem__, self.weights, limit
        )

    def distances_to(self, dest: int, limit: float = math.inf) -> List[float]:
        return _dijkstra(
            self.net.num_nodes, dest, self.net.in_edges, self._sources.__getitem__, self.weights, limit
        )

    def shortest_path(self, origin: int, dest: int) -> RoutePath:
        n = self.net.num_nodes
        if not (0 <= origin < n and 0 <= dest < n):
            raise ValueError(f"node out of range: {origin} -> {dest}")
        if origin == dest:
            return RoutePath([origin], [], 0.0, 0.0)
        to_dest = self.distances_to(dest)
        best = to_dest[origin]
        if math.isinf(best):
            raise NoPathError(origin, dest)
        budget = best + TIE_RTOL * max(1.0, best)

        nodes = [origin]
        edges: List[int] = []
        visited = {origin}
        cost = 0.0
        u = origin
        while u != dest:
            choice = None
            for ei in self.net.out_edges[u]:
                v = self._targets[ei]
                if v in visited:
                    continue
                if cost + self.weights[ei] + to_dest[v] > budget:
                    continue
                key = (v, self.weights[ei], ei)
                if choice is None or key < choice:
                    choice = key
            if choice is None:  # pragma: no cover - guarded by the budget argument
                raise RoutingError("tie-breaking walk lost the optimal path")
            v, w, ei = choice
            cost += w
            edges.append(ei)
            nodes.append(v)
            visited.add(v)
            u = v
        return self._make_path(nodes, edges)

    def _make_path(self, nodes: List[int], edges: List[int]) -> RoutePath:
        total_w = 0.0
        total_len = 0.0
        for ei in edges:
            total_w += self.weights[ei]
            total_len += self.net.edges[ei].length_m
        return RoutePath(nodes, edges, total_w, total_len)


def shortest_path(net: StreetNetwork, scheme: WeightScheme, origin: int, dest: int) -> RoutePath:
    return Router(net, scheme).shortest_path(origin, dest)


@dataclass
class SnappedRoute:
    traj_id: str
    user_id: str
    scheme: WeightScheme
    status: str  # ok | unsnappable | disconnected
    origin_node: Optional[int] = None
    dest_node: Optional[int] = None
    origin_snap_m: Optional[float] = None
    dest_snap_m: Optional[float] = None
    path: Optional[RoutePath] = None
    reason: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self, net: StreetNetwork | None = None) -> dict:
        out = {
            "traj_id": self.traj_id,
            "user_id": self.user_id,
            "scheme": self.scheme.kind.value,
            "speed_kmh": self.scheme.speed_kmh,
            "status": self.status,
            "origin_node": self.origin_node,
            "dest_node": self.dest_node,
            "origin_snap_m": self.origin_snap_m,
            "dest_snap_m": self.dest_snap_m,
            "reason": self.reason,
        }
        if self.path is not None:
            out["nodes"] = self.path.nodes
            out["edges"] = self.path.edges
            out["weight"] = self.path.total_weight
            out["length_m"] = self.path.total_length_m
        return out


def optimal_for_trajectory(
    router: Router,
    tree: BallTree,
    traj: Trajectory,
    max_snap_m: float = DEFAULT_MAX_SNAP_M,
) -> SnappedRoute:
    """
    Snap the first and last fix to their nearest nodes and route between them.

    Failures are reported through ``status`` rather than raised, so batch
    runs keep going and can count them.
    """
    o, d = traj.origin, traj.destination
    o_node, o_dist = tree.nearest(o.lat, o.lon)
    d_node, d_dist = tree.nearest(d.lat, d.lon)
    result = SnappedRoute(
        traj.traj_id, traj.user_id, router.scheme, "ok", o_node, d_node, o_dist, d_dist
    )
    for which, dist in (("origin", o_dist), ("destination", d_dist)):
        if dist > max_snap_m:
            result.status = "unsnappable"
            result.reason = str(SnapError(which, dist, max_snap_m))
            return result
    try:
        result.path = router.shortest_path(o_node, d_node)
    except NoPathError as exc:
        result.status = "disconnected"
        result.reason = str(exc)
    return result
