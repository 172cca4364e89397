"""
Maximum-likelihood map matching of GPS trajectories onto a street network.

Processing runs in three phases:

1. ``aggregate`` cleans a user's raw fix stream (duplicates, speed glitches)
   and cuts it into trajectories at long time gaps.
2. ``candidates`` projects every fix onto the nearby street segments.
3. ``MapMatcher.match`` runs Viterbi over the candidate lattice of a hidden
   Markov model and stitches the chosen projections together with
   shortest paths.

The model: Gaussian emission ``-perp^2 / (2 sigma^2)`` and exponential
transition ``-|route - great_circle| / beta``, both in log space and
unnormalized.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .geo import (
    GeoPoint,
    SpatioTemporalPoint,
    Trajectory,
    haversine_distance,
    haversine_m,
    project_onto_polyline,
    trajectory_length,
)
from .network import StreetNetwork
from .routing import Router, WeightScheme
from .spatial import BallTree

NEG_INF = -math.inf


@dataclass(frozen=True)
class MatchParams:
    sigma_m: float = 10.0
    beta_m: float = 5.0
    radius_m: float = 50.0
    max_candidates: int = 8
    gap_s: float = 300.0
    max_speed_kmh: float = 60.0
    max_unmatched_fraction: float = 0.5
    # Backward movement along one edge up to this distance is read as GPS
    # jitter rather than a U-turn around the block.
    reverse_tolerance_m: float = 20.0
    # Transitions whose route exceeds the great-circle gap by more than this
    # are treated as impossible.
    max_route_excess_m: float = 1000.0
    # A first or last edge travelled for less than this is read as endpoint
    # jitter and left out of the path.
    end_trim_m: float = 15.0

    def __post_init__(self):
        for name in ("sigma_m", "beta_m", "radius_m", "gap_s", "max_speed_kmh", "max_route_excess_m"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive, got {value}")
        if self.max_candidates < 1:
            raise ValueError("max_candidates must be at least 1")
        if not 0 <= self.max_unmatched_fraction <= 1:
            raise ValueError("max_unmatched_fraction must be in [0, 1]")
        if self.reverse_tolerance_m < 0:
            raise ValueError("reverse_tolerance_m must be non-negative")
        if self.end_trim_m < 0:
            raise ValueError("end_trim_m must be non-negative")


@dataclass(frozen=True)
class CandidateProjection:
    point_index: int
    edge: int
    offset_m: float
    perp_dist_m: float
    emission_logp: float


@dataclass
class MatchedPath:
    traj_id: str
    edges: List[int]
    assignments: Dict[int, CandidateProjection]
    matched_length_m: float
    confidence: float


@dataclass
class MatchResult:
    traj_id: str
    user_id: str
    status: str  # ok | failed
    path: Optional[MatchedPath] = None
    reason: Optional[str] = None
    n_points: int = 0
    n_unmatched: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "ok"


# ---------------------------------------------------------------------------
# Phase 1: aggregation
# ---------------------------------------------------------------------------

def aggregate(
    points: Iterable[SpatioTemporalPoint],
    user_id: str,
    gap_s: float = 300.0,
    max_speed_kmh: float = 60.0,
    min_points: int = 2,
) -> List[Trajectory]:
    """
    Clean one user's time-sorted fixes and cut them into trajectories.

    A fix is dropped when it repeats the previous kept location, or when
    reaching it from the previous kept fix would need more than
    ``max_speed_kmh``. A new trajectory starts after a gap longer than
    ``gap_s`` seconds. Pieces shorter than ``min_points`` are discarded.
    """
    max_speed = max_speed_kmh / 3.6
    pieces: List[List[SpatioTemporalPoint]] = []
    current: List[SpatioTemporalPoint] = []
    for p in points:
        if current:
            last = current[-1]
            if p.t < last.t:
                raise ValueError("points are not time-sorted")
            dt = p.t - last.t
            if dt > gap_s:
                pieces.append(current)
                current = [p]
                continue
            if p.loc == last.loc:
                continue
            if dt == 0 or haversine_distance(last.loc, p.loc) / dt > max_speed:
                continue
        current.append(p)
    if current:
        pieces.append(current)
    return [
        Trajectory(user_id, f"{user_id}-{k}", tuple(piece))
        for k, piece in enumerate(p for p in pieces if len(p) >= min_points)
    ]


# ---------------------------------------------------------------------------
# Phase 2: candidates
# ---------------------------------------------------------------------------

def candidates(
    net: StreetNetwork,
    tree: BallTree,
    point: SpatioTemporalPoint | GeoPoint,
    params: MatchParams = MatchParams(),
    point_index: int = 0,
) -> List[CandidateProjection]:
    """
    Edges within ``radius_m`` of a fix, nearest first, at most ``max_candidates``.

    Edges are found through the spatial index: any point of an edge lies
    within half the edge's length of one of its end nodes, so searching
    nodes within ``radius + max_edge_length / 2`` finds every edge in range.
    """
    loc = point.loc if isinstance(point, SpatioTemporalPoint) else point
    search = params.radius_m + net.max_edge_length / 2.0 + 1.0
    seen = set()
    found: List[Tuple[float, int, float]] = []
    two_sigma_sq = 2.0 * params.sigma_m * params.sigma_m
    for node, _ in tree.within_radius(loc.lat, loc.lon, search):
        for ei in net.out_edges[node] + net.in_edges[node]:
            if ei in seen:
                continue
            seen.add(ei)
            frac, perp = project_onto_polyline(loc.lat, loc.lon, net.edge_polyline(ei))
            if perp <= params.radius_m:
                found.append((perp, ei, frac))
    found.sort()
    out = []
    for perp, ei, frac in found[: params.max_candidates]:
        offset = frac * net.edges[ei].length_m
        out.append(CandidateProjection(point_index, ei, offset, perp, -(perp * perp) / two_sigma_sq))
    return out


# ---------------------------------------------------------------------------
# Phase 3: lattice decoding
# ---------------------------------------------------------------------------

def viterbi(
    emissions: Sequence[Sequence[float]],
    transitions: Sequence[Sequence[Sequence[float]]],
) -> Tuple[List[int], float]:
    """
    Most likely state sequence of a log-space lattice.

    ``emissions[t][j]`` scores state j at step t; ``transitions[t][i][j]``
    scores moving from state i at step t to state j at step t + 1. Ties go
    to the lowest state index. Returns ``([], -inf)`` when every path has
    zero probability.
    """
    if not emissions:
        return [], NEG_INF
    score = list(emissions[0])
    back: List[List[int]] = []
    for t in range(1, len(emissions)):
        trans = transitions[t - 1]
        new_score = []
        ptr = []
        for j, em in enumerate(emissions[t]):
            best, arg = NEG_INF, -1
            for i, s in enumerate(score):
                v = s + trans[i][j]
                if v > best:
                    best, arg = v, i
            new_score.append(best + em if arg >= 0 else NEG_INF)
            ptr.append(arg)
        score = new_score
        back.append(ptr)
    best, last = NEG_INF, -1
    for j, s in enumerate(score):
        if s > best:
            best, last = s, j
    if last < 0:
        return [], NEG_INF
    states = [last]
    for ptr in reversed(back):
        states.append(ptr[states[-1]])
    states.reverse()
    return states, best


class MapMatcher:
    """
    Matcher bound to one network. Shortest-path distances between nodes are
    cached across trajectories; the network and index are never modified.
    """

    def __init__(self, net: StreetNetwork, tree: BallTree | None = None, params: MatchParams | None = None):
        self.net = net
        self.tree = tree if tree is not None else BallTree.from_network(net)
        self.params = params or MatchParams()
        self.router = Router(net, WeightScheme.length())
        self._dist_cache: Dict[int, Tuple[float, Dict[int, float]]] = {}

    # -- distances -------------------------------------------------------

    def node_distances(self, source: int, limit: float) -> Dict[int, float]:
        """Network distances from ``source`` to every node within ``limit`` meters."""
        hit = self._dist_cache.get(source)
        if hit is not None and hit[0] >= limit:
            return hit[1]
        out_edges = self.net.out_edges
        edges = self.net.edges
        dist = {source: 0.0}
        done = set()
        heap = [(0.0, source)]
        while heap:
            d, u = heapq.heappop(heap)
            if u in done:
                continue
            done.add(u)
            for ei in out_edges[u]:
                e = edges[ei]
                nd = d + e.length_m
                if nd <= limit and nd < dist.get(e.target, math.inf):
                    dist[e.target] = nd
                    heapq.heappush(heap, (nd, e.target))
        self._dist_cache[source] = (limit, dist)
        return dist

    def route_distance(self, a: CandidateProjection, b: CandidateProjection, limit: float) -> float:
        """Network distance from projection ``a`` to projection ``b`` (inf beyond ``limit``)."""
        if a.edge == b.edge and b.offset_m >= a.offset_m - self.params.reverse_tolerance_m:
            return abs(b.offset_m - a.offset_m)
        ea = self.net.edges[a.edge]
        eb = self.net.edges[b.edge]
        head = ea.length_m - a.offset_m
        middle = self.node_distances(ea.target, limit).get(eb.source)
        if middle is None:
            return math.inf
        d = head + middle + b.offset_m
        return d if d <= limit else math.inf

    def transition_logp(self, a: CandidateProjection, b: CandidateProjection, gc_m: float) -> float:
        limit = gc_m + self.params.max_route_excess_m
        route = self.route_distance(a, b, limit)
        if math.isinf(route):
            return NEG_INF
        return -abs(route - gc_m) / self.params.beta_m

    # -- lattice -----------------------------------------------------------

    def lattice(self, traj: Trajectory) -> List[List[CandidateProjection]]:
        """Candidate lists per fix (empty lists for unmatchable fixes)."""
        return [
            candidates(self.net, self.tree, p, self.params, point_index=i)
            for i, p in enumerate(traj.points)
        ]

    def match(self, traj: Trajectory) -> MatchResult:
        layers = self.lattice(traj)
        n = len(layers)
        kept = [layer for layer in layers if layer]
        result = MatchResult(traj.traj_id, traj.user_id, "failed", n_points=n, n_unmatched=n - len(kept))
        if not kept or (n - len(kept)) / n > self.params.max_unmatched_fraction:
            result.reason = f"{n - len(kept)} of {n} points have no candidate edge"
            return result

        pts = traj.points
        emissions = [[c.emission_logp for c in layer] for layer in kept]
        transitions = []
        for prev, cur in zip(kept, kept[1:]):
            pa, pb = pts[prev[0].point_index].loc, pts[cur[0].point_index].loc
            gc = haversine_m(pa.lat, pa.lon, pb.lat, pb.lon)
            transitions.append([[self.transition_logp(a, b, gc) for b in cur] for a in prev])

        states, confidence = viterbi(emissions, transitions)
        if not states:
            result.reason = "candidate lattice is disconnected"
            return result
        chosen = [layer[s] for layer, s in zip(kept, states)]
        edges, length = self._stitch(chosen)
        result.status = "ok"
        result.path = MatchedPath(
            traj.traj_id,
            edges,
            {c.point_index: c for c in chosen},
            length,
            confidence,
        )
        return result

    def _stitch(self, chosen: List[CandidateProjection]) -> Tuple[List[int], float]:
        net = self.net
        tol = self.params.reverse_tolerance_m
        edges = [chosen[0].edge]
        for a, b in zip(chosen, chosen[1:]):
            if a.edge == b.edge and b.offset_m >= a.offset_m - tol:
                continue
            ea, eb = net.edges[a.edge], net.edges[b.edge]
            link = self.router.shortest_path(ea.target, eb.source)
            edges.extend(link.edges)
            edges.append(b.edge)
        collapsed: List[int] = []
        for ei in edges:
            if not collapsed or collapsed[-1] != ei:
                collapsed.append(ei)

        first, last = chosen[0], chosen[-1]
        trim = max(self.params.end_trim_m, 1e-6)
        head_cut = first.offset_m
        tail_cut = net.edges[last.edge].length_m - last.offset_m
        # an end edge barely entered (or barely left) is endpoint jitter
        if len(collapsed) > 1 and collapsed[0] == first.edge and tail_of(net, first) < trim:
            collapsed.pop(0)
            head_cut = 0.0
        if len(collapsed) > 1 and collapsed[-1] == last.edge and last.offset_m < trim:
            collapsed.pop()
            tail_cut = 0.0
        total = math.fsum(net.edges[ei].length_m for ei in collapsed)
        return collapsed, max(0.0, total - head_cut - tail_cut)


def tail_of(net: StreetNetwork, c: CandidateProjection) -> float:
    return net.edges[c.edge].length_m - c.offset_m


def match(net: StreetNetwork, tree: BallTree, traj: Trajectory, params: MatchParams | None = None) -> MatchResult:
    return MapMatcher(net, tree, params).match(traj)


@dataclass
class MatchQuality:
    mean_residual_m: float
    max_residual_m: float
    length_ratio: float

    def to_dict(self) -> dict:
        return {
            "mean_residual_m": self.mean_residual_m,
            "max_residual_m": self.max_residual_m,
            "length_ratio": self.length_ratio,
        }


def matched_vs_raw_report(matched: MatchedPath, traj: Trajectory) -> MatchQuality:
    residuals = [c.perp_dist_m for c in matched.assignments.values()]
    raw = trajectory_length(traj)
    return MatchQuality(
        mean_residual_m=math.fsum(residuals) / len(residuals) if residuals else 0.0,
        max_residual_m=max(residuals, default=0.0),
        length_ratio=matched.matched_length_m / raw if raw > 0 else math.nan,
    )
