"""
Ball tree over lat/lon points under the haversine metric.

Used to snap trajectory endpoints to the nearest intersection and to find
the intersections around a GPS fix when generating map-matching candidates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from .geo import haversine_m, local_xy

# Slack absorbing floating-point error in the triangle-inequality bounds.
BOUND_SLACK_M = 1e-6


@dataclass
class _Ball:
    lat: float
    lon: float
    radius: float
    start: int
    end: int
    left: int = -1
    right: int = -1

    @property
    def is_leaf(self) -> bool:
        return self.left < 0


def _centroid(lats: Sequence[float], lons: Sequence[float]) -> Tuple[float, float]:
    if all(a == lats[0] for a in lats) and all(b == lons[0] for b in lons):
        return lats[0], lons[0]  # exact, no trig round trip
    x = y = z = 0.0
    for lat, lon in zip(lats, lons):
        p, l = math.radians(lat), math.radians(lon)
        x += math.cos(p) * math.cos(l)
        y += math.cos(p) * math.sin(l)
        z += math.sin(p)
    norm = math.sqrt(x * x + y * y + z * z)
    if norm < 1e-12:
        return lats[0], lons[0]
    return math.degrees(math.asin(max(-1.0, min(1.0, z / norm)))), math.degrees(math.atan2(y, x))


class BallTree:
    """
    Static ball tree over ``(point_id, lat, lon)`` triples.

    Parameters
    ----------
    ids, lats, lons:
        Parallel sequences. Ids are integers used for tie-breaking (the
        smaller id wins among equidistant points).
    leaf_size:
        Maximum number of points stored in a leaf.
    """

    def __init__(self, ids: Sequence[int], lats: Sequence[float], lons: Sequence[float], leaf_size: int = 16):
        if len(ids) == 0:
            raise ValueError("cannot build a ball tree over zero points")
        if not len(ids) == len(lats) == len(lons):
            raise ValueError("ids, lats and lons differ in length")
        if leaf_size < 1:
            raise ValueError("leaf_size must be positive")
        self.ids = [int(i) for i in ids]
        self.lats = [float(v) for v in lats]
        self.lons = [float(v) for v in lons]
        self.leaf_size = leaf_size
        self.order: List[int] = list(range(len(self.ids)))
        self.balls: List[_Ball] = []
        self.visits = 0
        self._build(0, len(self.order))

    @classmethod
    def from_network(cls, net, leaf_size: int = 16) -> "BallTree":
        return cls(range(net.num_nodes), net.lats, net.lons, leaf_size)

    def __len__(self) -> int:
        return len(self.ids)

    def _build(self, start: int, end: int) -> int:
        idx = self.order[start:end]
        clat, clon = _centroid([self.lats[i] for i in idx], [self.lons[i] for i in idx])
        radius = max(haversine_m(clat, clon, self.lats[i], self.lons[i]) for i in idx)
        ball_id = len(self.balls)
        self.balls.append(_Ball(clat, clon, radius, start, end))
        if end - start <= self.leaf_size:
            return ball_id

        xy = {i: local_xy(self.lats[i], self.lons[i], clat, clon) for i in idx}
        spread_x = max(v[0] for v in xy.values()) - min(v[0] for v in xy.values())
        spread_y = max(v[1] for v in xy.values()) - min(v[1] for v in xy.values())
        dim = 0 if spread_x >= spread_y else 1
        idx.sort(key=lambda i: (xy[i][dim], i))
        self.order[start:end] = idx
        mid = start + (end - start) // 2
        left = self._build(start, mid)
        right = self._build(mid, end)
        self.balls[ball_id].left = left
        self.balls[ball_id].right = right
        return ball_id

    def _lower_bound(self, ball: _Ball, lat: float, lon: float) -> float:
        return haversine_m(lat, lon, ball.lat, ball.lon) - ball.radius

    def nearest(self, lat: float, lon: float) -> Tuple[int, float]:
        """Closest point as ``(id, meters)``; ties go to the smallest id."""
        best_d = math.inf
        best_id = -1
        stack = [0]
        visits = 0
        while stack:
            ball = self.balls[stack.pop()]
            visits += 1
            if self._lower_bound(ball, lat, lon) - BOUND_SLACK_M > best_d:
                continue
            if ball.is_leaf:
                for k in range(ball.start, ball.end):
                    i = self.order[k]
                    d = haversine_m(lat, lon, self.lats[i], self.lons[i])
                    if d < best_d or (d == best_d and self.ids[i] < best_id):
                        best_d, best_id = d, self.ids[i]
                continue
            left, right = self.balls[ball.left], self.balls[ball.right]
            dl = self._lower_bound(left, lat, lon)
            dr = self._lower_bound(right, lat, lon)
            # push the farther child first so the nearer one is explored first
            if dl <= dr:
                stack.append(ball.right)
                stack.append(ball.left)
            else:
                stack.append(ball.left)
                stack.append(ball.right)
        self.visits = visits
        return best_id, best_d

    def within_radius(self, lat: float, lon: float, radius: float) -> List[Tuple[int, float]]:
        """All points within ``radius`` meters, ascending by (distance, id)."""
        if radius < 0:
            raise ValueError("radius must be non-negative")
        found: List[Tuple[float, int]] = []
        stack = [0]
        while stack:
            ball = self.balls[stack.pop()]
            if self._lower_bound(ball, lat, lon) - BOUND_SLACK_M > radius:
                continue
            if ball.is_leaf:
                for k in range(ball.start, ball.end):
                    i = self.order[k]
                    d = haversine_m(lat, lon, self.lats[i], self.lons[i])
                    if d <= radius:
                        found.append((d, self.ids[i]))
                continue
            stack.append(ball.right)
            stack.append(ball.left)
        found.sort()
        return [(i, d) for d, i in found]

    def check_invariants(self) -> None:
        """Raise AssertionError if any structural invariant is violated."""
        seen = sorted(self.order)
        assert seen == list(range(len(self.ids))), "tree does not cover the input exactly"

        def walk(ball_id: int, ancestors: List[_Ball]) -> None:
            ball = self.balls[ball_id]
            chain = ancestors + [ball]
            for k in range(ball.start, ball.end):
                i = self.order[k]
                for anc in chain:
                    d = haversine_m(anc.lat, anc.lon, self.lats[i], self.lons[i])
                    assert d <= anc.radius + BOUND_SLACK_M, "point outside an ancestor ball"
            if ball.is_leaf:
                assert ball.end - ball.start <= self.leaf_size, "oversized leaf"
            else:
                walk(ball.left, chain)
                walk(ball.right, chain)

        walk(0, [])


def build(points: Sequence[Tuple[int, float, float]], leaf_size: int = 16) -> BallTree:
    """Build from ``(id, lat, lon)`` triples."""
    if not points:
        raise ValueError("cannot build a ball tree over zero points")
    ids, lats, lons = zip(*points)
    return BallTree(ids, lats, lons, leaf_size)

