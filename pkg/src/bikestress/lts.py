"""
Level of Traffic Stress (LTS) classification of street segments.

Every edge gets a stress level from 1 (suitable for children) to 4
(experienced cyclists only). The decision table follows the structure of
the BikeOttawa stress model: separated facilities first, then painted bike
lanes, then mixed traffic.

Rows, evaluated after default-filling absent attributes:

====  ===================================================================  ===
id    condition                                                            LTS
====  ===================================================================  ===
D1    separated facility (``cycleway=track`` or ``highway=cycleway``)      1
D2    painted lane, maxspeed > 65                                          4
D3a   mixed traffic, maxspeed <= 30, calm street class, untagged lanes     1
D3    mixed traffic, maxspeed <= 30, <= 1 lane per direction               2
D4    painted lane, maxspeed <= 50, no parking                             2
D4p   painted lane, maxspeed <= 50, parking                                3
D5    painted lane, 50 < maxspeed <= 65                                    3
D6    mixed traffic, maxspeed <= 50, <= 2 lanes per direction              3
D7    anything else                                                        4
====  ===================================================================  ===

A painted lane never scores worse than riding the same street in mixed
traffic; when the mixed-traffic row is lower it wins, and its id is reported.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Tuple

from .network import Cycleway, EdgeAttributes, StreetNetwork

LTS_LEVELS = (1, 2, 3, 4)

RULES = {
    "D1": "separated bike facility",
    "D2": "painted bike lane next to traffic faster than 65 km/h",
    "D3a": "calm street class at <= 30 km/h without marked lanes",
    "D3": "mixed traffic at <= 30 km/h with at most one lane per direction",
    "D4": "painted bike lane at <= 50 km/h without parking",
    "D4p": "painted bike lane at <= 50 km/h with parking",
    "D5": "painted bike lane at 50-65 km/h",
    "D6": "mixed traffic at <= 50 km/h with at most two lanes per direction",
    "D7": "fast or wide mixed traffic",
}

DEFAULT_SPEEDS_KMH = {
    "residential": 30.0,
    "tertiary": 50.0,
    "tertiary_link": 50.0,
    "secondary": 50.0,
    "secondary_link": 50.0,
    "primary": 70.0,
    "primary_link": 70.0,
}
FALLBACK_SPEED_KMH = 50.0

CALM_CLASSES = frozenset({"residential", "living_street", "path", "service"})


@dataclass(frozen=True)
class LtsRuleTrace:
    edge: int
    score: int
    rule_id: str


def default_speed(highway: str) -> float:
    return DEFAULT_SPEEDS_KMH.get(highway, FALLBACK_SPEED_KMH)


def lanes_per_direction(attrs: EdgeAttributes) -> int:
    """
    Lanes per travel direction. OSM ``lanes`` counts both directions of a
    two-way street, so it is halved (rounded up) unless the street is one-way.
    Untagged calm streets default to one lane, everything else to two.
    """
    if attrs.lanes is None:
        return 1 if attrs.highway in CALM_CLASSES else 2
    if attrs.oneway:
        return attrs.lanes
    return math.ceil(attrs.lanes / 2)


def _mixed_traffic(attrs: EdgeAttributes, speed: float, lanes: int) -> Tuple[int, str]:
    if speed <= 30 and lanes <= 1:
        if attrs.highway in CALM_CLASSES and attrs.lanes is None:
            return 1, "D3a"
        return 2, "D3"
    if speed <= 50 and lanes <= 2:
        return 3, "D6"
    return 4, "D7"


def _bike_lane(attrs: EdgeAttributes, speed: float) -> Tuple[int, str]:
    if speed > 65:
        return 4, "D2"
    if speed <= 50:
        if attrs.parking_present:
            return 3, "D4p"
        return 2, "D4"
    return 3, "D5"


def classify_edge(attrs: EdgeAttributes) -> Tuple[int, str]:
    """Stress level and the id of the decision-table row that produced it."""
    if attrs.cycleway is Cycleway.TRACK or attrs.highway == "cycleway":
        return 1, "D1"
    speed = attrs.maxspeed_kmh if attrs.maxspeed_kmh is not None else default_speed(attrs.highway)
    lanes = lanes_per_direction(attrs)
    mixed = _mixed_traffic(attrs, speed, lanes)
    if attrs.cycleway is Cycleway.LANE:
        lane = _bike_lane(attrs, speed)
        return lane if lane[0] <= mixed[0] else mixed
    return mixed


@dataclass
class LtsResult:
    scores: List[int]
    traces: List[LtsRuleTrace]

    def histogram(self) -> Dict[int, int]:
        counts = Counter(self.scores)
        return {level: counts.get(level, 0) for level in LTS_LEVELS}

    def __getitem__(self, edge_id: int) -> int:
        return self.scores[edge_id]

    def __len__(self) -> int:
        return len(self.scores)


def classify_network(net: StreetNetwork) -> LtsResult:
    """Score every edge; output is ordered by edge id."""
    scores: List[int] = []
    traces: List[LtsRuleTrace] = []
    cache: Dict[EdgeAttributes, Tuple[int, str]] = {}
    for i, e in enumerate(net.edges):
        hit = cache.get(e.attrs)
        if hit is None:
            hit = cache[e.attrs] = classify_edge(e.attrs)
        scores.append(hit[0])
        traces.append(LtsRuleTrace(i, hit[0], hit[1]))
    return LtsResult(scores, traces)
