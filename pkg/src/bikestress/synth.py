"""
Synthetic grid cities and cyclist trajectories with known ground truth.

Arterial streets (every k-th row and column) are fast and unprotected;
the rest are calm residential streets. Residential intersections are
jittered off the lattice so arterials are the strictly shortest way across
town, which is what makes a safety-seeking cyclist detour.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geo import EARTH_RADIUS_M, GeoPoint, SpatioTemporalPoint, Trajectory, haversine_m
from .lts import classify_network
from .network import Edge, EdgeAttributes, StreetNetwork
from .routing import NoPathError, Router

SAMPLE_INTERVAL_S = 5
BASE_EPOCH = 1_620_000_000

ARTERIAL = EdgeAttributes(highway="primary", maxspeed_kmh=70.0, name="arterial")
RESIDENTIAL = EdgeAttributes(highway="residential", maxspeed_kmh=30.0, name="residential")


@dataclass(frozen=True)
class GridCitySpec:
    rows: int = 5
    cols: int = 5
    block_m: float = 150.0
    arterial_every: int = 2
    seed: int = 0
    jitter_m: float = 10.0
    center: Tuple[float, float] = (44.8381, 11.6198)

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError("grid needs at least 2 rows and 2 columns")
        if not self.block_m > 0:
            raise ValueError("block_m must be positive")
        if self.arterial_every < 0:
            raise ValueError("arterial_every must be non-negative")
        if not 0 <= self.jitter_m < self.block_m / 4:
            raise ValueError("jitter_m must be in [0, block_m / 4)")


@dataclass(frozen=True)
class AgentSpec:
    n_agents: int = 100
    safety_weight: float = 0.0
    gps_noise_sigma_m: float = 0.0
    sample_spacing_m: float = 20.0

    def __post_init__(self):
        if self.n_agents < 0:
            raise ValueError("n_agents must be non-negative")
        if self.safety_weight < 0:
            raise ValueError("safety_weight must be non-negative")
        if self.gps_noise_sigma_m < 0:
            raise ValueError("gps_noise_sigma_m must be non-negative")
        if not self.sample_spacing_m > 0:
            raise ValueError("sample_spacing_m must be positive")


def _is_arterial(index: int, every: int) -> bool:
    return every > 0 and index % every == 0


def gen_city(spec: GridCitySpec) -> StreetNetwork:
    """
    ``rows x cols`` lattice with two-way streets between neighbours.

    Node ``r * cols + c`` sits in row r (south to north) and column c (west
    to east). For each node, the eastward then the northward street is
    emitted, each as a forward/backward edge pair.
    """
    rng = np.random.default_rng(spec.seed)
    lat0, lon0 = spec.center
    m_per_deg_lat = math.pi / 180.0 * EARTH_RADIUS_M
    m_per_deg_lon = m_per_deg_lat * math.cos(math.radians(lat0))
    jitter = rng.uniform(-spec.jitter_m, spec.jitter_m, size=(spec.rows, spec.cols, 2))

    lats, lons = [], []
    for r in range(spec.rows):
        for c in range(spec.cols):
            y = (r - (spec.rows - 1) / 2.0) * spec.block_m
            x = (c - (spec.cols - 1) / 2.0) * spec.block_m
            # arterial streets stay straight: their nodes only move along them
            if not _is_arterial(r, spec.arterial_every):
                y += jitter[r, c, 1]
            if not _is_arterial(c, spec.arterial_every):
                x += jitter[r, c, 0]
            lats.append(round(lat0 + y / m_per_deg_lat, 7))
            lons.append(round(lon0 + x / m_per_deg_lon, 7))

    edges: List[Edge] = []

    def add(u: int, v: int, attrs: EdgeAttributes) -> None:
        length = haversine_m(lats[u], lons[u], lats[v], lons[v])
        edges.append(Edge(u, v, length, attrs))
        edges.append(Edge(v, u, length, attrs))

    for r in range(spec.rows):
        for c in range(spec.cols):
            u = r * spec.cols + c
            if c + 1 < spec.cols:
                add(u, u + 1, ARTERIAL if _is_arterial(r, spec.arterial_every) else RESIDENTIAL)
            if r + 1 < spec.rows:
                add(u, u + spec.cols, ARTERIAL if _is_arterial(c, spec.arterial_every) else RESIDENTIAL)
    return StreetNetwork(tuple(lats), tuple(lons), tuple(edges))


def composite_weights(net: StreetNetwork, lts_map: Sequence[int], safety_weight: float) -> List[float]:
    """Route cost per edge: length x (1 + safety_weight x (LTS - 1))."""
    return [e.length_m * (1.0 + safety_weight * (lts_map[i] - 1)) for i, e in enumerate(net.edges)]


def path_polyline(net: StreetNetwork, edges: Sequence[int]) -> List[Tuple[float, float]]:
    pts: List[Tuple[float, float]] = []
    for ei in edges:
        poly = net.edge_polyline(ei)
        pts.extend(poly if not pts else poly[1:])
    return pts


def densify(polyline: Sequence[Tuple[float, float]], spacing_m: float) -> List[Tuple[float, float]]:
    """
    Points every ``spacing_m`` meters of arc length along a polyline, plus the
    final vertex. Consecutive samples are never more than ``spacing_m`` apart.
    """
    out = [tuple(polyline[0])]
    carried = 0.0  # arc length walked since the last emitted sample
    for a, b in zip(polyline, polyline[1:]):
        seg = haversine_m(a[0], a[1], b[0], b[1])
        if seg == 0.0:
            continue
        s = spacing_m - carried
        while s < seg - 1e-9:
            u = s / seg
            out.append((a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])))
            s += spacing_m
        carried = seg - (s - spacing_m)
    if out[-1] != tuple(polyline[-1]):
        out.append(tuple(polyline[-1]))
    return out


def jitter_points(points: Sequence[Tuple[float, float]], sigma_m: float, rng: np.random.Generator):
    if sigma_m <= 0:
        return list(points)
    noise = rng.normal(0.0, sigma_m, size=(len(points), 2))
    out = []
    for (lat, lon), (dn, de) in zip(points, noise):
        dlat = math.degrees(dn / EARTH_RADIUS_M)
        dlon = math.degrees(de / (EARTH_RADIUS_M * math.cos(math.radians(lat))))
        out.append((lat + dlat, lon + dlon))
    return out


@dataclass
class SyntheticTrips:
    trajectories: List[Trajectory]
    ground_truth: Dict[str, List[int]]
    od_nodes: Dict[str, Tuple[int, int]]
    skipped_disconnected: int = 0


def trace_along(
    net: StreetNetwork,
    edges: Sequence[int],
    spacing_m: float,
    sigma_m: float,
    rng: np.random.Generator,
    user_id: str,
    traj_id: str,
    t0: int = BASE_EPOCH,
) -> Trajectory:
    """GPS trace of a ride along ``edges``: densified, jittered, one fix every 5 s."""
    pts = jitter_points(densify(path_polyline(net, edges), spacing_m), sigma_m, rng)
    fixes = tuple(
        SpatioTemporalPoint(t0 + SAMPLE_INTERVAL_S * i, GeoPoint(lat, lon))
        for i, (lat, lon) in enumerate(pts)
    )
    return Trajectory(user_id, traj_id, fixes)


def gen_trajectories(
    net: StreetNetwork,
    agents: AgentSpec,
    seed: int = 0,
    od_pairs: Optional[Sequence[Tuple[int, int]]] = None,
    lts_map: Optional[Sequence[int]] = None,
) -> SyntheticTrips:
    """
    One ride per agent between random distinct nodes (or the given OD pairs).

    Each agent takes the cheapest path under the composite cost of
    :func:`composite_weights`. Every agent draws from its own generator
    spawned from ``seed``, so output does not depend on processing order.
    """
    if lts_map is None:
        lts_map = classify_network(net).scores
    if net.num_nodes < 2:
        raise ValueError("network needs at least two nodes")
    router = Router(net, weights=composite_weights(net, lts_map, agents.safety_weight))
    n = agents.n_agents if od_pairs is None else len(od_pairs)
    children = np.random.SeedSequence(seed).spawn(n)
    out = SyntheticTrips([], {}, {})
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        if od_pairs is None:
            o, d = (int(v) for v in rng.choice(net.num_nodes, size=2, replace=False))
        else:
            o, d = od_pairs[i]
        try:
            path = router.shortest_path(o, d)
        except NoPathError:
            out.skipped_disconnected += 1
            continue
        if path.is_empty:
            out.skipped_disconnected += 1
            continue
        user_id = f"u{i:04d}"
        traj_id = f"t{i:05d}"
        traj = trace_along(
            net, path.edges, agents.sample_spacing_m, agents.gps_noise_sigma_m, rng,
            user_id, traj_id, t0=BASE_EPOCH + 3600 * i,
        )
        out.trajectories.append(traj)
        out.ground_truth[traj_id] = list(path.edges)
        out.od_nodes[traj_id] = (o, d)
    return out
