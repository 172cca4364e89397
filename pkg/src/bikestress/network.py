"""
Directed street network: intersections as nodes, street segments as edges.

Networks are built from a subset of OSM XML (nodes, ways, tags) or from a
small edge-list JSON format used for fixtures and for stage hand-off.
"""

from __future__ import annotations

import json
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import IO, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from .geo import haversine_m

DEFAULT_EXCLUDED_HIGHWAYS = frozenset({"motorway", "motorway_link"})


class NetworkError(ValueError):
    """Base class for network loading errors."""


class OsmParseError(NetworkError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class OsmStructureError(NetworkError):
    def __init__(self, message: str, way_id: str | None = None):
        self.way_id = way_id
        super().__init__(message)


class EdgeListSchemaError(NetworkError):
    def __init__(self, message: str, field: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class Cycleway(str, Enum):
    NONE = "none"
    SHARED = "shared"
    OPPOSITE = "opposite"
    LANE = "lane"
    TRACK = "track"

    @property
    def protection(self) -> int:
        """Ordinal protection level: mixed traffic < painted lane < separated."""
        if self is Cycleway.TRACK:
            return 2
        if self is Cycleway.LANE:
            return 1
        return 0


_CYCLEWAY_TAGS = {
    "track": Cycleway.TRACK,
    "separate": Cycleway.TRACK,
    "separated": Cycleway.TRACK,
    "opposite_track": Cycleway.TRACK,
    "lane": Cycleway.LANE,
    "opposite_lane": Cycleway.LANE,
    "buffered_lane": Cycleway.LANE,
    "shared_lane": Cycleway.SHARED,
    "share_busway": Cycleway.SHARED,
    "shared": Cycleway.SHARED,
    "opposite_share_busway": Cycleway.SHARED,
    "opposite": Cycleway.OPPOSITE,
    "no": Cycleway.NONE,
    "none": Cycleway.NONE,
}

_PARKING_NO = {"no", "no_parking", "no_stopping", "fire_lane", "separate"}


@dataclass(frozen=True)
class EdgeAttributes:
    highway: str = "unclassified"
    maxspeed_kmh: Optional[float] = None
    lanes: Optional[int] = None
    cycleway: Cycleway = Cycleway.NONE
    parking_present: Optional[bool] = None
    name: Optional[str] = None
    oneway: bool = False
    bicycle: Optional[str] = None

    def __post_init__(self):
        if self.maxspeed_kmh is not None and not 0.0 < self.maxspeed_kmh <= 200.0:
            raise ValueError(f"maxspeed_kmh out of range: {self.maxspeed_kmh}")
        if self.lanes is not None and not 1 <= self.lanes <= 12:
            raise ValueError(f"lanes out of range: {self.lanes}")
        if not isinstance(self.cycleway, Cycleway):
            object.__setattr__(self, "cycleway", Cycleway(self.cycleway))


@dataclass(frozen=True)
class Edge:
    source: int
    target: int
    length_m: float
    attrs: EdgeAttributes
    # Full lat/lon chain including both endpoints; None means a straight segment.
    geometry: Optional[Tuple[Tuple[float, float], ...]] = None


@dataclass(frozen=True)
class StreetNetwork:
    """
    Immutable directed street graph.

    Node and edge handles are dense integers. ``node_ids`` keeps the
    external (e.g. OSM) identifier of every node.
    """

    lats: Tuple[float, ...]
    lons: Tuple[float, ...]
    edges: Tuple[Edge, ...]
    node_ids: Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "lats", tuple(float(v) for v in self.lats))
        object.__setattr__(self, "lons", tuple(float(v) for v in self.lons))
        object.__setattr__(self, "edges", tuple(self.edges))
        if not self.node_ids:
            object.__setattr__(self, "node_ids", tuple(range(len(self.lats))))
        else:
            object.__setattr__(self, "node_ids", tuple(int(v) for v in self.node_ids))
        if not len(self.lats) == len(self.lons) == len(self.node_ids):
            raise NetworkError("node arrays differ in length")
        n = len(self.lats)
        for i, e in enumerate(self.edges):
            if not (0 <= e.source < n and 0 <= e.target < n):
                raise NetworkError(f"edge {i} references a missing node")
            if not e.length_m > 0.0 or not math.isfinite(e.length_m):
                raise NetworkError(f"edge {i} has non-positive length {e.length_m}")
            chain = self.edge_polyline(i)
            ref = sum(haversine_m(a[0], a[1], b[0], b[1]) for a, b in zip(chain, chain[1:]))
            if ref > 0.0 and not 0.5 * ref <= e.length_m <= 2.0 * ref:
                raise NetworkError(
                    f"edge {i} length {e.length_m:.2f} m inconsistent with geometry ({ref:.2f} m)"
                )

    @property
    def num_nodes(self) -> int:
        return len(self.lats)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def out_edges(self) -> Tuple[Tuple[int, ...], ...]:
        out: List[List[int]] = [[] for _ in range(self.num_nodes)]
        for i, e in enumerate(self.edges):
            out[e.source].append(i)
        return tuple(tuple(x) for x in out)

    @cached_property
    def in_edges(self) -> Tuple[Tuple[int, ...], ...]:
        inc: List[List[int]] = [[] for _ in range(self.num_nodes)]
        for i, e in enumerate(self.edges):
            inc[e.target].append(i)
        return tuple(tuple(x) for x in inc)

    @cached_property
    def max_edge_length(self) -> float:
        return max((e.length_m for e in self.edges), default=0.0)

    def degree(self, node: int) -> int:
        """Number of incident directed edges (in + out)."""
        return len(self.out_edges[node]) + len(self.in_edges[node])

    def node_latlon(self, node: int) -> Tuple[float, float]:
        return self.lats[node], self.lons[node]

    def edge_polyline(self, edge_id: int) -> Tuple[Tuple[float, float], ...]:
        e = self.edges[edge_id]
        if e.geometry is not None:
            return e.geometry
        return (self.node_latlon(e.source), self.node_latlon(e.target))

    def reverse_edge(self, edge_id: int) -> Optional[int]:
        """The twin edge running the other way along the same geometry, if any."""
        e = self.edges[edge_id]
        poly = self.edge_polyline(edge_id)
        for j in self.out_edges[e.target]:
            f = self.edges[j]
            if f.target == e.source and self.edge_polyline(j) == tuple(reversed(poly)):
                return j
        return None


# ---------------------------------------------------------------------------
# Tag interpretation
# ---------------------------------------------------------------------------

_SPEED_RE = re.compile(r"^\s*([0-9]+(?:\.[0-9]+)?)\s*(km/h|kmh|kph|mph)?\s*$")


def parse_maxspeed(value: Optional[str]) -> Optional[float]:
    """Numeric km/h from an OSM ``maxspeed`` value; None when unusable."""
    if value is None:
        return None
    m = _SPEED_RE.match(value)
    if not m:
        return None
    speed = float(m.group(1))
    if m.group(2) == "mph":
        speed *= 1.609344
    if not 0.0 < speed <= 200.0:
        return None
    return speed


def parse_lanes(value: Optional[str]) -> Optional[int]:
    if value is None:
        return None
    try:
        lanes = int(value.strip())
    except ValueError:
        return None
    return lanes if 1 <= lanes <= 12 else None


def parse_cycleway(*values: Optional[str]) -> Cycleway:
    """Strongest protection among ``cycleway``, ``cycleway:left``, ``cycleway:right``."""
    best = Cycleway.NONE
    for v in values:
        if v is None:
            continue
        cw = _CYCLEWAY_TAGS.get(v.strip().lower(), Cycleway.NONE)
        if cw.protection > best.protection or (
            cw.protection == best.protection and best is Cycleway.NONE
        ):
            best = cw
    return best


def parse_parking(tags: Dict[str, str]) -> Optional[bool]:
    values = [v for k, v in tags.items() if k == "parking:lane" or k.startswith("parking:lane:")]
    if not values:
        return None
    return any(v.strip().lower() not in _PARKING_NO for v in values)


def attributes_from_tags(tags: Dict[str, str]) -> EdgeAttributes:
    oneway = tags.get("oneway", "no").strip().lower() in {"yes", "true", "1", "-1", "reverse"}
    return EdgeAttributes(
        highway=tags.get("highway", "unclassified"),
        maxspeed_kmh=parse_maxspeed(tags.get("maxspeed")),
        lanes=parse_lanes(tags.get("lanes")),
        cycleway=parse_cycleway(
            tags.get("cycleway"), tags.get("cycleway:left"), tags.get("cycleway:right")
        ),
        parking_present=parse_parking(tags),
        name=tags.get("name"),
        oneway=oneway,
        bicycle=tags.get("bicycle"),
    )


def _oneway_direction(tags: Dict[str, str]) -> int:
    """+1 forward only, -1 backward only, 0 both ways."""
    v = tags.get("oneway", "no").strip().lower()
    if v in {"yes", "true", "1"}:
        return 1
    if v in {"-1", "reverse"}:
        return -1
    return 0


# ---------------------------------------------------------------------------
# OSM XML
# ---------------------------------------------------------------------------

def _line_offsets(data: bytes) -> List[int]:
    offsets = [0]
    for i, b in enumerate(data):
        if b == 0x0A:
            offsets.append(i + 1)
    return offsets


def parse_osm_xml(source: IO[bytes] | bytes) -> StreetNetwork:
    """
    Build a street network from OSM XML.

    Every way tagged ``highway`` is split into edges at its end nodes and at
    every node it shares with another highway way (or revisits). Two-way
    streets yield a pair of opposite directed edges. Relations are ignored.
    """
    data = source if isinstance(source, (bytes, bytearray)) else source.read()
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, col = exc.position
        offsets = _line_offsets(data)
        offset = offsets[line - 1] + col if 0 < line <= len(offsets) else None
        raise OsmParseError(f"malformed XML: {exc}", offset=offset) from None

    coords: Dict[int, Tuple[float, float]] = {}
    for node in root.iter("node"):
        try:
            nid = int(node.attrib["id"])
            coords[nid] = (float(node.attrib["lat"]), float(node.attrib["lon"]))
        except (KeyError, ValueError):
            raise OsmStructureError(
                f"node {node.attrib.get('id', '?')} lacks valid id/lat/lon"
            ) from None

    ways: List[Tuple[str, List[int], Dict[str, str]]] = []
    for way in root.iter("way"):
        tags = {t.attrib["k"]: t.attrib.get("v", "") for t in way.iter("tag") if "k" in t.attrib}
        if "highway" not in tags:
            continue
        way_id = way.attrib.get("id", "?")
        refs = []
        for nd in way.iter("nd"):
            try:
                ref = int(nd.attrib["ref"])
            except (KeyError, ValueError):
                raise OsmStructureError(f"way {way_id} has a malformed nd ref", way_id) from None
            if ref not in coords:
                raise OsmStructureError(
                    f"way {way_id} references missing node {ref}", way_id
                )
            refs.append(ref)
        if len(refs) >= 2:
            ways.append((way_id, refs, tags))

    use_count: Dict[int, int] = {}
    for _, refs, _ in ways:
        for r in refs:
            use_count[r] = use_count.get(r, 0) + 1
        # endpoints always split
        use_count[refs[0]] = use_count.get(refs[0], 0) + 1
        use_count[refs[-1]] = use_count.get(refs[-1], 0) + 1

    node_index: Dict[int, int] = {}
    lats: List[float] = []
    lons: List[float] = []

    def index_of(ref: int) -> int:
        if ref not in node_index:
            node_index[ref] = len(lats)
            lats.append(coords[ref][0])
            lons.append(coords[ref][1])
        return node_index[ref]

    edges: List[Edge] = []
    for way_id, refs, tags in ways:
        attrs = attributes_from_tags(tags)
        direction = _oneway_direction(tags)
        start = 0
        for k in range(1, len(refs)):
            if k < len(refs) - 1 and use_count[refs[k]] < 2:
                continue
            chain = refs[start : k + 1]
            start = k
            poly = tuple(coords[r] for r in chain)
            length = sum(haversine_m(a[0], a[1], b[0], b[1]) for a, b in zip(poly, poly[1:]))
            if length <= 0.0:
                continue
            u, v = index_of(chain[0]), index_of(chain[-1])
            geom = poly if len(poly) > 2 else None
            if direction >= 0:
                edges.append(Edge(u, v, length, attrs, geom))
            if direction <= 0:
                rgeom = tuple(reversed(poly)) if geom is not None else None
                edges.append(Edge(v, u, length, attrs, rgeom))

    node_ids = [0] * len(lats)
    for ref, idx in node_index.items():
        node_ids[idx] = ref
    return StreetNetwork(tuple(lats), tuple(lons), tuple(edges), tuple(node_ids))


# ---------------------------------------------------------------------------
# Filtering
# ---------------------------------------------------------------------------

def is_bikeable(attrs: EdgeAttributes, excluded: FrozenSet[str] = DEFAULT_EXCLUDED_HIGHWAYS) -> bool:
    if attrs.highway in excluded:
        return False
    return (attrs.bicycle or "").strip().lower() != "no"


def filter_bikeable(
    net: StreetNetwork, excluded: Iterable[str] = DEFAULT_EXCLUDED_HIGHWAYS
) -> Tuple[StreetNetwork, Dict[int, int]]:
    """
    Drop edges cyclists may not use, then drop nodes left without edges.

    Returns the new network and the old -> new node index mapping (only for
    surviving nodes). Relative node and edge order is preserved.
    """
    excluded = frozenset(excluded)
    kept = [e for e in net.edges if is_bikeable(e.attrs, excluded)]
    used = sorted({e.source for e in kept} | {e.target for e in kept})
    mapping = {old: new for new, old in enumerate(used)}
    edges = tuple(replace(e, source=mapping[e.source], target=mapping[e.target]) for e in kept)
    out = StreetNetwork(
        tuple(net.lats[i] for i in used),
        tuple(net.lons[i] for i in used),
        edges,
        tuple(net.node_ids[i] for i in used),
    )
    return out, mapping


# ---------------------------------------------------------------------------
# Edge-list JSON
# ---------------------------------------------------------------------------

_EDGE_KEYS = {
    "from", "to", "length_m", "highway", "maxspeed_kmh", "lanes", "cycleway",
    "parking", "oneway", "reverse", "name", "bicycle", "geometry",
}
_NODE_KEYS = {"id", "lat", "lon"}


def _number(value, fieldname: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise EdgeListSchemaError("expected a number", fieldname)
    if not math.isfinite(value):
        raise EdgeListSchemaError("expected a finite number", fieldname)
    return float(value)


def network_from_dict(doc) -> StreetNetwork:
    if not isinstance(doc, dict):
        raise EdgeListSchemaError("document must be an object", "$")
    for key in doc:
        if key not in ("nodes", "edges", "format_version"):
            raise EdgeListSchemaError("unknown key", key)
    nodes = doc.get("nodes")
    edges = doc.get("edges")
    if not isinstance(nodes, list):
        raise EdgeListSchemaError("expected a list", "nodes")
    if not isinstance(edges, list):
        raise EdgeListSchemaError("expected a list", "edges")

    index: Dict[int, int] = {}
    lats, lons, ids = [], [], []
    for i, node in enumerate(nodes):
        where = f"nodes[{i}]"
        if not isinstance(node, dict):
            raise EdgeListSchemaError("expected an object", where)
        for key in node:
            if key not in _NODE_KEYS:
                raise EdgeListSchemaError("unknown key", f"{where}.{key}")
        for key in ("id", "lat", "lon"):
            if key not in node:
                raise EdgeListSchemaError("missing", f"{where}.{key}")
        nid = node["id"]
        if isinstance(nid, bool) or not isinstance(nid, int):
            raise EdgeListSchemaError("expected an integer", f"{where}.id")
        if nid in index:
            raise EdgeListSchemaError(f"duplicate node id {nid}", f"{where}.id")
        lat = _number(node["lat"], f"{where}.lat")
        lon = _number(node["lon"], f"{where}.lon")
        if not -90 <= lat <= 90:
            raise EdgeListSchemaError("latitude out of range", f"{where}.lat")
        if not -180 <= lon <= 180:
            raise EdgeListSchemaError("longitude out of range", f"{where}.lon")
        index[nid] = len(lats)
        lats.append(lat)
        lons.append(lon)
        ids.append(nid)

    out: List[Edge] = []
    for i, item in enumerate(edges):
        where = f"edges[{i}]"
        if not isinstance(item, dict):
            raise EdgeListSchemaError("expected an object", where)
        for key in item:
            if key not in _EDGE_KEYS:
                raise EdgeListSchemaError("unknown key", f"{where}.{key}")
        for key in ("from", "to", "highway"):
            if key not in item:
                raise EdgeListSchemaError("missing", f"{where}.{key}")
        ends = []
        for key in ("from", "to"):
            ref = item[key]
            if isinstance(ref, bool) or not isinstance(ref, int) or ref not in index:
                raise EdgeListSchemaError(f"unknown node {ref!r}", f"{where}.{key}")
            ends.append(index[ref])
        u, v = ends
        if not isinstance(item["highway"], str):
            raise EdgeListSchemaError("expected a string", f"{where}.highway")

        geometry = None
        if item.get("geometry") is not None:
            geo = item["geometry"]
            if not isinstance(geo, list) or len(geo) < 2:
                raise EdgeListSchemaError("expected a list of [lat, lon]", f"{where}.geometry")
            try:
                geometry = tuple(
                    (_number(p[0], f"{where}.geometry"), _number(p[1], f"{where}.geometry"))
                    for p in geo
                )
            except (TypeError, IndexError, KeyError):
                raise EdgeListSchemaError("expected a list of [lat, lon]", f"{where}.geometry") from None

        poly = geometry or ((lats[u], lons[u]), (lats[v], lons[v]))
        if item.get("length_m") is None:
            length = sum(haversine_m(a[0], a[1], b[0], b[1]) for a, b in zip(poly, poly[1:]))
        else:
            length = _number(item["length_m"], f"{where}.length_m")
        if length <= 0:
            raise EdgeListSchemaError("length must be positive", f"{where}.length_m")

        speed = item.get("maxspeed_kmh")
        if speed is not None:
            speed = _number(speed, f"{where}.maxspeed_kmh")
            if not 0 < speed <= 200:
                raise EdgeListSchemaError("must be in (0, 200]", f"{where}.maxspeed_kmh")
        lanes = item.get("lanes")
        if lanes is not None:
            if isinstance(lanes, bool) or not isinstance(lanes, int) or not 1 <= lanes <= 12:
                raise EdgeListSchemaError("must be an integer in [1, 12]", f"{where}.lanes")
        cycleway = item.get("cycleway") or "none"
        try:
            cycleway = Cycleway(cycleway)
        except ValueError:
            raise EdgeListSchemaError(
                f"must be one of {[c.value for c in Cycleway]}", f"{where}.cycleway"
            ) from None
        parking = item.get("parking")
        if parking is not None and not isinstance(parking, bool):
            raise EdgeListSchemaError("expected a boolean", f"{where}.parking")
        oneway = item.get("oneway", False)
        if not isinstance(oneway, bool):
            raise EdgeListSchemaError("expected a boolean", f"{where}.oneway")
        add_reverse = item.get("reverse", not oneway)
        if not isinstance(add_reverse, bool):
            raise EdgeListSchemaError("expected a boolean", f"{where}.reverse")
        for key in ("name", "bicycle"):
            if item.get(key) is not None and not isinstance(item[key], str):
                raise EdgeListSchemaError("expected a string", f"{where}.{key}")

        attrs = EdgeAttributes(
            highway=item["highway"],
            maxspeed_kmh=speed,
            lanes=lanes,
            cycleway=cycleway,
            parking_present=parking,
            name=item.get("name"),
            oneway=oneway,
            bicycle=item.get("bicycle"),
        )
        out.append(Edge(u, v, length, attrs, geometry))
        if add_reverse:
            rgeom = tuple(reversed(geometry)) if geometry is not None else None
            out.append(Edge(v, u, length, attrs, rgeom))

    try:
        return StreetNetwork(tuple(lats), tuple(lons), tuple(out), tuple(ids))
    except NetworkError as exc:
        raise EdgeListSchemaError(str(exc), "edges") from None


def load_edgelist_json(source: IO | str | bytes) -> StreetNetwork:
    if isinstance(source, (str, bytes, bytearray)):
        text = source
    else:
        text = source.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise EdgeListSchemaError(f"invalid JSON: {exc}", "$") from None
    return network_from_dict(doc)


def _is_twin(net: StreetNetwork, i: int, j: int) -> bool:
    a, b = net.edges[i], net.edges[j]
    return (
        a.source == b.target
        and a.target == b.source
        and a.length_m == b.length_m
        and a.attrs == b.attrs
        and net.edge_polyline(j) == tuple(reversed(net.edge_polyline(i)))
    )


def network_to_dict(net: StreetNetwork) -> dict:
    """
    Edge-list document for ``net``.

    A two-way street stored as adjacent opposite edges is written as one
    record; any other edge is written with ``reverse: false`` so loading
    reproduces the exact edge sequence.
    """
    nodes = [
        {"id": nid, "lat": lat, "lon": lon}
        for nid, lat, lon in zip(net.node_ids, net.lats, net.lons)
    ]
    edges = []
    i = 0
    while i < net.num_edges:
        e = net.edges[i]
        a = e.attrs
        item = {
            "from": net.node_ids[e.source],
            "to": net.node_ids[e.target],
            "length_m": e.length_m,
            "highway": a.highway,
            "oneway": a.oneway,
        }
        paired = (
            not a.oneway and i + 1 < net.num_edges and _is_twin(net, i, i + 1)
        )
        if not paired and not a.oneway:
            item["reverse"] = False
        if a.maxspeed_kmh is not None:
            item["maxspeed_kmh"] = a.maxspeed_kmh
        if a.lanes is not None:
            item["lanes"] = a.lanes
        if a.cycleway is not Cycleway.NONE:
            item["cycleway"] = a.cycleway.value
        if a.parking_present is not None:
            item["parking"] = a.parking_present
        if a.name is not None:
            item["name"] = a.name
        if a.bicycle is not None:
            item["bicycle"] = a.bicycle
        if e.geometry is not None:
            item["geometry"] = [list(p) for p in e.geometry]
        edges.append(item)
        i += 2 if paired else 1
    return {"format_version": 1, "nodes": nodes, "edges": edges}


def dump_edgelist_json(net: StreetNetwork) -> str:
    return json.dumps(network_to_dict(net), sort_keys=True, indent=1) + "\n"
