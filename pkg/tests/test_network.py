from __future__ import annotations

import io
import json
import random
from pathlib import Path

import pytest

from bikestress.network import (
    Cycleway,
    Edge,
    EdgeAttributes,
    EdgeListSchemaError,
    OsmParseError,
    OsmStructureError,
    StreetNetwork,
    dump_edgelist_json,
    filter_bikeable,
    load_edgelist_json,
    network_from_dict,
    parse_cycleway,
    parse_lanes,
    parse_maxspeed,
    parse_osm_xml,
)
from oracles import random_network

FIX = Path(__file__).parent / "fixtures"


def _town() -> StreetNetwork:
    with open(FIX / "town.osm", "rb") as fh:
        return parse_osm_xml(fh)


def _edge(net, a, b):
    hits = [e for e in net.edges if net.node_ids[e.source] == a and net.node_ids[e.target] == b]
    assert len(hits) == 1, (a, b, hits)
    return hits[0]


# -- OSM golden file ------------------------------------------------------------

def test_town_counts():
    net = _town()
    # node 4 is interior to way 101 and shared only with a building: not a node
    assert net.num_nodes == 7
    assert net.num_edges == 12
    assert sorted(net.node_ids) == [1, 2, 3, 5, 6, 7, 8]


def test_town_split_at_shared_node():
    net = _town()
    a = _edge(net, 1, 2)
    b = _edge(net, 2, 3)
    assert a.length_m == pytest.approx(78.901, abs=1e-3)
    assert b.length_m == pytest.approx(78.901, abs=1e-3)
    assert a.attrs == EdgeAttributes(
        highway="primary", maxspeed_kmh=70.0, lanes=4, cycleway=Cycleway.LANE, name="Via Roma"
    )
    _edge(net, 2, 1)
    _edge(net, 3, 2)


def test_town_oneway_keeps_geometry():
    net = _town()
    e = _edge(net, 2, 5)
    assert e.attrs.oneway
    assert e.length_m == pytest.approx(222.39, abs=0.01)  # via node 4, not the chord
    assert len(e.geometry) == 3
    assert not [x for x in net.edges if net.node_ids[x.source] == 5 and net.node_ids[x.target] == 2]


def test_town_reverse_oneway_and_tags():
    net = _town()
    e = _edge(net, 3, 5)  # oneway=-1 on a way drawn 5 -> 3
    assert e.attrs.oneway
    assert e.attrs.maxspeed_kmh == pytest.approx(20 * 1.609344)
    assert e.attrs.cycleway is Cycleway.TRACK
    assert e.attrs.parking_present is True
    assert _edge(net, 7, 8).attrs.bicycle == "no"


def test_town_filter():
    net, mapping = filter_bikeable(_town())
    assert net.num_nodes == 5
    assert net.num_edges == 8
    assert {e.attrs.highway for e in net.edges} == {"primary", "residential", "cycleway", "secondary"}
    assert 6 not in net.node_ids and 8 not in net.node_ids
    assert len(mapping) == 5


def test_filter_custom_exclusions():
    net, _ = filter_bikeable(_town(), excluded={"primary"})
    assert "primary" not in {e.attrs.highway for e in net.edges}
    assert "motorway" in {e.attrs.highway for e in net.edges}


# -- malformed OSM ---------------------------------------------------------------

def test_truncated_xml_reports_offset():
    with pytest.raises(OsmParseError) as info:
        parse_osm_xml((FIX / "truncated.osm").read_bytes())
    assert info.value.offset == 116


def test_missing_node_reports_way():
    with pytest.raises(OsmStructureError) as info:
        parse_osm_xml((FIX / "missing_node.osm").read_bytes())
    assert info.value.way_id == "77"
    assert "missing node 3" in str(info.value)


def test_bad_node_coordinates():
    with pytest.raises(OsmStructureError):
        parse_osm_xml((FIX / "bad_node.osm").read_bytes())


def test_empty_osm():
    net = parse_osm_xml(b"<osm/>")
    assert net.num_nodes == 0 and net.num_edges == 0


# -- tag parsing -------------------------------------------------------------------

@pytest.mark.parametrize(
    "raw,value",
    [("50", 50.0), ("30 mph", 30 * 1.609344), (" 70 km/h", 70.0), ("none", None), ("signals", None),
     ("0", None), ("300", None), (None, None)],
)
def test_parse_maxspeed(raw, value):
    got = parse_maxspeed(raw)
    assert got == (pytest.approx(value) if value is not None else None)


def test_parse_lanes_and_cycleway():
    assert parse_lanes("2") == 2
    assert parse_lanes("2;3") is None
    assert parse_lanes("0") is None
    assert parse_cycleway("lane", None, "track") is Cycleway.TRACK
    assert parse_cycleway("shared_lane") is Cycleway.SHARED
    assert parse_cycleway("bogus") is Cycleway.NONE


# -- validation ----------------------------------------------------------------------

def test_edge_length_bound_enforced():
    attrs = EdgeAttributes(highway="residential")
    with pytest.raises(ValueError):
        StreetNetwork((44.8, 44.8), (11.6, 11.601), (Edge(0, 1, 500.0, attrs),))
    with pytest.raises(ValueError):
        StreetNetwork((44.8,), (11.6,), (Edge(0, 3, 1.0, attrs),))


@pytest.mark.parametrize("kwargs", [{"maxspeed_kmh": 0}, {"maxspeed_kmh": 250}, {"lanes": 0}, {"lanes": 13}])
def test_attribute_ranges(kwargs):
    with pytest.raises(ValueError):
        EdgeAttributes(highway="residential", **kwargs)


# -- edge-list JSON -----------------------------------------------------------------------

def test_edgelist_small():
    net = load_edgelist_json((FIX / "small.json").read_text())
    assert net.num_nodes == 3
    assert [(e.source, e.target) for e in net.edges] == [(0, 1), (1, 0), (1, 2)]
    assert net.edges[2].attrs.cycleway is Cycleway.LANE
    assert net.edges[2].attrs.name == "Corso"


def test_edgelist_unknown_key():
    with pytest.raises(EdgeListSchemaError) as info:
        load_edgelist_json((FIX / "unknown_key.json").read_text())
    assert info.value.field == "edges[0].colour"


@pytest.mark.parametrize(
    "mutate,field",
    [
        (lambda d: d["edges"][0].pop("highway"), "edges[0].highway"),
        (lambda d: d["edges"][0].update({"length_m": -1}), "edges[0].length_m"),
        (lambda d: d["edges"][0].update({"to": 99}), "edges[0].to"),
        (lambda d: d["nodes"][0].update({"lat": "x"}), "nodes[0].lat"),
        (lambda d: d.update({"extra": 1}), "extra"),
    ],
)
def test_edgelist_schema_errors(mutate, field):
    doc = json.loads((FIX / "small.json").read_text())
    mutate(doc)
    with pytest.raises(EdgeListSchemaError) as info:
        network_from_dict(doc)
    assert info.value.field == field


def test_edgelist_absent_length_is_computed():
    doc = json.loads((FIX / "small.json").read_text())
    del doc["edges"][0]["length_m"]
    net = network_from_dict(doc)
    assert net.edges[0].length_m == pytest.approx(78.901, abs=1e-3)


def test_town_round_trip():
    net = _town()
    text = dump_edgelist_json(net)
    again = load_edgelist_json(text)
    assert again == net
    assert dump_edgelist_json(again) == text


@pytest.mark.parametrize("seed", range(20))
def test_random_round_trip(seed):
    net = random_network(random.Random(seed), 8, 6)
    assert load_edgelist_json(io.StringIO(dump_edgelist_json(net))) == net


def test_adjacency_and_reverse_edge():
    net = _town()
    for u in range(net.num_nodes):
        for ei in net.out_edges[u]:
            assert net.edges[ei].source == u
        for ei in net.in_edges[u]:
            assert net.edges[ei].target == u
        assert net.degree(u) == len(net.out_edges[u]) + len(net.in_edges[u])
    e12 = net.edges.index(_edge(net, 1, 2))
    rev = net.reverse_edge(e12)
    assert net.node_ids[net.edges[rev].source] == 2
    assert net.reverse_edge(net.edges.index(_edge(net, 2, 5))) is None
