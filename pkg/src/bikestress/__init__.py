"""
Traffic-stress analysis of cyclist trajectories.

Parses street networks, scores street segments by level of traffic stress,
map-matches GPS traces, routes shortest alternatives, and compares the two.
"""

from .geo import GeoPoint, SpatioTemporalPoint, Trajectory, haversine_distance, haversine_m
from .lts import classify_edge, classify_network
from .network import Edge, EdgeAttributes, StreetNetwork, parse_osm_xml
from .routing import Router, WeightScheme, shortest_path
from .spatial import BallTree

__version__ = "0.1.0"

__all__ = [
    "BallTree",
    "Edge",
    "EdgeAttributes",
    "GeoPoint",
    "Router",
    "SpatioTemporalPoint",
    "StreetNetwork",
    "Trajectory",
    "WeightScheme",
    "classify_edge",
    "classify_network",
    "haversine_distance",
    "haversine_m",
    "parse_osm_xml",
    "shortest_path",
]
