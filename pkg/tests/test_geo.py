from __future__ import annotations

import io
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bikestress.geo import (
    EARTH_RADIUS_M,
    GeoPoint,
    SpatioTemporalPoint,
    Trajectory,
    TrajectoryFormatError,
    haversine_distance,
    haversine_m,
    interpolate_polyline,
    make_trajectory,
    od_distance,
    project_onto_polyline,
    read_trajectories_csv,
    trajectories_to_csv_text,
    trajectory_length,
)

lat_st = st.floats(-90, 90, allow_nan=False)
lon_st = st.floats(-180, 180, allow_nan=False)


# -- distances ------------------------------------------------------------------

def test_one_degree_of_longitude_on_equator():
    assert haversine_m(0, 0, 0, 1) == pytest.approx(111_194.93, abs=0.01)


def test_pole_to_pole():
    assert haversine_m(90, 0, -90, 0) == pytest.approx(math.pi * EARTH_RADIUS_M, rel=1e-12)
    assert haversine_m(90, 0, -90, 0) == pytest.approx(20_015_086.8, abs=0.1)


def test_identical_points_are_zero():
    assert haversine_m(44.8, 11.6, 44.8, 11.6) == 0.0


def test_antipodal_points():
    # half circumference; the formula loses a few decimals near antipodes
    assert haversine_m(0, 0, 0, 180) == pytest.approx(20_015_086.8, abs=1.0)
    assert haversine_m(10, 20, -10, -160) == pytest.approx(math.pi * EARTH_RADIUS_M, abs=1.0)


@settings(max_examples=200, deadline=None)
@given(lat_st, lon_st, lat_st, lon_st)
def test_haversine_symmetric_and_bounded(a, b, c, d):
    x = haversine_m(a, b, c, d)
    assert x == pytest.approx(haversine_m(c, d, a, b), abs=1e-6)
    assert 0.0 <= x <= math.pi * EARTH_RADIUS_M + 1e-6


@settings(max_examples=200, deadline=None)
@given(lat_st, lon_st, lat_st, lon_st, lat_st, lon_st)
def test_haversine_triangle_inequality(a, b, c, d, e, f):
    direct = haversine_m(a, b, e, f)
    assert direct <= (haversine_m(a, b, c, d) + haversine_m(c, d, e, f)) * (1 + 1e-6) + 1e-9


def test_trajectory_length_sums_hops():
    t = make_trajectory("u", "t", [(44.8, 11.6), (44.801, 11.6), (44.802, 11.6)])
    assert trajectory_length(t) == pytest.approx(2 * haversine_m(44.8, 11.6, 44.801, 11.6))
    assert od_distance(t) == pytest.approx(haversine_m(44.8, 11.6, 44.802, 11.6))
    # 0.002 degrees of latitude
    assert od_distance(t) == pytest.approx(222.39, abs=0.01)


# -- value types ----------------------------------------------------------------

@pytest.mark.parametrize("lat,lon", [(91, 0), (-90.0001, 0), (0, 180.5), (math.nan, 0), (0, math.inf)])
def test_geopoint_rejects_out_of_range(lat, lon):
    with pytest.raises(ValueError):
        GeoPoint(lat, lon)


def test_trajectory_requires_increasing_time():
    p = GeoPoint(1, 1)
    with pytest.raises(ValueError):
        Trajectory("u", "t", (SpatioTemporalPoint(5, p), SpatioTemporalPoint(5, p)))
    with pytest.raises(ValueError):
        Trajectory("u", "t", ())


def test_single_point_trajectory():
    t = make_trajectory("u", "t", [(1.0, 2.0)])
    assert trajectory_length(t) == 0.0
    assert t.origin == t.destination
    assert t.sampling_interval() is None


def test_sampling_interval_is_median_gap():
    pts = tuple(SpatioTemporalPoint(t, GeoPoint(0, 0.001 * i)) for i, t in enumerate([0, 5, 10, 30]))
    assert Trajectory("u", "t", pts).sampling_interval() == 5


# -- CSV --------------------------------------------------------------------------

HEADER = "user_id,traj_id,timestamp,lat,lon\n"


def test_csv_round_trip():
    trajs = [
        make_trajectory("u1", "a", [(44.8, 11.6), (44.8001, 11.6002)], t0=100),
        make_trajectory("u2", "b", [(44.81, 11.61), (44.8101, 11.6102), (44.8102, 11.6104)], t0=200),
    ]
    text = trajectories_to_csv_text(trajs)
    again = read_trajectories_csv(io.StringIO(text))
    assert again == trajs
    assert trajectories_to_csv_text(again) == text


def test_csv_iso_timestamps():
    text = HEADER + "u,t,2021-05-01T10:00:00Z,44.8,11.6\nu,t,2021-05-01T10:00:05+00:00,44.8001,11.6\n"
    (t,) = read_trajectories_csv(io.StringIO(text))
    assert [p.t for p in t.points] == [1619863200, 1619863205]


@pytest.mark.parametrize(
    "body,line,fragment",
    [
        ("u,t,1,44.8,11.6\nu,t,2021-05-01T10:00:05Z,44.8,11.6\n", 3, "mixed"),
        ("u,t,5,44.8,11.6\nu,t,5,44.9,11.6\n", 3, "time-sorted"),
        ("u,a,1,44.8,11.6\nu,b,2,44.8,11.6\nu,a,3,44.8,11.6\n", 4, "contiguous"),
        ("u,t,1,95,11.6\n", 2, "latitude"),
        ("u,t,1,44.8\n", 2, "5 fields"),
        ("u,t,1,abc,11.6\n", 2, ""),
    ],
)
def test_csv_errors_carry_line_numbers(body, line, fragment):
    with pytest.raises(TrajectoryFormatError) as info:
        read_trajectories_csv(io.StringIO(HEADER + body))
    assert info.value.line == line
    assert fragment in str(info.value)


def test_csv_bad_header():
    with pytest.raises(TrajectoryFormatError) as info:
        read_trajectories_csv(io.StringIO("a,b,c,d,e\n"))
    assert info.value.line == 1


def test_csv_empty_body_is_no_trajectories():
    assert read_trajectories_csv(io.StringIO(HEADER)) == []


# -- planar helpers -------------------------------------------------------------------

def test_projection_onto_segment():
    line = [(44.8, 11.6), (44.8, 11.602)]
    frac, perp = project_onto_polyline(44.8001, 11.601, line)
    assert frac == pytest.approx(0.5, abs=1e-6)
    assert perp == pytest.approx(haversine_m(44.8, 11.601, 44.8001, 11.601), rel=1e-4)
    frac, perp = project_onto_polyline(44.8, 11.59, line)
    assert frac == 0.0


def test_interpolate_endpoints_and_middle():
    line = [(44.8, 11.6), (44.801, 11.6), (44.801, 11.601)]
    assert interpolate_polyline(line, 0.0) == line[0]
    assert interpolate_polyline(line, 1.0) == pytest.approx(line[-1])
    lat, lon = interpolate_polyline(line, 0.25)
    assert lon == pytest.approx(11.6) and 44.8 < lat < 44.801
