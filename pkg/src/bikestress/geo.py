"""
Geographic primitives shared by the rest of the package.

Points are plain latitude/longitude pairs in degrees on a spherical Earth
(R = 6,371,000 m). Trajectories are time-ordered sequences of fixes for a
single trip of a single user.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Iterator, List, Sequence, TextIO, Tuple

EARTH_RADIUS_M = 6_371_000.0

TRAJECTORY_CSV_HEADER = ("user_id", "traj_id", "timestamp", "lat", "lon")


class TrajectoryFormatError(ValueError):
    """Raised for a malformed trajectory CSV. Carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        lat, lon = float(self.lat), float(self.lon)
        if math.isnan(lat) or math.isnan(lon):
            raise ValueError("NaN coordinate")
        if not -90.0 <= lat <= 90.0:
            raise ValueError(f"latitude out of range: {lat}")
        if not -180.0 <= lon <= 180.0:
            raise ValueError(f"longitude out of range: {lon}")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)


@dataclass(frozen=True)
class SpatioTemporalPoint:
    t: int
    loc: GeoPoint

    def __post_init__(self):
        if not math.isfinite(self.t) or self.t < 0:
            raise ValueError(f"invalid timestamp: {self.t}")


@dataclass(frozen=True)
class Trajectory:
    user_id: str
    traj_id: str
    points: Tuple[SpatioTemporalPoint, ...]

    def __post_init__(self):
        pts = tuple(self.points)
        if not pts:
            raise ValueError(f"trajectory {self.traj_id!r} has no points")
        for a, b in zip(pts, pts[1:]):
            if b.t <= a.t:
                raise ValueError(
                    f"trajectory {self.traj_id!r}: timestamps not strictly increasing"
                )
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def origin(self) -> GeoPoint:
        return self.points[0].loc

    @property
    def destination(self) -> GeoPoint:
        return self.points[-1].loc

    def sampling_interval(self) -> float | None:
        """Median seconds between consecutive fixes (a quality metric only)."""
        if len(self.points) < 2:
            return None
        gaps = sorted(b.t - a.t for a, b in zip(self.points, self.points[1:]))
        mid = len(gaps) // 2
        if len(gaps) % 2:
            return float(gaps[mid])
        return (gaps[mid - 1] + gaps[mid]) / 2.0


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in meters between two lat/lon pairs in degrees."""
    p1 = math.radians(lat1)
    p2 = math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    h = math.sin(dp / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    return haversine_m(a.lat, a.lon, b.lat, b.lon)


def trajectory_length(traj: Trajectory) -> float:
    pts = traj.points
    return math.fsum(
        haversine_distance(p.loc, q.loc) for p, q in zip(pts, pts[1:])
    )


def od_distance(traj: Trajectory) -> float:
    """Great-circle distance between the first and the last fix."""
    return haversine_distance(traj.origin, traj.destination)


# ---------------------------------------------------------------------------
# Trajectory CSV
# ---------------------------------------------------------------------------

def _parse_iso(value: str) -> int:
    text = value.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(round(dt.timestamp()))


def _is_epoch(value: str) -> bool:
    try:
        float(value)
    except ValueError:
        return False
    return True


def read_trajectories_csv(stream: TextIO) -> List[Trajectory]:
    """
    Parse the trajectory CSV format.

    Header must be ``user_id,traj_id,timestamp,lat,lon``. Timestamps are
    either all epoch seconds or all ISO-8601; a file mixing the two is
    rejected. Rows of one ``traj_id`` must be contiguous and strictly
    time-sorted.
    """
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise TrajectoryFormatError("empty file", line=1) from None
    if tuple(h.strip() for h in header) != TRAJECTORY_CSV_HEADER:
        raise TrajectoryFormatError(
            f"expected header {','.join(TRAJECTORY_CSV_HEADER)}", line=1
        )

    trajectories: List[Trajectory] = []
    seen: set = set()
    current_key = None
    current_user = None
    current_pts: List[SpatioTemporalPoint] = []
    ts_kind = None

    def flush():
        if current_key is not None:
            trajectories.append(Trajectory(current_user, current_key, tuple(current_pts)))

    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 5:
            raise TrajectoryFormatError(f"expected 5 fields, got {len(row)}", line=line)
        user_id, traj_id, ts_raw, lat_raw, lon_raw = (c.strip() for c in row)
        kind = "epoch" if _is_epoch(ts_raw) else "iso"
        if ts_kind is None:
            ts_kind = kind
        elif kind != ts_kind:
            raise TrajectoryFormatError(
                "mixed epoch and ISO-8601 timestamps in one file", line=line
            )
        try:
            if kind == "epoch":
                ts = float(ts_raw)
                if not math.isfinite(ts) or ts != int(ts):
                    raise ValueError("epoch timestamps must be whole seconds")
                t = int(ts)
            else:
                t = _parse_iso(ts_raw)
            loc = GeoPoint(float(lat_raw), float(lon_raw))
            point = SpatioTemporalPoint(t, loc)
        except ValueError as exc:
            raise TrajectoryFormatError(str(exc), line=line) from None

        if traj_id != current_key:
            if traj_id in seen:
                raise TrajectoryFormatError(
                    f"rows for traj_id {traj_id!r} are not contiguous", line=line
                )
            flush()
            seen.add(traj_id)
            current_key, current_user, current_pts = traj_id, user_id, []
        elif user_id != current_user:
            raise TrajectoryFormatError(
                f"traj_id {traj_id!r} changes user_id", line=line
            )
        if current_pts and point.t <= current_pts[-1].t:
            raise TrajectoryFormatError(
                f"traj_id {traj_id!r} is not strictly time-sorted", line=line
            )
        current_pts.append(point)
    flush()
    return trajectories


def format_coord(value: float) -> str:
    return f"{value:.7f}"


def write_trajectories_csv(trajectories: Iterable[Trajectory], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(TRAJECTORY_CSV_HEADER)
    for traj in trajectories:
        for p in traj.points:
            writer.writerow(
                [traj.user_id, traj.traj_id, p.t, format_coord(p.loc.lat), format_coord(p.loc.lon)]
            )


def trajectories_to_csv_text(trajectories: Iterable[Trajectory]) -> str:
    buf = io.StringIO()
    write_trajectories_csv(trajectories, buf)
    return buf.getvalue()


def iter_points(traj: Trajectory) -> Iterator[Tuple[float, float]]:
    for p in traj.points:
        yield p.loc.lat, p.loc.lon


def make_trajectory(
    user_id: str, traj_id: str, coords: Sequence[Tuple[float, float]], t0: int = 0, dt: int = 5
) -> Trajectory:
    """Convenience constructor: fixes at regular ``dt``-second intervals."""
    pts = tuple(
        SpatioTemporalPoint(t0 + i * dt, GeoPoint(lat, lon)) for i, (lat, lon) in enumerate(coords)
    )
    return Trajectory(user_id, traj_id, pts)


# ---------------------------------------------------------------------------
# Local planar geometry
# ---------------------------------------------------------------------------

def local_xy(lat: float, lon: float, lat0: float, lon0: float) -> Tuple[float, float]:
    """Equirectangular projection in meters around (lat0, lon0)."""
    k = math.pi / 180.0 * EARTH_RADIUS_M
    return (lon - lon0) * k * math.cos(math.radians(lat0)), (lat - lat0) * k


def project_onto_polyline(
    lat: float, lon: float, polyline: Sequence[Tuple[float, float]]
) -> Tuple[float, float]:
    """
    Closest position on a lat/lon polyline to a point.

    Returns ``(fraction, perp_m)``: the position as a fraction of the
    polyline's planar length in [0, 1], and the planar distance to it.
    Planar math is done in a tangent plane at the query point, which is
    accurate to well under a millimeter at street scale.
    """
    xy = [local_xy(a, b, lat, lon) for a, b in polyline]
    seg_lens = [math.hypot(x2 - x1, y2 - y1) for (x1, y1), (x2, y2) in zip(xy, xy[1:])]
    total = sum(seg_lens)
    best_d = math.inf
    best_s = 0.0
    walked = 0.0
    for (x1, y1), (x2, y2), seg in zip(xy, xy[1:], seg_lens):
        if seg == 0.0:
            u = 0.0
        else:
            u = (-x1 * (x2 - x1) - y1 * (y2 - y1)) / (seg * seg)
            u = min(1.0, max(0.0, u))
        px, py = x1 + u * (x2 - x1), y1 + u * (y2 - y1)
        d = math.hypot(px, py)
        if d < best_d:
            best_d = d
            best_s = walked + u * seg
        walked += seg
    if total == 0.0:
        return 0.0, best_d
    return min(1.0, best_s / total), best_d


def interpolate_polyline(
    polyline: Sequence[Tuple[float, float]], fraction: float
) -> Tuple[float, float]:
    """Lat/lon at ``fraction`` of the haversine length along a polyline."""
    hops = [haversine_m(a[0], a[1], b[0], b[1]) for a, b in zip(polyline, polyline[1:])]
    target = fraction * sum(hops)
    for (a, b), h in zip(zip(polyline, polyline[1:]), hops):
        if target <= h and h > 0.0:
            u = target / h
            return a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])
        target -= h
    return polyline[-1]
