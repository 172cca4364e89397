"""
Observed-versus-optimal deviation metrics for matched trajectories.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

from .geo import Trajectory, od_distance
from .matching import MatchedPath
from .network import StreetNetwork
from .routing import RoutePath

DETOUR_EPS = 0.05
DEFAULT_MAX_OD_M = 10_000.0
N_BINS = 10


class AnalyticsError(ValueError):
    pass


def lts_score(edges: Sequence[int], lts_map: Sequence[int], lengths: Sequence[float] | None = None) -> float:
    """
    Mean stress level over the segments of a path.

    With ``lengths`` (indexed like ``lts_map``) the mean is weighted by
    segment length instead of counting every segment once.
    """
    if not edges:
        raise AnalyticsError("stress score of an empty path is undefined")
    if lengths is None:
        return math.fsum(lts_map[e] for e in edges) / len(edges)
    total = math.fsum(lengths[e] for e in edges)
    return math.fsum(lts_map[e] * lengths[e] for e in edges) / total


def median(values: Sequence[float]) -> float:
    """Median; even-length input averages the two middle values."""
    if not values:
        raise AnalyticsError("median of an empty sequence")
    return statistics.median(values)


def iqr(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    q = statistics.quantiles(values, n=4, method="inclusive")
    return q[2] - q[0]


def sample_variance(values: Sequence[float]) -> Optional[float]:
    return statistics.variance(values) if len(values) >= 2 else None


@dataclass
class TrajectoryMetrics:
    traj_id: str
    user_id: str
    observed_length_m: float
    optimal_length_m: float
    optimal_time_s: float
    observed_lts: float
    optimal_lts: float
    od_distance_m: float
    detour_ratio: float
    network_od_m: float
    optimal_time_lts: Optional[float] = None
    flags: str = ""

    @property
    def valid(self) -> bool:
        return "degenerate" not in self.flags.split(";")

    def as_row(self) -> dict:
        return asdict(self)


METRIC_FIELDS = list(TrajectoryMetrics.__dataclass_fields__)


def trajectory_metrics(
    matched: MatchedPath,
    optimal_len: RoutePath,
    optimal_time: RoutePath,
    lts_map: Sequence[int],
    traj: Trajectory,
    net: StreetNetwork | None = None,
    length_weighted: bool = False,
) -> TrajectoryMetrics:
    """
    Compare one matched trajectory with its shortest-length and fastest paths.

    An empty optimal path (origin and destination snap to one node) marks the
    trajectory ``degenerate``: its stress scores are NaN and binning skips it.
    A detour ratio below ``1 - DETOUR_EPS`` is flagged ``short_detour`` but
    kept.
    """
    lengths = None
    if length_weighted:
        if net is None:
            raise AnalyticsError("length-weighted scores need the network")
        lengths = [e.length_m for e in net.edges]
    flags = []
    od = od_distance(traj)
    observed_lts = lts_score(matched.edges, lts_map, lengths) if matched.edges else math.nan
    if optimal_len.is_empty:
        flags.append("degenerate")
        optimal_lts = math.nan
        detour = math.nan
    else:
        optimal_lts = lts_score(optimal_len.edges, lts_map, lengths)
        detour = matched.matched_length_m / optimal_len.total_length_m
        if detour < 1.0 - DETOUR_EPS:
            flags.append("short_detour")
    time_lts = None
    if not optimal_time.is_empty:
        time_lts = lts_score(optimal_time.edges, lts_map, lengths)
    return TrajectoryMetrics(
        traj_id=traj.traj_id,
        user_id=traj.user_id,
        observed_length_m=matched.matched_length_m,
        optimal_length_m=optimal_len.total_length_m,
        optimal_time_s=optimal_time.total_weight,
        observed_lts=observed_lts,
        optimal_lts=optimal_lts,
        od_distance_m=od,
        detour_ratio=detour,
        network_od_m=optimal_len.total_length_m,
        optimal_time_lts=time_lts,
        flags=";".join(flags),
    )


@dataclass
class ScatterRow:
    optimal_lts: float
    observed_lts: float
    traj_id: str


def scatter_data(metrics: Sequence[TrajectoryMetrics], use_time: bool = False):
    """
    Points of the observed-vs-optimal stress scatter and the share strictly
    below the diagonal (observed < optimal). The share is None for no points.
    """
    rows = []
    for m in metrics:
        if not m.valid:
            continue
        x = m.optimal_time_lts if use_time else m.optimal_lts
        if x is None or math.isnan(x) or math.isnan(m.observed_lts):
            continue
        rows.append(ScatterRow(x, m.observed_lts, m.traj_id))
    if not rows:
        return rows, None
    below = sum(1 for r in rows if r.observed_lts < r.optimal_lts)
    return rows, below / len(rows)


@dataclass
class BinSummary:
    bin_index: int
    od_lo_m: float
    od_hi_m: float
    n: int
    observed_median: float
    observed_iqr: float
    observed_variance: Optional[float]
    optimal_median: float
    optimal_iqr: float
    optimal_variance: Optional[float]

    @property
    def gap(self) -> float:
        return self.optimal_median - self.observed_median


BIN_FIELDS = list(BinSummary.__dataclass_fields__)


def split_sizes(n: int, k: int) -> List[int]:
    """Equal-count group sizes; the first ``n % k`` groups get one extra."""
    base, extra = divmod(n, k)
    return [base + 1 if i < extra else base for i in range(k)]


def decile_bins(
    metrics: Sequence[TrajectoryMetrics],
    max_od_m: float = DEFAULT_MAX_OD_M,
    n_bins: int = N_BINS,
    by_network_length: bool = False,
) -> List[BinSummary]:
    """
    Equal-count bins of trajectories sorted by origin-destination distance.

    Only valid trajectories with distance below ``max_od_m`` take part. The
    distance is the great-circle one between the raw endpoints, or the
    shortest network path length with ``by_network_length``. Bin ranges are
    ``[lo, hi)`` with ``hi`` the next bin's first distance (the last bin's
    ``hi`` is its largest distance).
    """
    def key(m: TrajectoryMetrics) -> float:
        return m.network_od_m if by_network_length else m.od_distance_m

    pool = [m for m in metrics if m.valid and key(m) < max_od_m]
    if len(pool) < n_bins:
        raise AnalyticsError(
            f"{len(pool)} trajectories under {max_od_m:.0f} m; need at least {n_bins} "
            "(pass a smaller bin count explicitly)"
        )
    pool.sort(key=lambda m: (key(m), m.traj_id))
    out = []
    start = 0
    for i, size in enumerate(split_sizes(len(pool), n_bins)):
        group = pool[start : start + size]
        start += size
        lo = key(group[0])
        hi = key(pool[start]) if start < len(pool) else key(group[-1])
        obs = [m.observed_lts for m in group]
        opt = [m.optimal_lts for m in group]
        out.append(
            BinSummary(
                bin_index=i,
                od_lo_m=lo,
                od_hi_m=hi,
                n=len(group),
                observed_median=median(obs),
                observed_iqr=iqr(obs),
                observed_variance=sample_variance(obs),
                optimal_median=median(opt),
                optimal_iqr=iqr(opt),
                optimal_variance=sample_variance(opt),
            )
        )
    return out


def population_summary(metrics: Sequence[TrajectoryMetrics]) -> Dict[str, float]:
    """Medians of the headline per-trajectory quantities over valid trajectories."""
    if not metrics:
        raise AnalyticsError("no trajectories to summarize")
    valid = [m for m in metrics if m.valid] or list(metrics)

    def med(name: str) -> Optional[float]:
        vals = [getattr(m, name) for m in valid]
        vals = [v for v in vals if v is not None and not math.isnan(v)]
        return median(vals) if vals else None

    return {
        "median_observed_length_m": med("observed_length_m"),
        "median_optimal_length_m": med("optimal_length_m"),
        "median_detour_ratio": med("detour_ratio"),
        "median_observed_lts": med("observed_lts"),
        "median_optimal_lts": med("optimal_lts"),
    }
