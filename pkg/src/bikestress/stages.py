"""
Batch stages behind the command line. Each stage reads its inputs from disk
and writes its outputs to an output directory, so any stage can be re-run
from the artifacts of the previous one.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from . import artifacts as art
from .analytics import (
    BIN_FIELDS,
    METRIC_FIELDS,
    AnalyticsError,
    TrajectoryMetrics,
    decile_bins,
    population_summary,
    scatter_data,
    trajectory_metrics,
)
from .geo import Trajectory, od_distance
from .lts import classify_network
from .matching import MapMatcher, MatchParams, aggregate, matched_vs_raw_report
from .network import DEFAULT_EXCLUDED_HIGHWAYS, filter_bikeable
from .routing import Router, WeightScheme, optimal_for_trajectory
from .spatial import BallTree
from .synth import AgentSpec, GridCitySpec, gen_city, gen_trajectories

log = logging.getLogger(__name__)

CONFIG_ENV = "BIKESTRESS_CONFIG"
DEFAULT_SEED = 20210501

NETWORK_FILE = "network.json"
LTS_FILE = "lts.csv"
LTS_HIST_FILE = "lts_histogram.json"
TRAJ_FILE = "trajectories.csv"
CLEAN_TRAJ_FILE = "trajectories_clean.csv"
TRUTH_FILE = "ground_truth.json"
MATCH_FILE = "matched.json"
METRICS_FILE = "metrics.csv"
SCATTER_FILE = "scatter.csv"
BINS_FILE = "bins.csv"
SUMMARY_FILE = "summary.json"
REPORT_FILE = "report.txt"


def routes_file(scheme: str) -> str:
    return f"routes_{scheme}.json"


class ConfigError(ValueError):
    pass


class InputMissingError(FileNotFoundError):
    pass


@dataclass
class RunConfig:
    network: Optional[str] = None
    network_format: str = "auto"
    trajectories: Optional[str] = None
    out: str = "out"
    exclude_highways: Tuple[str, ...] = tuple(sorted(DEFAULT_EXCLUDED_HIGHWAYS))
    max_snap_m: float = 500.0
    speed_kmh: float = 15.0
    sigma_m: float = 10.0
    beta_m: float = 5.0
    radius_m: float = 50.0
    max_candidates: int = 8
    gap_s: float = 300.0
    max_speed_kmh: float = 60.0
    max_unmatched_fraction: float = 0.5
    reverse_tolerance_m: float = 20.0
    end_trim_m: float = 15.0
    max_route_excess_m: float = 1000.0
    aggregate: bool = True
    max_od_m: float = 10_000.0
    n_bins: int = 10
    bin_by: str = "od"
    score_weighting: str = "count"
    scatter_scheme: str = "length"
    seed: int = DEFAULT_SEED
    rows: int = 5
    cols: int = 5
    block_m: float = 150.0
    arterial_every: int = 2
    jitter_m: float = 10.0
    agents: int = 40
    safety_weight: float = 3.0
    noise_sigma_m: float = 5.0
    sample_spacing_m: float = 20.0

    _POSITIVE = (
        "max_snap_m", "speed_kmh", "sigma_m", "beta_m", "radius_m", "gap_s",
        "max_speed_kmh", "max_od_m", "block_m", "sample_spacing_m", "max_route_excess_m",
    )
    _CHOICES = {
        "network_format": ("auto", "osm", "json"),
        "bin_by": ("od", "network"),
        "score_weighting": ("count", "length"),
        "scatter_scheme": ("length", "time"),
    }

    def validate(self) -> "RunConfig":
        for name in self._POSITIVE:
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and value > 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be positive, got {value!r}")
        for name, choices in self._CHOICES.items():
            if getattr(self, name) not in choices:
                raise ConfigError(f"{name} must be one of {choices}, got {getattr(self, name)!r}")
        if self.n_bins < 1:
            raise ConfigError("n_bins must be at least 1")
        if self.max_candidates < 1:
            raise ConfigError("max_candidates must be at least 1")
        if self.agents < 0:
            raise ConfigError("agents must be non-negative")
        try:
            self.match_params()
            self.city_spec()
            self.agent_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def match_params(self) -> MatchParams:
        return MatchParams(
            sigma_m=self.sigma_m, beta_m=self.beta_m, radius_m=self.radius_m,
            max_candidates=self.max_candidates, gap_s=self.gap_s,
            max_speed_kmh=self.max_speed_kmh,
            max_unmatched_fraction=self.max_unmatched_fraction,
            reverse_tolerance_m=self.reverse_tolerance_m, end_trim_m=self.end_trim_m,
            max_route_excess_m=self.max_route_excess_m,
        )

    def city_spec(self) -> GridCitySpec:
        return GridCitySpec(
            rows=self.rows, cols=self.cols, block_m=self.block_m,
            arterial_every=self.arterial_every, seed=self.seed, jitter_m=self.jitter_m,
        )

    def agent_spec(self) -> AgentSpec:
        return AgentSpec(
            n_agents=self.agents, safety_weight=self.safety_weight,
            gps_noise_sigma_m=self.noise_sigma_m, sample_spacing_m=self.sample_spacing_m,
        )

    @classmethod
    def keys(cls) -> List[str]:
        return [f.name for f in fields(cls)]


def _coerce(name: str, raw, default):
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        if isinstance(raw, str):
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        if isinstance(raw, list):
            return tuple(str(v) for v in raw)
        raise ConfigError(f"{name}: expected a list")
    try:
        if isinstance(default, int):
            if isinstance(raw, float) and raw != int(raw):
                raise ValueError
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot interpret {raw!r}") from None
    return None if raw is None else str(raw)


def parse_config_text(text: str) -> Dict[str, object]:
    """Config files are a JSON object or ``key = value`` lines (``#`` comments)."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config JSON must be an object")
        return doc
    out: Dict[str, object] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def build_config(file_values: Dict[str, object], overrides: Dict[str, object]) -> RunConfig:
    defaults = RunConfig()
    values = asdict(defaults)
    known = set(RunConfig.keys())
    for source in (file_values, overrides):
        for key, raw in source.items():
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce(key, raw, getattr(defaults, key))
    return RunConfig(**values).validate()


def load_config_file(path: Optional[str]) -> Dict[str, object]:
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
        if path is None:
            return {}
    if not Path(path).is_file():
        raise InputMissingError(f"config file not found: {path}")
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def _need(path: Optional[str | Path], what: str) -> Path:
    if path is None:
        raise ConfigError(f"no {what} given")
    p = Path(path)
    if not p.is_file():
        raise InputMissingError(f"{what} not found: {p}")
    return p


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def run_ingest(cfg: RunConfig, network_path: Optional[str] = None) -> dict:
    src = _need(network_path or cfg.network, "network source")
    raw = art.load_network(src, cfg.network_format)
    net, mapping = filter_bikeable(raw, cfg.exclude_highways)
    out = Path(cfg.out)
    art.write_network(out / NETWORK_FILE, net)
    summary = {
        "format_version": art.FORMAT_VERSION,
        "source": src.name,
        "raw_nodes": raw.num_nodes,
        "raw_edges": raw.num_edges,
        "nodes": net.num_nodes,
        "edges": net.num_edges,
        "excluded_highways": list(cfg.exclude_highways),
        "dropped_nodes": raw.num_nodes - len(mapping),
    }
    art.write_json(out / "ingest.json", summary)
    return summary


def _stage_network(cfg: RunConfig, network_path=None):
    """Explicit path, else the configured network, else the ingested one."""
    if network_path is not None:
        return art.load_network(_need(network_path, "network"), "auto")
    if cfg.network is not None:
        return art.load_network(_need(cfg.network, "network"), cfg.network_format)
    return art.load_network(_need(Path(cfg.out) / NETWORK_FILE, "network"), "json")


def run_lts(cfg: RunConfig, network_path: Optional[str] = None) -> dict:
    net = _stage_network(cfg, network_path)
    result = classify_network(net)
    out = Path(cfg.out)
    art.write_csv(out / LTS_FILE, art.LTS_HEADER, art.lts_rows(net, result))
    hist = {str(k): v for k, v in result.histogram().items()}
    art.write_json(out / LTS_HIST_FILE, {"format_version": art.FORMAT_VERSION, "histogram": hist})
    return hist


def _load_net_and_trajs(cfg: RunConfig, network_path, traj_path):
    net = _stage_network(cfg, network_path)
    trajs = art.load_trajectories(_need(traj_path or cfg.trajectories, "trajectory CSV"))
    return net, trajs


def run_route(cfg: RunConfig, scheme: str, network_path=None, traj_path=None) -> dict:
    net, trajs = _load_net_and_trajs(cfg, network_path, traj_path)
    ws = WeightScheme.length() if scheme == "length" else WeightScheme.time(cfg.speed_kmh)
    router = Router(net, ws)
    tree = BallTree.from_network(net) if net.num_nodes else None
    routes = []
    for t in trajs:
        if tree is None:
            from .routing import SnappedRoute

            routes.append(SnappedRoute(t.traj_id, t.user_id, ws, "unsnappable", reason="empty network"))
            continue
        routes.append(optimal_for_trajectory(router, tree, t, cfg.max_snap_m))
    doc = art.routes_doc(routes, ws, cfg.max_snap_m)
    art.write_json(Path(cfg.out) / routes_file(scheme), doc)
    counts: Dict[str, int] = {}
    for r in routes:
        counts[r.status] = counts.get(r.status, 0) + 1
    return counts


def clean_trajectories(trajs: List[Trajectory], params: MatchParams) -> List[Trajectory]:
    """Aggregation phase per input trajectory; a single surviving piece keeps its id."""
    out = []
    for t in trajs:
        pieces = aggregate(t.points, t.user_id, params.gap_s, params.max_speed_kmh)
        if len(pieces) == 1:
            out.append(Trajectory(t.user_id, t.traj_id, pieces[0].points))
        else:
            out.extend(
                Trajectory(t.user_id, f"{t.traj_id}-{k}", p.points) for k, p in enumerate(pieces)
            )
    return out


def run_match(cfg: RunConfig, network_path=None, traj_path=None) -> dict:
    net, trajs = _load_net_and_trajs(cfg, network_path, traj_path)
    params = cfg.match_params()
    out = Path(cfg.out)
    n_input = len(trajs)
    if cfg.aggregate:
        trajs = clean_trajectories(trajs, params)
        art.write_trajectories(out / CLEAN_TRAJ_FILE, trajs)
    matches = []
    counts = {"ok": 0, "failed": 0}
    matcher = MapMatcher(net, BallTree.from_network(net), params) if net.num_nodes else None
    for t in trajs:
        if matcher is None:
            from .matching import MatchResult

            result = MatchResult(t.traj_id, t.user_id, "failed", reason="empty network", n_points=len(t))
        else:
            result = matcher.match(t)
        quality = matched_vs_raw_report(result.path, t).to_dict() if result.ok else None
        matches.append(art.match_to_dict(result, quality))
        counts[result.status] += 1
    doc = {
        "format_version": art.FORMAT_VERSION,
        "params": asdict(params),
        "input_trajectories": n_input,
        "matches": matches,
    }
    art.write_json(out / MATCH_FILE, doc)
    return counts


def _failed_metrics(t: Trajectory, flag: str) -> TrajectoryMetrics:
    nan = math.nan
    return TrajectoryMetrics(
        t.traj_id, t.user_id, nan, nan, nan, nan, nan, od_distance(t), nan, nan, None, flag
    )


def run_analyze(
    cfg: RunConfig,
    network_path=None,
    lts_path=None,
    matched_path=None,
    routes_length_path=None,
    routes_time_path=None,
    traj_path=None,
) -> dict:
    out = Path(cfg.out)
    net = _stage_network(cfg, network_path)
    lts_map = art.load_lts(_need(lts_path or out / LTS_FILE, "LTS table"), net)
    matches = art.load_matches(_need(matched_path or out / MATCH_FILE, "match results"))
    r_len = art.load_routes(_need(routes_length_path or out / routes_file("length"), "length routes"))
    r_time = art.load_routes(_need(routes_time_path or out / routes_file("time"), "time routes"))
    default_traj = out / CLEAN_TRAJ_FILE if (out / CLEAN_TRAJ_FILE).is_file() else cfg.trajectories
    trajs = art.load_trajectories(_need(traj_path or default_traj, "trajectory CSV"))

    exclusions = {"match_failed": 0, "unsnappable": 0, "disconnected": 0, "degenerate": 0, "missing": 0}
    metrics: List[TrajectoryMetrics] = []
    for t in trajs:
        m = matches.get(t.traj_id)
        a, b = r_len.get(t.traj_id), r_time.get(t.traj_id)
        if m is None or a is None or b is None:
            exclusions["missing"] += 1
            metrics.append(_failed_metrics(t, "missing"))
            continue
        if not m.ok:
            exclusions["match_failed"] += 1
            metrics.append(_failed_metrics(t, "match_failed"))
            continue
        bad = next((r["status"] for r in (a, b) if r["status"] != "ok"), None)
        if bad is not None:
            exclusions[bad] += 1
            metrics.append(_failed_metrics(t, bad))
            continue
        tm = trajectory_metrics(
            m.path, art.route_path(a), art.route_path(b), lts_map, t, net,
            length_weighted=cfg.score_weighting == "length",
        )
        if not tm.valid:
            exclusions["degenerate"] += 1
        metrics.append(tm)

    analyzable = [m for m in metrics if m.valid and not math.isnan(m.observed_lts)]
    art.write_csv(out / METRICS_FILE, METRIC_FIELDS, ([getattr(m, f) for f in METRIC_FIELDS] for m in metrics))

    rows, below = scatter_data(analyzable, use_time=cfg.scatter_scheme == "time")
    art.write_csv(
        out / SCATTER_FILE,
        ("optimal_lts", "observed_lts", "traj_id"),
        ((r.optimal_lts, r.observed_lts, r.traj_id) for r in rows),
    )

    bins_error = None
    try:
        bins = decile_bins(analyzable, cfg.max_od_m, cfg.n_bins, by_network_length=cfg.bin_by == "network")
    except AnalyticsError as exc:
        bins, bins_error = [], str(exc)
    art.write_csv(out / BINS_FILE, BIN_FIELDS, ([getattr(b, f) for f in BIN_FIELDS] for b in bins))

    summary = {
        "format_version": art.FORMAT_VERSION,
        "n_trajectories": len(trajs),
        "n_analyzed": len(analyzable),
        "exclusions": exclusions,
        "short_detour_flagged": sum(1 for m in analyzable if "short_detour" in m.flags),
        "below_diagonal_fraction": below,
        "scatter_scheme": cfg.scatter_scheme,
        "score_weighting": cfg.score_weighting,
        "bin_by": cfg.bin_by,
        "max_od_m": cfg.max_od_m,
        "n_bins": len(bins),
        "bins_error": bins_error,
        "medians": population_summary(analyzable) if analyzable else None,
        "lts_histogram": {str(k): sum(1 for s in lts_map if s == k) for k in (1, 2, 3, 4)},
    }
    art.write_json(out / SUMMARY_FILE, summary)
    return summary


def run_synth(cfg: RunConfig) -> dict:
    net = gen_city(cfg.city_spec())
    trips = gen_trajectories(net, cfg.agent_spec(), seed=cfg.seed)
    out = Path(cfg.out)
    art.write_network(out / NETWORK_FILE, net)
    art.write_trajectories(out / TRAJ_FILE, trips.trajectories)
    art.write_json(
        out / TRUTH_FILE,
        {
            "format_version": art.FORMAT_VERSION,
            "seed": cfg.seed,
            "skipped_disconnected": trips.skipped_disconnected,
            "paths": trips.ground_truth,
        },
    )
    return {"nodes": net.num_nodes, "edges": net.num_edges, "trajectories": len(trips.trajectories)}


def run_pipeline(cfg: RunConfig, synth: bool = False) -> dict:
    """ingest -> filter -> lts -> match (incl. aggregation) -> snap + route -> analyze."""
    out = Path(cfg.out)
    if synth:
        run_synth(cfg)
        network_src = str(out / NETWORK_FILE)
        traj_src = str(out / TRAJ_FILE)
        cfg_net = RunConfig(**{**asdict(cfg), "network_format": "json"})
    else:
        network_src = cfg.network
        traj_src = cfg.trajectories
        cfg_net = cfg
    _need(traj_src, "trajectory CSV")
    run_ingest(cfg_net, network_src)
    net_path = out / NETWORK_FILE
    run_lts(cfg, net_path)
    run_match(cfg, net_path, traj_src)
    routed_traj = out / CLEAN_TRAJ_FILE if cfg.aggregate else traj_src
    run_route(cfg, "length", net_path, routed_traj)
    run_route(cfg, "time", net_path, routed_traj)
    summary = run_analyze(cfg, network_path=net_path, traj_path=routed_traj)
    write_report(out, summary)
    return summary


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

def _fmt(value, digits: int = 3) -> str:
    if value is None or value == "":
        return "-"
    try:
        v = float(value)
    except (TypeError, ValueError):
        return str(value)
    if math.isnan(v):
        return "-"
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return f"{v:.{digits}f}"


def _table(header, rows) -> str:
    cells = [list(map(str, header))] + [list(map(str, r)) for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = []
    for k, r in enumerate(cells):
        lines.append("  ".join(c.rjust(w) for c, w in zip(r, widths)))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def render_report(summary: dict, bins: List[dict]) -> str:
    parts = ["Cyclability deviation report", "=" * 28, ""]
    med = summary.get("medians") or {}
    parts.append(
        _table(
            ("quantity", "median"),
            [
                ("observed length (m)", _fmt(med.get("median_observed_length_m"), 2)),
                ("optimal length (m)", _fmt(med.get("median_optimal_length_m"), 2)),
                ("detour ratio", _fmt(med.get("median_detour_ratio"))),
                ("observed LTS", _fmt(med.get("median_observed_lts"))),
                ("optimal LTS", _fmt(med.get("median_optimal_lts"))),
            ],
        )
    )
    parts += ["", f"below-diagonal fraction: {_fmt(summary.get('below_diagonal_fraction'))}", ""]
    if bins:
        parts.append(
            _table(
                ("bin", "od_lo_m", "od_hi_m", "n", "obs_med", "opt_med", "obs_var", "opt_var"),
                [
                    (
                        b["bin_index"], _fmt(b["od_lo_m"], 1), _fmt(b["od_hi_m"], 1), b["n"],
                        _fmt(b["observed_median"]), _fmt(b["optimal_median"]),
                        _fmt(b["observed_variance"]), _fmt(b["optimal_variance"]),
                    )
                    for b in bins
                ],
            )
        )
    else:
        parts.append(f"no distance bins: {summary.get('bins_error')}")
    parts += ["", "Data quality", "-" * 12]
    rows = [("trajectories", summary.get("n_trajectories")), ("analyzed", summary.get("n_analyzed"))]
    rows += sorted((k, v) for k, v in (summary.get("exclusions") or {}).items())
    rows.append(("short detour flagged", summary.get("short_detour_flagged")))
    parts.append(_table(("category", "count"), rows))
    return "\n".join(parts) + "\n"


def write_report(out: Path, summary: Optional[dict] = None) -> str:
    out = Path(out)
    if summary is None:
        summary = art.read_json(_need(out / SUMMARY_FILE, "summary"))
    bins = art.read_csv(_need(out / BINS_FILE, "bins table"))
    text = render_report(summary, bins)
    art.atomic_write(out / REPORT_FILE, text)
    return text
