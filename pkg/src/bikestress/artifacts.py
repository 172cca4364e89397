"""
On-disk stage artifacts: atomic writes, stable JSON, RFC 4180 CSV.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from .geo import Trajectory, read_trajectories_csv, trajectories_to_csv_text
from .lts import LtsResult
from .matching import CandidateProjection, MatchedPath, MatchResult
from .network import StreetNetwork, dump_edgelist_json, load_edgelist_json, parse_osm_xml
from .routing import RoutePath, SnappedRoute, WeightScheme

FORMAT_VERSION = 1


class ArtifactError(ValueError):
    """A stage artifact is missing required content or has the wrong shape."""


def atomic_write(path: Path | str, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _clean(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def json_text(doc: Any) -> str:
    return json.dumps(_clean(doc), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path: Path | str, doc: Any) -> None:
    atomic_write(path, json_text(doc))


def read_json(path: Path | str) -> Any:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"{path}: invalid JSON ({exc})") from None


def csv_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if not math.isfinite(value) else repr(value)
    return str(value)


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([csv_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path: Path | str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    atomic_write(path, csv_text(header, rows))


def read_csv(path: Path | str) -> List[Dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# -- networks -----------------------------------------------------------------

def load_network(path: Path | str, fmt: str = "auto") -> StreetNetwork:
    path = Path(path)
    if fmt == "auto":
        fmt = "json" if path.suffix.lower() == ".json" else "osm"
    with open(path, "rb") as fh:
        if fmt == "json":
            return load_edgelist_json(fh)
        if fmt == "osm":
            return parse_osm_xml(fh)
    raise ValueError(f"unknown network format {fmt!r}")


def write_network(path: Path | str, net: StreetNetwork) -> None:
    atomic_write(path, dump_edgelist_json(net))


# -- trajectories -------------------------------------------------------------

def load_trajectories(path: Path | str) -> List[Trajectory]:
    with open(path, encoding="utf-8", newline="") as fh:
        return read_trajectories_csv(fh)


def write_trajectories(path: Path | str, trajectories: Iterable[Trajectory]) -> None:
    atomic_write(path, trajectories_to_csv_text(trajectories))


# -- LTS ------------------------------------------------------------------------

LTS_HEADER = ("edge_id", "from", "to", "lts", "rule_id")


def lts_rows(net: StreetNetwork, result: LtsResult):
    for tr in result.traces:
        e = net.edges[tr.edge]
        yield (tr.edge, net.node_ids[e.source], net.node_ids[e.target], tr.score, tr.rule_id)


def load_lts(path: Path | str, net: StreetNetwork) -> List[int]:
    rows = read_csv(path)
    if len(rows) != net.num_edges:
        raise ArtifactError(f"{path}: {len(rows)} LTS rows for {net.num_edges} edges")
    scores = [0] * net.num_edges
    for row in rows:
        try:
            scores[int(row["edge_id"])] = int(row["lts"])
        except (KeyError, ValueError, IndexError):
            raise ArtifactError(f"{path}: malformed row {row}") from None
    return scores


# -- routes ---------------------------------------------------------------------

def routes_doc(routes: Sequence[SnappedRoute], scheme: WeightScheme, max_snap_m: float) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "scheme": scheme.kind.value,
        "speed_kmh": scheme.speed_kmh,
        "max_snap_m": max_snap_m,
        "routes": [r.to_dict() for r in routes],
    }


def load_routes(path: Path | str) -> Dict[str, dict]:
    doc = read_json(path)
    try:
        return {r["traj_id"]: r for r in doc["routes"]}
    except (KeyError, TypeError):
        raise ArtifactError(f"{path}: not a routes document") from None


def route_path(item: dict) -> Optional[RoutePath]:
    if item.get("status") != "ok":
        return None
    return RoutePath(list(item["nodes"]), list(item["edges"]), item["weight"], item["length_m"])


# -- matches --------------------------------------------------------------------

def match_to_dict(result: MatchResult, quality: Optional[dict] = None) -> dict:
    out = {
        "traj_id": result.traj_id,
        "user_id": result.user_id,
        "status": result.status,
        "reason": result.reason,
        "n_points": result.n_points,
        "n_unmatched": result.n_unmatched,
    }
    if result.path is not None:
        p = result.path
        out["edges"] = p.edges
        out["matched_length_m"] = p.matched_length_m
        out["confidence"] = p.confidence
        out["assignments"] = [
            {
                "point_index": c.point_index,
                "edge": c.edge,
                "offset_m": c.offset_m,
                "perp_dist_m": c.perp_dist_m,
                "emission_logp": c.emission_logp,
            }
            for _, c in sorted(p.assignments.items())
        ]
        out["quality"] = quality
    return out


def match_from_dict(item: dict) -> MatchResult:
    result = MatchResult(
        item["traj_id"], item["user_id"], item["status"],
        reason=item.get("reason"), n_points=item.get("n_points", 0),
        n_unmatched=item.get("n_unmatched", 0),
    )
    if item["status"] == "ok":
        assignments = {
            a["point_index"]: CandidateProjection(
                a["point_index"], a["edge"], a["offset_m"], a["perp_dist_m"], a["emission_logp"]
            )
            for a in item["assignments"]
        }
        result.path = MatchedPath(
            item["traj_id"], list(item["edges"]), assignments, item["matched_length_m"], item["confidence"]
        )
    return result


def load_matches(path: Path | str) -> Dict[str, MatchResult]:
    doc = read_json(path)
    try:
        return {m["traj_id"]: match_from_dict(m) for m in doc["matches"]}
    except (KeyError, TypeError):
        raise ArtifactError(f"{path}: not a matches document") from None
