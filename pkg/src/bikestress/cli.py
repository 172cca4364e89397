"""
Command-line entry point: ``bikestress <subcommand> [options]``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional

from . import stages
from .artifacts import ArtifactError
from .geo import TrajectoryFormatError
from .network import NetworkError
from .stages import CONFIG_ENV, ConfigError, InputMissingError, RunConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_MALFORMED = 4
EXIT_CONFIG = 5
EXIT_INTERNAL = 70

EPILOG = f"""\
exit codes:
  {EXIT_OK}   success
  {EXIT_USAGE}   usage error (unknown flag, bad flag value)
  {EXIT_MISSING}   missing input file
  {EXIT_MALFORMED}   malformed input file (CSV, OSM XML, edge-list JSON, artifact)
  {EXIT_CONFIG}   invalid configuration or threshold violation
  {EXIT_INTERNAL}  unexpected internal error

On failure a JSON object {{"error": ..., "kind": ..., "exit_code": ...}} is
written to stderr.

configuration:
  --config FILE (or ${CONFIG_ENV}) names an optional file holding either a
  JSON object or "key = value" lines; keys are the RunConfig field names
  (e.g. sigma_m, max_snap_m, seed). Command-line flags override the file.
  Unknown keys are rejected.
"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error(message, "usage", EXIT_USAGE)
        sys.exit(EXIT_USAGE)


def _emit_error(message: str, kind: str, code: int) -> None:
    sys.stderr.write(json.dumps({"error": message, "kind": kind, "exit_code": code}, sort_keys=True) + "\n")


# flag name -> (config key, type, help)
_FLAGS: Dict[str, Dict[str, tuple]] = {
    "io": {
        "--network": ("network", str, "street network: OSM XML or edge-list JSON"),
        "--network-format": ("network_format", str, "auto | osm | json"),
        "--trajectories": ("trajectories", str, "trajectory CSV (user_id,traj_id,timestamp,lat,lon)"),
    },
    "filter": {
        "--exclude-highways": ("exclude_highways", str, "comma-separated highway classes to drop"),
    },
    "route": {
        "--speed-kmh": ("speed_kmh", float, "bike cruising speed for the time scheme (default 15)"),
        "--max-snap-m": ("max_snap_m", float, "max origin/destination snap distance (default 500)"),
    },
    "match": {
        "--sigma-m": ("sigma_m", float, "GPS noise sigma for emissions (default 10)"),
        "--beta-m": ("beta_m", float, "transition scale (default 5)"),
        "--radius-m": ("radius_m", float, "candidate search radius (default 50)"),
        "--max-candidates": ("max_candidates", int, "candidates per fix (default 8)"),
        "--gap-s": ("gap_s", float, "split trajectories at gaps longer than this (default 300)"),
        "--max-speed-kmh": ("max_speed_kmh", float, "drop fixes implying faster travel (default 60)"),
        "--max-unmatched-fraction": ("max_unmatched_fraction", float, "fail a trace above this (default 0.5)"),
        "--end-trim-m": ("end_trim_m", float, "drop end edges covered less than this (default 15)"),
    },
    "analyze": {
        "--max-od-m": ("max_od_m", float, "OD-distance cutoff for binning (default 10000)"),
        "--n-bins": ("n_bins", int, "number of equal-count distance bins (default 10)"),
        "--bin-by": ("bin_by", str, "od | network"),
        "--score-weighting": ("score_weighting", str, "count | length"),
        "--scatter-scheme": ("scatter_scheme", str, "length | time"),
    },
    "synth": {
        "--rows": ("rows", int, "grid rows"),
        "--cols": ("cols", int, "grid columns"),
        "--block-m": ("block_m", float, "block edge length"),
        "--arterial-every": ("arterial_every", int, "every k-th row/column is an arterial"),
        "--jitter-m": ("jitter_m", float, "residential intersection jitter"),
        "--agents": ("agents", int, "number of synthetic riders"),
        "--safety-weight": ("safety_weight", float, "lambda in length x (1 + lambda (LTS - 1))"),
        "--noise-sigma-m": ("noise_sigma_m", float, "GPS noise added to synthetic traces"),
        "--sample-spacing-m": ("sample_spacing_m", float, "distance between synthetic fixes"),
    },
}

_STAGE_GROUPS = {
    "ingest": ("io", "filter"),
    "lts": ("io",),
    "route": ("io", "route"),
    "match": ("io", "match"),
    "analyze": ("io", "analyze"),
    "report": (),
    "synth": ("synth",),
    "pipeline": ("io", "filter", "route", "match", "analyze", "synth"),
}

_HELP = {
    "ingest": "parse a network, drop non-bikeable streets, write network.json",
    "lts": "classify every edge, write lts.csv and lts_histogram.json",
    "route": "shortest path per trajectory, write routes_<scheme>.json",
    "match": "clean and map-match trajectories, write matched.json",
    "analyze": "per-trajectory metrics, scatter, distance bins, summary.json",
    "report": "render report.txt from summary.json and bins.csv",
    "synth": "generate a grid city, trajectories and ground truth",
    "pipeline": "run every stage end to end",
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="bikestress",
        description="Compare cyclists' chosen routes with shortest paths by traffic stress.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, groups in _STAGE_GROUPS.items():
        p = sub.add_parser(
            name, help=_HELP[name], description=_HELP[name], epilog=EPILOG,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        p.add_argument("--out", help="output directory (default ./out)")
        p.add_argument("--config", help=f"config file (default: ${CONFIG_ENV})")
        p.add_argument("--seed", type=int, help=f"random seed (default {stages.DEFAULT_SEED})")
        for group in groups:
            g = p.add_argument_group(group)
            for flag, (dest, typ, text) in _FLAGS[group].items():
                g.add_argument(flag, dest=dest, type=typ, default=None, help=text)
        if name == "route":
            p.add_argument("--scheme", choices=("length", "time"), default="length")
        if name == "match":
            p.add_argument("--no-aggregate", dest="aggregate", action="store_false", default=None,
                           help="match trajectories as given, without cleaning or gap splitting")
        if name == "pipeline":
            src = p.add_mutually_exclusive_group()
            src.add_argument("--synth", action="store_true", help="generate a synthetic city first")
            src.add_argument("--demo", action="store_true", help="use the bundled 5x5 demo fixture")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, object]:
    keys = set(RunConfig.keys())
    return {k: v for k, v in vars(args).items() if k in keys and v is not None}


def demo_paths() -> Dict[str, str]:
    base = resources.files("bikestress") / "data"
    return {"network": str(base / "demo_network.json"), "trajectories": str(base / "demo_trajectories.csv")}


def run(argv: Optional[List[str]] = None) -> dict:
    """Parse ``argv`` and run one subcommand; raises on failure."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    overrides = _overrides(args)
    if getattr(args, "demo", False):
        overrides = {**demo_paths(), "network_format": "json", **overrides}
    cfg = stages.build_config(stages.load_config_file(args.config), overrides)
    Path(cfg.out).mkdir(parents=True, exist_ok=True)

    cmd = args.command
    if cmd == "ingest":
        result = stages.run_ingest(cfg)
    elif cmd == "lts":
        result = {"histogram": stages.run_lts(cfg)}
    elif cmd == "route":
        result = {"scheme": args.scheme, "status": stages.run_route(cfg, args.scheme)}
    elif cmd == "match":
        result = stages.run_match(cfg)
    elif cmd == "analyze":
        result = stages.run_analyze(cfg)
    elif cmd == "report":
        text = stages.write_report(Path(cfg.out))
        sys.stdout.write(text)
        return {"report": str(Path(cfg.out) / stages.REPORT_FILE)}
    elif cmd == "synth":
        result = {"seed": cfg.seed, **stages.run_synth(cfg)}
    else:
        result = stages.run_pipeline(cfg, synth=args.synth)
        result = {
            "seed": cfg.seed,
            "n_analyzed": result["n_analyzed"],
            "below_diagonal_fraction": result["below_diagonal_fraction"],
            "summary": str(Path(cfg.out) / stages.SUMMARY_FILE),
        }
    return result


def main(argv: Optional[List[str]] = None) -> int:
    try:
        result = run(argv)
    except SystemExit as exc:  # argparse --help / usage errors
        return int(exc.code or 0)
    except InputMissingError as exc:
        _emit_error(str(exc), "missing_input", EXIT_MISSING)
        return EXIT_MISSING
    except FileNotFoundError as exc:
        _emit_error(f"{exc.strerror}: {exc.filename}", "missing_input", EXIT_MISSING)
        return EXIT_MISSING
    except ConfigError as exc:
        _emit_error(str(exc), "config", EXIT_CONFIG)
        return EXIT_CONFIG
    except TrajectoryFormatError as exc:
        _emit_error(str(exc), "malformed_trajectories", EXIT_MALFORMED)
        return EXIT_MALFORMED
    except NetworkError as exc:
        _emit_error(str(exc), "malformed_network", EXIT_MALFORMED)
        return EXIT_MALFORMED
    except ArtifactError as exc:
        _emit_error(str(exc), "malformed_artifact", EXIT_MALFORMED)
        return EXIT_MALFORMED
    except ValueError as exc:
        _emit_error(str(exc), "config", EXIT_CONFIG)
        return EXIT_CONFIG
    except Exception as exc:  # pragma: no cover - last resort, still machine readable
        _emit_error(f"{type(exc).__name__}: {exc}", "internal", EXIT_INTERNAL)
        return EXIT_INTERNAL
    sys.stdout.write(json.dumps(result, sort_keys=True) + "\n")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
