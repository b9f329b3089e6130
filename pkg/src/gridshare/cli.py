"""Command-line entry points: ingest, train, eval, report.

Every command exits 0 on success; failures print one JSON error record
to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config
from .demand import aggregate, load_artifact, save_artifact
from .env import Environment, write_trace
from .errors import ConfigurationError, GridshareError, IngestError
from .features import StateConfig, state_dim
from .grid import build_grid, load_static_features
from .report import format_table, write_report
from .train import HISTORY_FIELDS, greedy_episode, train
from .trips import read_trips

log = logging.getLogger(__name__)

MALFORMED_ROW_LIMIT = 0.01  # abort ingest above this malformed fraction


def _write_json_atomic(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def cmd_ingest(args) -> int:
    try:
        bbox = tuple(float(x) for x in args.bbox.split(","))
    except ValueError as exc:
        raise ConfigurationError(f"bbox must be four comma-separated numbers: {exc}")
    if len(bbox) != 4:
        raise ConfigurationError("bbox must be lat_min,lat_max,lon_min,lon_max")
    grid = build_grid(bbox, args.cell_km)
    if args.static:
        load_static_features(args.static, grid)

    trips, parse_stats = read_trips(args.trips)
    if parse_stats.rows_read > 0:
        bad_fraction = parse_stats.rows_malformed / parse_stats.rows_read
        if bad_fraction > MALFORMED_ROW_LIMIT:
            raise IngestError(
                f"{parse_stats.rows_malformed} of {parse_stats.rows_read} rows "
                f"malformed ({100 * bad_fraction:.2f}% > {100 * MALFORMED_ROW_LIMIT:.0f}% limit)")
    series, agg_stats = aggregate(trips, grid)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_artifact(out, series, grid)
    report = {
        "rows_read": parse_stats.rows_read,
        "rows_malformed": parse_stats.rows_malformed,
        "trips_out_of_area": agg_stats.trips_out_of_area,
        "trips_out_of_window": agg_stats.trips_out_of_window,
        "trips_kept": agg_stats.trips_kept,
        "intervals": series.n_intervals,
        "regions": grid.n_regions,
        "grid_rows": grid.rows,
        "grid_cols": grid.cols,
    }
    _write_json_atomic(out.with_name(out.name + ".report.json"), report)
    print(json.dumps(report))
    return 0


def _checkpoint_meta(cfg: RunConfig, dims: int) -> dict:
    return {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "state_dim": dims,
        "env": dataclasses.asdict(cfg.env),
        "state": dataclasses.asdict(cfg.state),
        "ablations": dataclasses.asdict(cfg.ablations),
    }


def cmd_train(args) -> int:
    overrides = {
        "artifact": args.artifact,
        "out_dir": args.out,
        "mode": args.mode,
        "seed": args.seed,
        "train.epochs": args.epochs,
        "train.episodes_per_epoch": args.episodes_per_epoch,
        "ablations.no_id": True if args.no_id else None,
        "ablations.no_splitmerge": True if args.no_splitmerge else None,
        "ablations.no_hier": True if args.no_hier else None,
        "ablations.no_arp": True if args.no_arp else None,
    }
    if args.no_resample:
        overrides["train.resample"] = False
    cfg = load_run_config(args.config, overrides)
    if not cfg.artifact:
        raise ConfigurationError("no demand artifact given (--artifact or config)")
    if not cfg.out_dir:
        raise ConfigurationError("no output directory given (--out or config)")

    series, grid = load_artifact(cfg.artifact)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.yaml", "w") as fh:
        import yaml
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)

    dims = state_dim(grid.n_regions, cfg.state)
    meta = _checkpoint_meta(cfg, dims)
    metrics_path = out_dir / "metrics.csv"
    metrics_file = open(metrics_path, "w", newline="")
    writer = csv.DictWriter(metrics_file, fieldnames=HISTORY_FIELDS)
    writer.writeheader()

    def on_epoch(epoch, row, tree, ctrl_state):
        writer.writerow(row)
        metrics_file.flush()
        save_checkpoint(out_dir / "checkpoint.npz", tree, ctrl_state, meta)

    started = time.time()
    try:
        result = train(grid, series, cfg.env, cfg.train, cfg.controller, cfg.state,
                       mode=cfg.mode, ablations=cfg.ablations, on_epoch=on_epoch)
    finally:
        metrics_file.close()

    save_checkpoint(out_dir / "checkpoint.npz", result.tree,
                    result.controller_state, meta)
    with open(out_dir / "events.jsonl", "w") as fh:
        for event in result.controller_state.events:
            fh.write(json.dumps(event) + "\n")
    manifest = {
        "build": __version__,
        "config": cfg.to_dict(),
        "started_at": started,
        "duration_s": time.time() - started,
        "episodes": result.history[-1]["episodes"] if result.history else 0,
        "final_metrics": result.final_eval,
    }
    _write_json_atomic(out_dir / "manifest.json", manifest)
    print(json.dumps({"out_dir": str(out_dir), "final": result.final_eval}))
    return 0


def cmd_eval(args) -> int:
    series, grid = load_artifact(args.artifact)
    tree, _, meta = load_checkpoint(args.checkpoint)
    if not meta:
        raise ConfigurationError("checkpoint carries no run metadata")
    state_cfg = StateConfig(**meta["state"])
    from .env import EnvConfig
    env_cfg = EnvConfig(**meta["env"])
    dims = state_dim(grid.n_regions, state_cfg)
    if tree.n_agents != grid.n_regions:
        raise ConfigurationError(
            f"checkpoint has {tree.n_agents} agents but the artifact grid has "
            f"{grid.n_regions} regions")
    if meta["state_dim"] != dims:
        raise ConfigurationError("checkpoint state layout does not match the artifact")

    env = Environment(grid, series, env_cfg, state_cfg)
    evaluation = greedy_episode(tree, env)
    outcomes = evaluation.pop("outcomes")
    if args.trace:
        write_trace(outcomes, args.trace)
    if args.out:
        _write_json_atomic(Path(args.out), evaluation)
    print(json.dumps(evaluation))
    return 0


def cmd_report(args) -> int:
    table_path = write_report(args.runs, args.out)
    print(format_table(args.runs))
    print(f"table written to {table_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridshare",
        description="Grouped multi-agent RL for grid mobility rebalancing.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="aggregate a trip file into a demand artifact")
    p_ingest.add_argument("--trips", required=True, help="delimited trip file")
    p_ingest.add_argument("--bbox", required=True,
                          help="lat_min,lat_max,lon_min,lon_max in degrees")
    p_ingest.add_argument("--cell-km", type=float, default=1.0)
    p_ingest.add_argument("--static", help="per-region static feature file")
    p_ingest.add_argument("--out", required=True, help="output artifact path (.npz)")
    p_ingest.set_defaults(func=cmd_ingest)

    p_train = sub.add_parser("train", help="train a scheme on an ingested artifact")
    p_train.add_argument("--config", help="YAML run configuration")
    p_train.add_argument("--artifact", help="demand artifact from `ingest`")
    p_train.add_argument("--out", help="run output directory")
    p_train.add_argument("--mode", choices=["hagps", "no-share", "share-all",
                                            "static-groups"])
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--episodes-per-epoch", type=int)
    p_train.add_argument("--no-id", action="store_true")
    p_train.add_argument("--no-splitmerge", action="store_true")
    p_train.add_argument("--no-hier", action="store_true")
    p_train.add_argument("--no-arp", action="store_true")
    p_train.add_argument("--no-resample", action="store_true",
                         help="replay the historical series without noise")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="deterministic evaluation of a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--artifact", required=True)
    p_eval.add_argument("--out", help="write the metrics record to this JSON file")
    p_eval.add_argument("--trace", help="write the per-step episode trace here")
    p_eval.set_defaults(func=cmd_eval)

    p_report = sub.add_parser("report", help="tabulate finished runs")
    p_report.add_argument("--runs", nargs="+", required=True)
    p_report.add_argument("--out", required=True)
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GridshareError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    except Exception as exc:  # unexpected: still emit a machine-readable record
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        raise


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
