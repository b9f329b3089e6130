"""Cross-run comparison tables and training-curve exports."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .errors import ConfigurationError

# Presentation order for the comparison table: external baselines first,
# then ablations, then the full system.
METHOD_ORDER = (
    "no-share",
    "share-all",
    "static-groups",
    "hagps-no-id",
    "hagps-no-splitmerge",
    "hagps-no-hier",
    "hagps-no-arp",
    "hagps",
)


def method_label(mode: str, ablations: dict) -> str:
    if mode != "hagps":
        return mode
    flags = [name for name in ("no_id", "no_splitmerge", "no_hier", "no_arp")
             if ablations.get(name)]
    if not flags:
        return "hagps"
    return "hagps-" + "-".join(f.replace("_", "-") for f in flags)


def _order_key(label: str):
    try:
        return (METHOD_ORDER.index(label), label)
    except ValueError:
        return (len(METHOD_ORDER), label)


def read_run(run_dir) -> dict:
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigurationError(f"{run_dir} has no manifest.json (incomplete run?)")
    manifest = json.loads(manifest_path.read_text())
    history = []
    metrics_path = run_dir / "metrics.csv"
    if metrics_path.exists():
        with open(metrics_path, newline="") as fh:
            history = list(csv.DictReader(fh))
    cfg = manifest["config"]
    return {
        "dir": str(run_dir),
        "label": method_label(cfg["mode"], cfg.get("ablations", {})),
        "seed": cfg.get("seed", 0),
        "final": manifest["final_metrics"],
        "history": history,
    }


def write_report(run_dirs, out_dir) -> Path:
    """Emit table.csv (one row per run, method-ordered) and curves.csv."""
    if not run_dirs:
        raise ConfigurationError("report needs at least one run directory")
    runs = [read_run(d) for d in run_dirs]
    runs.sort(key=lambda r: (_order_key(r["label"]), r["seed"]))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    table_path = out_dir / "table.csv"
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "fulfilled_service_ratio_pct",
                         "total_rebalanced", "seed", "run_dir"])
        for run in runs:
            writer.writerow([
                run["label"],
                f"{100.0 * run['final']['service_ratio']:.2f}",
                run["final"]["total_rebalanced"],
                run["seed"],
                run["dir"],
            ])

    curves_path = out_dir / "curves.csv"
    with open(curves_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "seed", "epoch", "episodes",
                         "train_service_ratio", "val_service_ratio",
                         "greedy_service_ratio", "local_groups", "regroup_period"])
        for run in runs:
            for row in run["history"]:
                writer.writerow([
                    run["label"], run["seed"], row["epoch"], row["episodes"],
                    row["train_service_ratio"], row["val_service_ratio"],
                    row["greedy_service_ratio"], row["local_groups"],
                    row["regroup_period"],
                ])
    return table_path


def format_table(run_dirs) -> str:
    runs = [read_run(d) for d in run_dirs]
    runs.sort(key=lambda r: (_order_key(r["label"]), r["seed"]))
    width = max(len(r["label"]) for r in runs)
    lines = [f"{'method':<{width}}  ratio%   rebalanced  seed"]
    for run in runs:
        lines.append(f"{run['label']:<{width}}  {100 * run['final']['service_ratio']:6.2f}"
                     f"  {run['final']['total_rebalanced']:>10}  {run['seed']}")
    return "\n".join(lines)
