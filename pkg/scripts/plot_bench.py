#!/usr/bin/env python3
"""Render figures from CLI outputs (secondary tooling, not part of the
library). Reads the CSVs that `ssot ot bench` and `ssot pda run` emit.

Usage:
    python3 scripts/plot_bench.py bench <bench_dir>/bench.csv out.png
    python3 scripts/plot_bench.py metrics <run_dir>/metrics.csv out.png
"""

import csv
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def plot_bench(csv_path: str, out_path: str) -> None:
    curves = defaultdict(list)
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            curves[row["solver"]].append((int(row["epoch"]), float(row["objective"])))
    fig, (ax_obj, ax_time) = plt.subplots(1, 2, figsize=(10, 4))
    times = defaultdict(list)
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            times[row["solver"]].append((int(row["epoch"]), float(row["seconds"])))
    for solver, pts in sorted(curves.items()):
        pts.sort()
        ax_obj.plot([e for e, _ in pts], [o for _, o in pts], label=solver)
    for solver, pts in sorted(times.items()):
        pts.sort()
        ax_time.plot([e for e, _ in pts], [s for _, s in pts], label=solver)
    ax_obj.set_xlabel("epoch")
    ax_obj.set_ylabel("semi-dual objective")
    ax_obj.legend()
    ax_time.set_xlabel("epoch")
    ax_time.set_ylabel("cumulative seconds")
    ax_time.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    print(f"wrote {out_path}")


def plot_metrics(csv_path: str, out_path: str) -> None:
    rows = list(csv.DictReader(open(csv_path, newline="")))
    epochs = [int(r["epoch"]) for r in rows]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    for col in ("loss_ce", "loss_ot", "loss_ent", "loss_total"):
        ax_loss.plot(epochs, [float(r[col]) for r in rows], label=col)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend()
    ax_acc.plot(epochs, [float(r["target_acc"]) for r in rows], label="target_acc")
    ax_acc.plot(epochs, [float(r["prior_l1_error"]) for r in rows], label="prior_l1_error")
    ax_acc.set_xlabel("epoch")
    ax_acc.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    print(f"wrote {out_path}")


def main(argv: list[str]) -> int:
    if len(argv) != 4 or argv[1] not in ("bench", "metrics"):
        print(__doc__, file=sys.stderr)
        return 2
    if argv[1] == "bench":
        plot_bench(argv[2], argv[3])
    else:
        plot_metrics(argv[2], argv[3])
    return 0


if __name__ == "__main__":
    raise SystemExit(main(sys.argv))
