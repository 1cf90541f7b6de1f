#!/usr/bin/env python3
"""Render training curves and trade-off frontiers from safepg CSV outputs.

Usage:
  python3 scripts/plot_results.py training OUT.png metrics1.csv [metrics2.csv ...]
  python3 scripts/plot_results.py frontier OUT.png sweep.csv

Training mode overlays one or more runs (mean and across-run band when several
files are given): time-average return (normalized by the horizon), time-average
safety, and the multiplier. Frontier mode scatters evaluation safety against
per-step return for each formulation and draws the upper-bound markers carried
by cumulative rows.
"""

import argparse
import csv
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    return rows


def plot_training(out_path, metric_paths, horizon):
    runs = []
    for path in metric_paths:
        rows = read_csv(path)
        runs.append(
            {
                "avg_return": np.array([float(r["avg_return"]) for r in rows]) / (horizon + 1),
                "avg_safety": np.array([float(r["avg_safety"]) for r in rows]),
                "lambda": np.array([float(r["lambda"]) for r in rows]),
            }
        )
    n = min(len(r["avg_return"]) for r in runs)
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.4))
    episodes = np.arange(n)
    for key, ax, title in (
        ("avg_return", axes[0], "time-average return / (T+1)"),
        ("avg_safety", axes[1], "time-average safety"),
        ("lambda", axes[2], "multiplier"),
    ):
        stack = np.stack([r[key][:n] for r in runs])
        mean = stack.mean(axis=0)
        ax.plot(episodes, mean, lw=1.2)
        if len(runs) > 1:
            sd = stack.std(axis=0)
            ax.fill_between(episodes, mean - sd, mean + sd, alpha=0.25)
        ax.set_title(title)
        ax.set_xlabel("episode")
    axes[1].axhline(0.95, color="gray", ls="--", lw=0.8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    print(f"wrote {out_path}")


def plot_frontier(out_path, sweep_path, horizon):
    rows = read_csv(sweep_path)
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    styles = {
        "cumulative-shaped": dict(color="tab:blue", label="cumulative"),
        "prob-spg-reinforce": dict(color="tab:red", label="probabilistic"),
        "prob-spg-actor-critic": dict(color="tab:orange", label="probabilistic (AC)"),
    }
    seen = set()
    for row in rows:
        style = styles.get(row["method"], dict(color="gray", label=row["method"]))
        label = style["label"] if style["label"] not in seen else None
        seen.add(style["label"])
        ret = float(row["eval_return"]) / (horizon + 1)
        ax.plot(float(row["eval_safety"]), ret, "o", color=style["color"], label=label, ms=5)
        if row["bound_upper"]:
            ax.plot(
                float(row["eval_safety"]),
                float(row["bound_upper"]) / (horizon + 1),
                "^",
                color="tab:blue",
                ms=5,
                mfc="none",
            )
    ax.set_xlabel("evaluation safety (fraction of safe episodes)")
    ax.set_ylabel("evaluation return / (T+1)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    print(f"wrote {out_path}")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("mode", choices=["training", "frontier"])
    parser.add_argument("output")
    parser.add_argument("csvs", nargs="+")
    parser.add_argument("--horizon", type=int, default=20)
    args = parser.parse_args(argv)
    if args.mode == "training":
        plot_training(args.output, args.csvs, args.horizon)
    else:
        plot_frontier(args.output, args.csvs[0], args.horizon)
    return 0


if __name__ == "__main__":
    sys.exit(main())
