#!/usr/bin/env python3
"""Render figures from an ndoflow output directory.

    python3 scripts/plot.py OUT_DIR [--dest FIGURE_DIR]

Handles whatever is present: pred_*.csv, curve_*.csv, lambda_sweep.csv and
library_estimates.csv. Needs pandas and matplotlib.
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def plot_predictions(path: Path, dest: Path) -> None:
    df = pd.read_csv(path)
    dims = [c[len("pred_"):] for c in df.columns if c.startswith("pred_")]
    fig, axes = plt.subplots(len(dims), 1, figsize=(7, 2.4 * len(dims)), sharex=True, squeeze=False)
    for ax, d in zip(axes[:, 0], dims):
        ax.plot(df["t"], df[f"true_{d}"], "k-", lw=1, label="truth")
        ax.plot(df["t"], df[f"pred_{d}"], "r--", lw=1, label="prediction")
        ax.set_ylabel(d)
    axes[0, 0].legend(loc="best")
    axes[-1, 0].set_xlabel("t")
    fig.suptitle(path.stem)
    fig.tight_layout()
    fig.savefig(dest / f"{path.stem}.png", dpi=120)
    plt.close(fig)


def plot_curves(paths: list[Path], dest: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    for p in paths:
        df = pd.read_csv(p)
        df = df[df["skipped"] == 0]
        ax.semilogy(df["iteration"], df["trajectory_mse"], lw=1, label=p.stem[len("curve_"):])
    ax.set_xlabel("iteration")
    ax.set_ylabel("training trajectory MSE")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(dest / "training_curves.png", dpi=120)
    plt.close(fig)


def plot_lambda_sweep(path: Path, dest: Path) -> None:
    df = pd.read_csv(path)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    for sigma, g in df.groupby("sigma"):
        axes[0].loglog(g["lambda"], g["in_mse_ratio"], "o-", label=f"sigma={sigma:g}")
        axes[1].loglog(g["lambda"], g["ex_mse_ratio"], "o-", label=f"sigma={sigma:g}")
    for ax, title in zip(axes, ["In. MSE ratio", "Ex. MSE ratio"]):
        ax.axhline(1.0, color="k", lw=0.8)
        ax.set_xlabel("lambda")
        ax.set_title(title)
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(dest / "lambda_sweep.png", dpi=120)
    plt.close(fig)


def plot_library(path: Path, dest: Path) -> None:
    df = pd.read_csv(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(df["t"], df["dz"], "k-", lw=1.5, label="exact derivative")
    for c in df.columns:
        if c.startswith("ndo_bound"):
            ax.plot(df["t"], df[c], lw=1, label=f"trig bound {c[len('ndo_bound'):]}")
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(dest / "library_complexity.png", dpi=120)
    plt.close(fig)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--dest", type=Path, help="figure directory (default OUT_DIR/figures)")
    args = parser.parse_args()
    dest = args.dest or args.out_dir / "figures"
    dest.mkdir(parents=True, exist_ok=True)

    for p in sorted(args.out_dir.glob("pred_*.csv")):
        plot_predictions(p, dest)
    curves = sorted(args.out_dir.glob("curve_*.csv"))
    if curves:
        plot_curves(curves, dest)
    if (args.out_dir / "lambda_sweep.csv").exists():
        plot_lambda_sweep(args.out_dir / "lambda_sweep.csv", dest)
    if (args.out_dir / "library_estimates.csv").exists():
        plot_library(args.out_dir / "library_estimates.csv", dest)
    print(f"figures written to {dest}")


if __name__ == "__main__":
    main()
