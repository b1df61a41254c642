#!/usr/bin/env python3
"""Render training_curve.csv and density.csv files to PNG.

    plot_curves.py run/training_curve.csv [more.csv ...] -o curves.png
    plot_curves.py --density dens/density.csv -o density.png
"""
import argparse
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def plot_curves(paths, out):
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for path in paths:
        df = pd.read_csv(path)
        ev = df.dropna(subset=["err_v"])
        label = os.path.basename(os.path.dirname(os.path.abspath(path))) or path
        axes[0].semilogy(ev["iter"], ev["err_v"], label=label)
        axes[1].semilogy(ev["iter"], ev["err_u"], label=label)
    axes[0].set_title("relative L2 error of V")
    axes[1].set_title("relative L2 error of u")
    for ax in axes:
        ax.set_xlabel("iteration")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=150)


def plot_density(path, out):
    df = pd.read_csv(path)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(df["bin_center"], df["true_density"], label="exact")
    ax.plot(df["bin_center"], df["learned_density"], "--", label="learned")
    ax.set_xlabel("V")
    ax.set_ylabel("density")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=150)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("csv", nargs="+")
    ap.add_argument("--density", action="store_true", help="inputs are density.csv files")
    ap.add_argument("-o", "--out", default="plot.png")
    args = ap.parse_args()
    if args.density:
        plot_density(args.csv[0], args.out)
    else:
        plot_curves(args.csv, args.out)


if __name__ == "__main__":
    main()
