#!/usr/bin/env python3
"""Plot a `compare` run: Monte Carlo mean band, drift ODE, and location series.

Usage: python docs/plot_compare.py <run-output-dir> [component-index]

Reads ilp.csv and mc.csv from the run directory and shows one component
(default 3, the first acceleration component of the tracking model).
"""

import sys
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np


def main():
    out = Path(sys.argv[1])
    comp = int(sys.argv[2]) if len(sys.argv) > 2 else 3
    ilp = np.genfromtxt(out / "ilp.csv", delimiter=",", names=True)
    mc = np.genfromtxt(out / "mc.csv", delimiter=",", names=True)
    t = mc["time"]
    mean = mc["mean%d" % comp]
    se = mc["stderr%d" % comp]

    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.fill_between(t, mean - se, mean + se, alpha=0.25, label="MC mean ± 1 se")
    ax.plot(t, mean, "+", color="k", label="MC mean")
    ax.plot(ilp["time"], ilp["x%d" % comp], "-", label="drift ODE")
    ax.plot(ilp["time"], ilp["proj%d" % comp], "o", mfc="none", label="location parameter")
    ax.set_xlabel("time")
    ax.set_ylabel("component %d" % comp)
    ax.legend()
    fig.tight_layout()
    plt.show()


if __name__ == "__main__":
    main()
