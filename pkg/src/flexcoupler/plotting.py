"""Render sweep result tables as figures.

Figures are written next to the CSVs they come from, one PNG per sweep
file, mean rate versus the swept value with one error-bar curve per scheme.
"""

import glob
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .config import SCHEMES
from .experiments import read_sweep_csv

AXIS_LABELS = {
    "region_x": "region width (m)",
    "region_y": "region depth (m)",
    "rho": "transmit power",
    "user_angle": "user bearing (rad)",
    "coverage_angle": "coverage angle (rad)",
}

SCHEME_MARKERS = {
    "flexible": "o",
    "fixed_antenna": "s",
    "translatable_fixed_pattern": "^",
    "rotatable_fixed_pattern": "v",
    "nested_baseline": "d",
}


def render_sweep_figure(rows, variable, path):
    """Plot aggregate rows of one sweep and save the figure to ``path``."""
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    for scheme in SCHEMES:
        pts = sorted((r.sweep_value, r.mean_rate, r.std_rate)
                     for r in rows if r.scheme == scheme)
        if not pts:
            continue
        x, y, err = zip(*pts)
        ax.errorbar(x, y, yerr=err, marker=SCHEME_MARKERS.get(scheme, "x"),
                    capsize=3, markersize=4, linewidth=1.2, label=scheme)
    if variable == "rho":
        ax.set_xscale("log")
    ax.set_xlabel(AXIS_LABELS.get(variable, variable))
    ax.set_ylabel("sum rate (bits/s/Hz)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def render_all(csv_dir):
    """Render every ``sweep_*.csv`` in a directory to a sibling PNG."""
    written = []
    for csv_path in sorted(glob.glob(os.path.join(csv_dir, "sweep_*.csv"))):
        stem = os.path.splitext(os.path.basename(csv_path))[0]
        variable = stem[len("sweep_"):]
        rows = read_sweep_csv(csv_path)
        png_path = os.path.splitext(csv_path)[0] + ".png"
        render_sweep_figure(rows, variable, png_path)
        written.append(png_path)
    return written
