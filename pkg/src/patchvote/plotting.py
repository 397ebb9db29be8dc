"""Small SVG line/scatter plots for reports (matplotlib, headless)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed element ids and no timestamp, so identical data gives identical files
matplotlib.rcParams["svg.hashsalt"] = "patchvote"


def line_plot(path, x, series: dict, xlabel: str, ylabel: str, title: str = "",
              markers: bool = False) -> None:
    """Write one panel with a line per ``series`` entry to ``path`` as SVG."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    try:
        for label, y in series.items():
            ax.plot(x, y, marker="o" if markers else None, label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(series) > 1:
            ax.legend()
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)


def trajectory_plot(path, t, errors, velocities, positions) -> None:
    """Three stacked panels: servo error, camera velocity, camera position."""
    fig, axes = plt.subplots(3, 1, figsize=(6.4, 8.0), sharex=True)
    try:
        panels = [
            (errors, ["tx", "ty", "tz", "θux", "θuy", "θuz"], "error (mm, rad)"),
            (velocities, ["vx", "vy", "vz", "ωx", "ωy", "ωz"], "velocity (mm/s, rad/s)"),
            (positions, ["x", "y", "z"], "position (mm)"),
        ]
        for ax, (data, names, ylabel) in zip(axes, panels):
            for i, name in enumerate(names):
                ax.plot(t, data[:, i], label=name)
            ax.set_ylabel(ylabel)
            ax.legend(ncol=3, fontsize="small")
            ax.grid(True, alpha=0.3)
        axes[-1].set_xlabel("time (s)")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
