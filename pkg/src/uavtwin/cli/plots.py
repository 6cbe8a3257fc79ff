"""Training-curve figures rendered to SVG.

Raw per-episode values are drawn faint with a bold 10-episode moving
average on top. Rendering settings are pinned (fixed hash salt, no date
metadata, text kept as text) so identical inputs give identical bytes.
"""
from __future__ import annotations

import io
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SMOOTHING_WINDOW = 10

_RC = {
    "svg.hashsalt": "uavtwin",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "axes.prop_cycle": matplotlib.cycler(color=["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]),
}


def moving_average(values: Sequence[float], window: int = SMOOTHING_WINDOW) -> np.ndarray:
    """Trailing mean over up to ``window`` values; early points average what exists."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return v
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def line_chart(
    episodes: Sequence[int],
    series: dict[str, Sequence[float]],
    title: str,
    ylabel: str,
) -> bytes:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(7.0, 4.2))
        x = np.asarray(episodes)
        for label, values in series.items():
            (raw,) = ax.plot(x, values, linewidth=0.8, alpha=0.3)
            ax.plot(x, moving_average(values), linewidth=2.0, color=raw.get_color(), label=label)
        ax.set_title(title)
        ax.set_xlabel("Episode")
        ax.set_ylabel(ylabel)
        ax.grid(True, linewidth=0.4, alpha=0.5)
        if series:
            ax.legend(loc="best", fontsize="small")
        fig.tight_layout()
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return buf.getvalue()


def render_training_plots(rows: Sequence[dict], n_receivers: int, out_dir: str | Path) -> list[Path]:
    """Write ``sinr.svg`` and ``capacity.svg`` from episodes.csv-style rows."""
    out = Path(out_dir)
    ep = [int(r["episode"]) for r in rows]
    sinr = {f"Receiver {i + 1}": [float(r[f"sinr_db_r{i + 1}"]) for r in rows] for i in range(n_receivers)}
    cap = {f"Receiver {i + 1}": [float(r[f"capacity_r{i + 1}"]) / 1e6 for r in rows] for i in range(n_receivers)}
    cap["Sum"] = [float(r["capacity_sum"]) / 1e6 for r in rows]
    paths = [out / "sinr.svg", out / "capacity.svg"]
    paths[0].write_bytes(line_chart(ep, sinr, "Average SINR per episode", "Mean SINR (dB)"))
    paths[1].write_bytes(line_chart(ep, cap, "Average capacity per episode", "Mean capacity (Mbit/s)"))
    return paths
