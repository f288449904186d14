"""Report figures rendered straight to files (no pyplot state, no display needed)."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib as mpl
import numpy as np
from matplotlib.figure import Figure

from .evaluation import PARAMS, StudyResult

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "svg.hashsalt": "boltwatch",  # stable ids in svg output
}
EVENT_MARKS = {"redetect": ("v", "tab:green"), "lost": ("x", "tab:red"),
               "spawn": ("^", "tab:blue"), "terminate": ("s", "k")}
LABELS = {"np": "NP (pyramid levels)", "be": "BE (bidirectional error, px)",
          "bs": "BS (block size, px)", "ni": "NI (max iterations)"}


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no creation date so that repeated runs give identical files
    meta = {"Software": None} if path.suffix.lower() == ".png" else {"Date": None}
    fig.savefig(path, metadata=meta)
    return path


def plot_history(rows, path, gt: dict[int, list[tuple[float, float]]] | None = None,
                 degrees: bool = False) -> Path:
    """Cumulative angle (top) and live feature-point count (bottom) per bolt."""
    scale = 180.0 / math.pi if degrees else 1.0
    with mpl.rc_context(STYLE):
        fig = Figure(figsize=(6.4, 4.6))
        ax, ax2 = fig.subplots(2, 1, sharex=True, gridspec_kw={"height_ratios": [2, 1]})
        for b in sorted({r.bolt_id for r in rows}):
            mine = [r for r in rows if r.bolt_id == b]
            t = np.array([r.time_s for r in mine])
            line, = ax.plot(t, [scale * r.cum_rad for r in mine], lw=1.2, label=f"bolt {b}")
            ax2.plot(t, [r.n_fps for r in mine], lw=0.9, color=line.get_color())
            for kind, (marker, color) in EVENT_MARKS.items():
                hits = [r for r in mine if r.event == kind]
                if hits:
                    ax.plot([r.time_s for r in hits], [scale * r.cum_rad for r in hits], marker,
                            color=color, ms=5, ls="none")
            if gt and b in gt:
                gt_t, gt_v = zip(*gt[b])
                ax.plot(gt_t, scale * np.asarray(gt_v), ls="--", lw=0.8, color=line.get_color())
        ax.set_ylabel("rotation (deg)" if degrees else "rotation (rad)")
        ax2.set_ylabel("feature points")
        ax2.set_xlabel("time (s)")
        if rows:
            ax.legend(loc="best", frameon=False, ncol=2)
        fig.tight_layout()
        return _save(fig, path)


def plot_study(result: StudyResult, path) -> Path:
    """One panel per parameter with the marginal mean accuracy, plus NP curves split by BS."""
    marg = result.marginals()
    with mpl.rc_context(STYLE):
        fig = Figure(figsize=(8.0, 5.2))
        axes = fig.subplots(2, 3).ravel()
        for ax, p in zip(axes, PARAMS):
            keys = list(marg[p])
            ax.plot([float(k) for k in keys], [100.0 * marg[p][k] for k in keys], "o-", lw=1.2)
            ax.set_xlabel(LABELS[p])
            ax.set_ylabel("mean accuracy (%)")
        ax = axes[4]
        for bs in sorted({r.bs for r in result.rows}):
            sub = result.marginals({"bs": bs})["np"]
            if sub:
                ax.plot([float(k) for k in sub], [100.0 * v for v in sub.values()], "o-", lw=1.0,
                        label=f"BS={bs}")
        ax.set_xlabel(LABELS["np"])
        ax.set_ylabel("mean accuracy (%)")
        ax.legend(frameon=False)
        ax = axes[5]
        acc = np.array([r.accuracy for r in result.rows], dtype=float)
        ax.hist(100.0 * acc[np.isfinite(acc)], bins=20, color="0.5")
        ax.set_xlabel("cell accuracy (%)")
        ax.set_ylabel("cells")
        fig.tight_layout()
        return _save(fig, path)


def plot_hough(img, edges, lines, path) -> Path:
    """Input image, edge raster and the detected lines drawn over the image."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    with mpl.rc_context(STYLE):
        fig = Figure(figsize=(7.5, 3.0))
        a, b, c = fig.subplots(1, 3)
        for ax in (a, b, c):
            ax.set_axis_off()
        a.imshow(img, cmap="gray", vmin=0, vmax=1)
        b.imshow(edges, cmap="gray_r", interpolation="nearest")
        c.imshow(img, cmap="gray", vmin=0, vmax=1)
        for ln in lines:
            t = math.radians(ln.theta_line)
            ct, st = math.cos(t), math.sin(t)
            x0, y0 = ln.rho * ct, ln.rho * st
            span = math.hypot(h, w)
            c.plot([x0 - span * st, x0 + span * st], [y0 + span * ct, y0 - span * ct], lw=1.0, color="tab:red")
        c.set_xlim(0, w - 1)
        c.set_ylim(h - 1, 0)
        fig.tight_layout()
        return _save(fig, path)
