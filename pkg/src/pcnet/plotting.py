"""PNG figures rendered next to the CSV outputs (matplotlib, Agg canvas)."""
from __future__ import annotations

from pathlib import Path
from typing import Dict, Mapping

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .core import STRATEGY_CODES, VISION_CODES
from .metrics import THRESHOLDS

# no Software/date metadata so reruns write identical bytes
_PNG_META = {"Software": None}


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    return path


def plot_curves(curves: Mapping[str, Mapping[str, np.ndarray]], out_dir) -> Dict[str, Path]:
    """PR and F_beta-vs-threshold curves, one line per method.

    ``curves[name]`` holds ``precision``, ``recall`` and ``f_beta`` arrays.
    """
    out_dir = Path(out_dir)
    pr = Figure(figsize=(5, 4), layout="constrained")
    ax = pr.subplots()
    for name, c in curves.items():
        ax.plot(c["recall"], c["precision"], label=name, lw=1.2)
    ax.set(xlabel="Recall", ylabel="Precision", xlim=(0, 1), ylim=(0, 1.02), title="PR curves")
    ax.legend(fontsize=6, ncol=2)

    fb = Figure(figsize=(5, 4), layout="constrained")
    ax = fb.subplots()
    for name, c in curves.items():
        ax.plot(THRESHOLDS, c["f_beta"], label=name, lw=1.2)
    ax.set(xlabel="Threshold", ylabel="F-measure", xlim=(0, 1), ylim=(0, 1.02), title="F-measure curves")
    ax.legend(fontsize=6, ncol=2)
    return {"pr": _save(pr, out_dir / "pr_curves.png"), "f_beta": _save(fb, out_dir / "f_beta_curves.png")}


def plot_stats(stats, out_dir, top_categories: int = 40) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    paths = {}

    fig = Figure(figsize=(8, 3.5), layout="constrained")
    ax = fig.subplots()
    items = list(stats.category_histogram.items())[:top_categories]
    ax.bar(range(len(items)), [v for _, v in items], color="#4c72b0")
    ax.set_xticks(range(len(items)), [k for k, _ in items], rotation=90, fontsize=6)
    ax.set(ylabel="Images", title="Category histogram")
    paths["category_histogram"] = _save(fig, out_dir / "category_histogram.png")

    fig = Figure(figsize=(7, 3), layout="constrained")
    a1, a2 = fig.subplots(1, 2)
    for ax, dist, title in (
        (a1, stats.strategy_distribution, "Images"),
        (a2, stats.category_strategy_distribution, "Categories"),
    ):
        vals = [dist[c] for c in STRATEGY_CODES]
        if sum(vals) > 0:
            ax.pie(vals, labels=STRATEGY_CODES, autopct="%.2f%%", textprops={"fontsize": 7})
        ax.set_title(f"Strategy share ({title})")
    paths["strategy_distribution"] = _save(fig, out_dir / "strategy_distribution.png")

    fig = Figure(figsize=(8, 3.5), layout="constrained")
    a1, a2 = fig.subplots(1, 2)
    a1.bar(VISION_CODES, [stats.vision_attribute_counts[c] for c in VISION_CODES], color="#55a868")
    a1.set(title="Attribute counts", ylabel="Images")
    im = a2.imshow(stats.attribute_cooccurrence, cmap="Blues")
    a2.set_xticks(range(len(VISION_CODES)), VISION_CODES)
    a2.set_yticks(range(len(VISION_CODES)), VISION_CODES)
    for (i, j), v in np.ndenumerate(stats.attribute_cooccurrence):
        a2.text(j, i, str(v), ha="center", va="center", fontsize=6)
    a2.set_title("Attribute co-occurrence")
    fig.colorbar(im, ax=a2, shrink=0.8)
    paths["attributes"] = _save(fig, out_dir / "attributes.png")

    fig = Figure(figsize=(4.5, 4), layout="constrained")
    ax = fig.subplots()
    buckets = sorted({p[2] for p in stats.resolution_points})
    for b in buckets:
        pts = np.array([(w, h) for w, h, k in stats.resolution_points if k == b])
        ax.scatter(pts[:, 0], pts[:, 1], s=6, label=b)
    ax.set(xlabel="Width (w)", ylabel="Height (h)", title="Image resolution")
    ax.legend(fontsize=6)
    paths["resolution_scatter"] = _save(fig, out_dir / "resolution_scatter.png")
    return paths


def plot_training_curve(curve: Mapping[str, np.ndarray], path) -> Path:
    fig = Figure(figsize=(5, 3.5), layout="constrained")
    ax = fig.subplots()
    for key, label in (("total", "total"), ("l_e", "L_e"), ("l_r", "L_r")):
        ax.plot(curve["step"], curve[key], label=label, lw=1)
    ax.set(xlabel="Step", ylabel="Loss", title="Training loss")
    ax.legend()
    return _save(fig, path)
