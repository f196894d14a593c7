"""Nine-metric evaluation of score maps against binary ground truth.

Scalar metrics: S-measure, weighted F-measure, MAE, and the adaptive / mean /
max variants of the E-measure and F-measure.  Threshold sweeps use 256
thresholds ``t_k = (k + 1) / 256`` with ``pred >= t_k`` marking foreground, so
8-bit maps keep every non-trivial binarization and a perfect binary prediction
reproduces the ground truth at every threshold.  Zero-score pixels are never
foreground, which only matters for the adaptive threshold of an all-zero map.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.ndimage import convolve, distance_transform_edt

from .core import (
    STRATEGY_CODES,
    VISION_CODES,
    BinaryMask,
    MapError,
    ScoreMap,
    adaptive_threshold,
)

N_THRESHOLDS = 256
THRESHOLDS = (np.arange(N_THRESHOLDS) + 1) / N_THRESHOLDS
F_BETA2 = 0.3
WF_BETA2 = 1.0
S_ALPHA = 0.5
_EPS = np.finfo(np.float64).eps

SCALAR_FIELDS = (
    "s_alpha",
    "f_w",
    "mae",
    "e_adaptive",
    "e_mean",
    "e_max",
    "f_adaptive",
    "f_mean",
    "f_max",
)
# Metrics that are undefined for an empty ground truth.
F_FIELDS = ("f_w", "f_adaptive", "f_mean", "f_max")
LOWER_IS_BETTER = frozenset({"mae"})

METRIC_LABELS = {
    "s_alpha": "Sα↑",
    "f_w": "F^w_β↑",
    "mae": "M↓",
    "e_adaptive": "E^ad_φ↑",
    "e_mean": "E^m_φ↑",
    "e_max": "E^max_φ↑",
    "f_adaptive": "F^ad_β↑",
    "f_mean": "F^m_β↑",
    "f_max": "F^max_β↑",
}


class EmptyGroundTruth(MapError):
    """F-family metrics are undefined when the ground truth has no foreground."""


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = pred.values if isinstance(pred, ScoreMap) else ScoreMap(pred).values
    g = gt.values if isinstance(gt, BinaryMask) else BinaryMask(gt).values
    if p.shape != g.shape:
        raise MapError(f"shape mismatch: prediction {p.shape} vs ground truth {g.shape}")
    return p, g


def mae(pred, gt) -> float:
    p, g = _pair(pred, gt)
    return float(np.mean(np.abs(p - g)))


# --------------------------------------------------------------------------
# threshold sweeps

def _levels(p: np.ndarray) -> np.ndarray:
    """Number of curve thresholds each pixel reaches (0..256)."""
    return np.floor(p * N_THRESHOLDS).astype(np.int64)


def _counts_above(levels: np.ndarray) -> np.ndarray:
    """``out[k]`` = number of pixels with ``level > k``."""
    hist = np.bincount(levels.ravel(), minlength=N_THRESHOLDS + 1)
    return hist[::-1].cumsum()[::-1][1:]


def _sweep_counts(p: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """True-positive and predicted-positive counts for every curve threshold."""
    lv = _levels(p)
    tp = _counts_above(lv[g])
    fp = _counts_above(lv[~g])
    return tp, tp + fp


def _f_from_counts(tp, pp, n_fg):
    tp = np.asarray(tp, dtype=np.float64)
    pp = np.asarray(pp, dtype=np.float64)
    precision = np.divide(tp, pp, out=np.zeros_like(tp), where=pp > 0)
    recall = tp / n_fg if n_fg > 0 else np.zeros_like(tp)
    num = (1 + F_BETA2) * precision * recall
    den = F_BETA2 * precision + recall
    f = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return precision, recall, f


def pr_curves(pred, gt) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Precision, recall and F_beta at each of the 256 thresholds."""
    p, g = _pair(pred, gt)
    tp, pp = _sweep_counts(p, g)
    return _f_from_counts(tp, pp, int(g.sum()))


def _foreground(p, threshold) -> np.ndarray:
    return (p >= threshold) & (p > 0)


def _f_at(p, g, threshold) -> float:
    b = _foreground(p, threshold)
    tp = np.count_nonzero(b & g)
    _, _, f = _f_from_counts([tp], [np.count_nonzero(b)], int(g.sum()))
    return float(f[0])


def f_measure(pred, gt, variant: str = "max") -> float:
    """F_beta with beta^2 = 0.3 in its adaptive, mean or max form."""
    p, g = _pair(pred, gt)
    if not g.any():
        raise EmptyGroundTruth("F-measure is undefined for an empty ground truth")
    if variant == "adaptive":
        return _f_at(p, g, adaptive_threshold(p))
    _, _, f = pr_curves(p, g)
    if variant == "mean":
        return float(f.mean())
    if variant == "max":
        return float(f.max())
    raise ValueError(f"unknown variant {variant!r}")


def _e_from_counts(tp, pp, n_fg, n):
    """E-measure from confusion counts of a binarized prediction.

    The pixels fall into four (pred, gt) classes, each with a single alignment
    value, so the pixel mean reduces to a count-weighted sum.
    """
    tp = np.asarray(tp, dtype=np.float64)
    pp = np.asarray(pp, dtype=np.float64)
    if n_fg == 0:
        return (n - pp) / n
    if n_fg == n:
        return pp / n
    mu_g = n_fg / n
    mu_p = pp / n
    fp = pp - tp
    fn = n_fg - tp
    tn = n - n_fg - fp
    total = np.zeros_like(tp)
    for count, b, gv in ((tp, 1.0, 1.0), (fp, 1.0, 0.0), (fn, 0.0, 1.0), (tn, 0.0, 0.0)):
        phi_p = b - mu_p
        phi_g = gv - mu_g
        align = 2.0 * phi_g * phi_p / (phi_g**2 + phi_p**2)
        total += count * (1.0 + align) ** 2 / 4.0
    return total / n


def e_curve(pred, gt) -> np.ndarray:
    p, g = _pair(pred, gt)
    tp, pp = _sweep_counts(p, g)
    return _e_from_counts(tp, pp, int(g.sum()), g.size)


def _e_at(p, g, threshold) -> float:
    b = _foreground(p, threshold)
    tp = np.count_nonzero(b & g)
    return float(_e_from_counts([tp], [np.count_nonzero(b)], int(g.sum()), g.size)[0])


def e_measure(pred, gt, variant: str = "max") -> float:
    """Enhanced-alignment measure in its adaptive, mean or max form."""
    p, g = _pair(pred, gt)
    if variant == "adaptive":
        return _e_at(p, g, adaptive_threshold(p))
    curve = e_curve(p, g)
    if variant == "mean":
        return float(curve.mean())
    if variant == "max":
        return float(curve.max())
    raise ValueError(f"unknown variant {variant!r}")


# --------------------------------------------------------------------------
# weighted F-measure

def _gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    r = (size - 1) / 2.0
    y, x = np.mgrid[-r : r + 1, -r : r + 1]
    k = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    return k / k.sum()


def weighted_f(pred, gt) -> float:
    """Weighted F-measure (beta^2 = 1) with dependency and importance weighting."""
    p, g = _pair(pred, gt)
    if not g.any():
        raise EmptyGroundTruth("weighted F-measure is undefined for an empty ground truth")
    # distance and nearest-foreground index for every background pixel
    dist, (iy, ix) = distance_transform_edt(~g, return_indices=True)
    err = np.abs(p - g)
    err_t = err.copy()
    bg = ~g
    err_t[bg] = err[iy[bg], ix[bg]]
    smoothed = convolve(err_t, _gaussian_kernel(), mode="constant", cval=0.0)
    min_err = np.where(g & (smoothed < err), smoothed, err)
    importance = np.where(g, 1.0, 2.0 - np.exp(np.log(0.5) / 5.0 * dist))
    weighted_err = min_err * importance
    tp_w = g.sum() - weighted_err[g].sum()
    fp_w = weighted_err[bg].sum()
    recall = 1.0 - weighted_err[g].mean()
    precision = tp_w / (tp_w + fp_w + _EPS)
    q = (1 + WF_BETA2) * recall * precision / (recall + WF_BETA2 * precision + _EPS)
    return float(min(max(q, 0.0), 1.0))


# --------------------------------------------------------------------------
# S-measure

def _object_similarity(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return float(2.0 * x / (x * x + 1.0 + sigma + _EPS))


def _s_object(p, g) -> float:
    u = g.mean()
    fg = _object_similarity(p[g])
    bg = _object_similarity(1.0 - p[~g])
    return u * fg + (1 - u) * bg


def _ssim(p, g) -> float:
    n = p.size
    if n == 0:
        return 0.0
    x = p.mean()
    y = g.mean()
    dof = max(n - 1, 1)
    sx = ((p - x) ** 2).sum() / dof
    sy = ((g - y) ** 2).sum() / dof
    sxy = ((p - x) * (g - y)).sum() / dof
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return float(alpha / (beta + _EPS))
    if beta == 0:
        return 1.0
    return 0.0


def _s_region(p, g) -> float:
    h, w = g.shape
    ys, xs = np.nonzero(g)
    # split point follows the MATLAB reference (1-based centroid, rounded)
    cx = int(np.round(xs.mean())) + 1
    cy = int(np.round(ys.mean())) + 1
    area = h * w
    blocks = (
        (slice(0, cy), slice(0, cx)),
        (slice(0, cy), slice(cx, w)),
        (slice(cy, h), slice(0, cx)),
        (slice(cy, h), slice(cx, w)),
    )
    w1 = cx * cy / area
    w2 = cy * (w - cx) / area
    w3 = (h - cy) * cx / area
    weights = (w1, w2, w3, 1.0 - w1 - w2 - w3)
    gf = g.astype(np.float64)
    return float(sum(wt * _ssim(p[b], gf[b]) for wt, b in zip(weights, blocks)))


def s_measure(pred, gt, alpha: float = S_ALPHA) -> float:
    """Structure measure combining object-aware and region-aware similarity."""
    p, g = _pair(pred, gt)
    fg_ratio = g.mean()
    if fg_ratio == 0:
        s = 1.0 - p.mean()
    elif fg_ratio == 1:
        s = p.mean()
    else:
        s = alpha * _s_object(p, g) + (1 - alpha) * _s_region(p, g)
    return float(min(max(s, 0.0), 1.0))


# --------------------------------------------------------------------------
# reports

@dataclass
class MetricReport:
    """All nine scalars plus the 256-point precision / recall / F curves.

    F-family fields are NaN when ``empty_gt`` is set.
    """

    s_alpha: float
    f_w: float
    mae: float
    e_adaptive: float
    e_mean: float
    e_max: float
    f_adaptive: float
    f_mean: float
    f_max: float
    precision_curve: np.ndarray = field(repr=False)
    recall_curve: np.ndarray = field(repr=False)
    f_curve: np.ndarray = field(repr=False)
    empty_gt: bool = False

    def scalars(self) -> dict:
        return {k: getattr(self, k) for k in SCALAR_FIELDS}


def evaluate_image(pred, gt) -> MetricReport:
    """Score one prediction against its ground truth.

    The prediction must already be at ground-truth resolution.
    """
    p, g = _pair(pred, gt)
    n_fg = int(g.sum())
    tp, pp = _sweep_counts(p, g)
    precision, recall, f = _f_from_counts(tp, pp, n_fg)
    e = _e_from_counts(tp, pp, n_fg, g.size)

    t_ad = adaptive_threshold(p)
    b = _foreground(p, t_ad)
    tp_ad = np.count_nonzero(b & g)
    pp_ad = np.count_nonzero(b)
    e_ad = float(_e_from_counts([tp_ad], [pp_ad], n_fg, g.size)[0])

    empty = n_fg == 0
    if empty:
        f_ad = f_mean = f_max = f_w = math.nan
        f = np.full(N_THRESHOLDS, math.nan)
    else:
        f_ad = float(_f_from_counts([tp_ad], [pp_ad], n_fg)[2][0])
        f_mean = float(f.mean())
        f_max = float(f.max())
        f_w = weighted_f(p, g)
    return MetricReport(
        s_alpha=s_measure(p, g),
        f_w=f_w,
        mae=float(np.mean(np.abs(p - g))),
        e_adaptive=e_ad,
        e_mean=float(e.mean()),
        e_max=float(e.max()),
        f_adaptive=f_ad,
        f_mean=f_mean,
        f_max=f_max,
        precision_curve=precision,
        recall_curve=recall,
        f_curve=f,
        empty_gt=empty,
    )


@dataclass
class AggregateReport:
    """Per-image means of every metric, optionally sliced by attribute code."""

    means: dict
    precision_curve: np.ndarray = field(repr=False)
    recall_curve: np.ndarray = field(repr=False)
    f_curve: np.ndarray = field(repr=False)
    n_images: int = 0
    n_empty_gt: int = 0
    slices: dict = field(default_factory=dict)

    def __getattr__(self, name):
        means = self.__dict__.get("means", {})
        if name in means:
            return means[name]
        raise AttributeError(name)

    def scalars(self) -> dict:
        return dict(self.means)


def _mean_report(reports: Sequence[MetricReport]) -> AggregateReport:
    means = {}
    scored = [r for r in reports if not r.empty_gt]
    for name in SCALAR_FIELDS:
        pool = scored if name in F_FIELDS else reports
        means[name] = float(np.mean([getattr(r, name) for r in pool])) if pool else math.nan
    curve_pool = scored or list(reports)
    return AggregateReport(
        means=means,
        precision_curve=np.mean([r.precision_curve for r in curve_pool], axis=0),
        recall_curve=np.mean([r.recall_curve for r in curve_pool], axis=0),
        f_curve=np.mean([r.f_curve for r in curve_pool], axis=0),
        n_images=len(reports),
        n_empty_gt=len(reports) - len(scored),
    )


_SLICE_CODES = {
    "strategy": STRATEGY_CODES,
    "vision": VISION_CODES,
    "all": STRATEGY_CODES + VISION_CODES,
}


def aggregate(
    reports: Iterable[tuple[object, MetricReport]],
    slice_by: Optional[str] = None,
) -> AggregateReport:
    """Average per-image reports.

    ``reports`` pairs each report with its ``SampleRecord`` (or ``None`` when
    slicing is not requested).  ``slice_by`` is ``"strategy"``, ``"vision"``,
    ``"all"`` or a single attribute code; codes that no record carries get no
    sub-report at all.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("cannot aggregate an empty list of reports")
    agg = _mean_report([r for _, r in reports])
    if slice_by is None:
        return agg
    codes = _SLICE_CODES.get(slice_by, (slice_by,))
    for code in codes:
        members = [r for rec, r in reports if rec is not None and code in rec.attributes]
        if members:
            agg.slices[code] = _mean_report(members)
    return agg


def report_fields() -> tuple[str, ...]:
    return tuple(f.name for f in fields(MetricReport))
