"""Leaderboards, curve tables and ablation tables as CSV / Markdown."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .metrics import LOWER_IS_BETTER, METRIC_LABELS, SCALAR_FIELDS, THRESHOLDS, AggregateReport

MARKERS = {1: "red", 2: "blue", 3: "green"}
MARKER_SYMBOLS = {"red": "🟥", "blue": "🟦", "green": "🟩"}
TEST_ROW_FIELDS = ("s_alpha", "f_w", "mae", "e_adaptive")
AXIS_FIELDS = {
    "components": ("s_alpha", "f_w", "mae", "e_mean", "f_mean"),
    "iterations": ("s_alpha", "f_w", "mae", "e_adaptive", "f_mean"),
    "resolution": SCALAR_FIELDS,
}
CURVE_HEADER = ("threshold", "precision", "recall", "f_beta")

_LABEL_TO_FIELD = {label: name for name, label in METRIC_LABELS.items()}
_LABEL_TO_FIELD.update({label.rstrip("↑↓"): name for name, label in METRIC_LABELS.items()})


@dataclass
class LeaderboardRow:
    method: str
    backbone: str
    values: Dict[str, float]
    ranks: Dict[str, int] = field(default_factory=dict)

    @property
    def markers(self) -> Dict[str, str]:
        return {m: MARKERS[r] for m, r in self.ranks.items() if r in MARKERS}


def assign_ranks(rows: List[LeaderboardRow], metrics: Sequence[str] = SCALAR_FIELDS) -> List[LeaderboardRow]:
    """Column-wise ranks (1 = best); M ascending, others descending, ties by name."""
    for m in metrics:
        scored = [r for r in rows if not math.isnan(r.values.get(m, math.nan))]
        sign = 1.0 if m in LOWER_IS_BETTER else -1.0
        for k, r in enumerate(sorted(scored, key=lambda r: (sign * r.values[m], r.method)), start=1):
            r.ranks[m] = k
    return rows


def row_from_report(method: str, report: AggregateReport, backbone: str = "") -> LeaderboardRow:
    return LeaderboardRow(method, backbone, {m: float(report.means[m]) for m in SCALAR_FIELDS})


def read_scores_file(path) -> List[LeaderboardRow]:
    """Published scalar tables: a ``method`` column, optional ``backbone``, and
    metric columns named by field (``s_alpha``) or label (``Sα↑`` / ``Sα``)."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if "method" not in header:
            raise ValueError(f"{path}: scores file needs a 'method' column")
        mapping = {}
        for col in header:
            if col in ("method", "backbone"):
                continue
            name = col if col in SCALAR_FIELDS else _LABEL_TO_FIELD.get(col.strip())
            if name is None:
                raise ValueError(f"{path}: unknown metric column {col!r}")
            mapping[col] = name
        rows = []
        for line, rec in enumerate(reader, start=2):
            values = {}
            for col, name in mapping.items():
                raw = (rec.get(col) or "").strip()
                try:
                    values[name] = float(raw) if raw else math.nan
                except ValueError:
                    raise ValueError(f"{path}:{line}: bad value {raw!r} for {col}") from None
            rows.append(LeaderboardRow(rec["method"].strip(), (rec.get("backbone") or "").strip(), values))
    if not rows:
        raise ValueError(f"{path}: no rows")
    return rows


def _fmt(v: float) -> str:
    return "-" if math.isnan(v) else f"{v:.3f}"


def write_leaderboard_csv(rows: List[LeaderboardRow], path, metrics: Sequence[str] = SCALAR_FIELDS) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "backbone", *metrics, *(f"{m}_rank" for m in metrics), *(f"{m}_marker" for m in metrics)])
        for r in rows:
            w.writerow(
                [r.method, r.backbone]
                + [repr(r.values.get(m, math.nan)) for m in metrics]
                + [r.ranks.get(m, "") for m in metrics]
                + [r.markers.get(m, "") for m in metrics]
            )
    return path


def leaderboard_markdown(rows: List[LeaderboardRow], metrics: Sequence[str] = SCALAR_FIELDS) -> str:
    head = ["Method", "Backbone"] + [METRIC_LABELS[m] for m in metrics]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for r in rows:
        cells = [r.method, r.backbone or "-"]
        for m in metrics:
            mark = r.markers.get(m)
            cells.append(_fmt(r.values.get(m, math.nan)) + (f" {MARKER_SYMBOLS[mark]}" if mark else ""))
        lines.append("| " + " | ".join(cells) + " |")
    legend = ", ".join(f"{MARKER_SYMBOLS[c]} top-{k}" for k, c in MARKERS.items())
    return "\n".join(lines) + f"\n\n{legend}; ties broken by method name.\n"


def write_leaderboard(rows: List[LeaderboardRow], out_dir, stem: str = "leaderboard") -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    assign_ranks(rows)
    md = out_dir / f"{stem}.md"
    md.write_text(leaderboard_markdown(rows), encoding="utf-8")
    return {"csv": write_leaderboard_csv(rows, out_dir / f"{stem}.csv"), "markdown": md}


def write_curves_csv(report: AggregateReport, path) -> Path:
    """256 rows: threshold, mean precision, mean recall, mean F_beta."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for row in zip(THRESHOLDS, report.precision_curve, report.recall_curve, report.f_curve):
            w.writerow([repr(float(v)) for v in row])
    return path


def read_curves_csv(path) -> Dict[str, np.ndarray]:
    data = np.genfromtxt(path, delimiter=",", names=True)
    return {k: np.asarray(data[k]) for k in CURVE_HEADER}


def metric_header(metrics: Sequence[str] = TEST_ROW_FIELDS) -> List[str]:
    return [METRIC_LABELS[m] for m in metrics]


def format_test_rows(name: str, report: AggregateReport) -> Dict[str, str]:
    """Four-metric row (Sα, F^w_β, M, E^ad_φ) followed by the full nine, as CSV and Markdown."""
    out = {}
    for key, metrics in (("four", TEST_ROW_FIELDS), ("nine", SCALAR_FIELDS)):
        vals = [_fmt(report.means[m]) for m in metrics]
        out[f"{key}_csv"] = ",".join(["Method", *metric_header(metrics)]) + "\n" + ",".join([name, *vals]) + "\n"
        head = ["Method", *metric_header(metrics)]
        out[f"{key}_md"] = (
            "| " + " | ".join(head) + " |\n|" + "---|" * len(head) + "\n| " + " | ".join([name, *vals]) + " |\n"
        )
    return out


def write_test_report(name: str, report: AggregateReport, out_dir) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = format_test_rows(name, report)
    paths = {
        "row": out_dir / "test_row.csv",
        "full": out_dir / "test_full.csv",
        "markdown": out_dir / "test_report.md",
        "slices": out_dir / "attribute_slices.csv",
        "curves": out_dir / "curves.csv",
    }
    paths["row"].write_text(rows["four_csv"], encoding="utf-8")
    paths["full"].write_text(rows["nine_csv"], encoding="utf-8")
    paths["markdown"].write_text(rows["four_md"] + "\n" + rows["nine_md"], encoding="utf-8")
    write_slices_csv(report, paths["slices"])
    write_curves_csv(report, paths["curves"])
    return paths


def write_slices_csv(report: AggregateReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slice", "n_images", *SCALAR_FIELDS])
        w.writerow(["all", report.n_images, *(repr(report.means[m]) for m in SCALAR_FIELDS)])
        for code, sub in report.slices.items():
            w.writerow([code, sub.n_images, *(repr(sub.means[m]) for m in SCALAR_FIELDS)])
    return path


def _param_cell(v) -> str:
    if isinstance(v, bool):
        return "✓" if v else ""
    return str(v)


def ablation_table(axis: str, rows) -> Dict[str, str]:
    """Rows of :class:`pcnet.engine.AblationRow` -> {"csv": ..., "markdown": ...}."""
    metrics = AXIS_FIELDS[axis]
    params = list(rows[0].params) if rows else []
    if axis == "resolution":
        params = ["input_size"]
    head = [*params, *metric_header(metrics)]
    csv_lines = [",".join([*params, *metrics, "config"])]
    md = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for r in rows:
        pcells = [_param_cell(r.params[p]) for p in params]
        if axis == "resolution":
            pcells = [f"{r.params['input_size']}x{r.params['input_size']}"]
        vals = [r.report.means[m] if r.report else math.nan for m in metrics]
        csv_lines.append(",".join([*(str(r.params[p]) for p in params), *(repr(v) for v in vals), r.config_digest]))
        md.append("| " + " | ".join([*pcells, *(_fmt(v) for v in vals)]) + " |")
    return {"csv": "\n".join(csv_lines) + "\n", "markdown": "\n".join(md) + "\n"}


def write_ablation_tables(tables: dict, out_dir) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for axis, rows in tables.items():
        t = ablation_table(axis, rows)
        (out_dir / f"ablation_{axis}.csv").write_text(t["csv"], encoding="utf-8")
        (out_dir / f"ablation_{axis}.md").write_text(t["markdown"], encoding="utf-8")
        paths[axis] = out_dir / f"ablation_{axis}.csv"
    return paths
