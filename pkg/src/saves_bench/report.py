"""Run reports: JSON, per-frame CSV, comparison text tables and SVG plots.

Every writer is deterministic: same inputs give the same bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .core import Trajectory
from .errors import EvaluationError

SCHEMA_VERSION = 1
DEPTH_CSV_FIELDS = ("frame_id", "label", "abs_error_rel", "sq_error_rel", "irmse", "rmse",
                    "valid_pixel_count", "scale_factor")
DEPTH_MEAN_FIELDS = ("abs_error_rel", "sq_error_rel", "irmse", "rmse", "scale_factor")
# column order of the depth tables: sqErrorRel, absErrorRel, iRMSE, RMSE
DEPTH_TABLE_COLUMNS = (("sq_error_rel", "sqErrorRel"), ("abs_error_rel", "absErrorRel"),
                       ("irmse", "iRMSE"), ("rmse", "RMSE"))
ODOM_TABLE_COLUMNS = (("ape_rmse", "APE(m)"), ("ape_percent", "APE(%)"))
AGGREGATE_TOL = 1e-12


@dataclass
class RunReport:
    kind: str                                   # "depth" or "odometry"
    config_echo: dict
    per_frame: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    skips: list = field(default_factory=list)
    definitions: dict = field(default_factory=dict)
    tool_version: str = __version__

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "tool_version": self.tool_version,
            "kind": self.kind,
            "config_echo": self.config_echo,
            "definitions": self.definitions,
            "per_frame": self.per_frame,
            "aggregate": self.aggregate,
            "skips": [{"frame_id": f, "reason": r} for f, r in self.skips],
        }


def mean_exact(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def aggregate_depth(per_frame: list) -> dict:
    """Per-label means of every metric plus frame and pixel counts."""
    groups: dict = {}
    for row in per_frame:
        groups.setdefault(row["label"], []).append(row)
    agg = {}
    for label in sorted(groups):
        rows = groups[label]
        entry = {k: mean_exact(r[k] for r in rows) for k in DEPTH_MEAN_FIELDS}
        entry["frame_count"] = len(rows)
        entry["valid_pixel_count"] = sum(r["valid_pixel_count"] for r in rows)
        agg[label] = entry
    return agg


def verify_aggregate(per_frame: list, aggregate: dict, fields=DEPTH_MEAN_FIELDS) -> None:
    """Recompute each aggregate mean independently and refuse to emit a mismatch."""
    for label, entry in aggregate.items():
        rows = [r for r in per_frame if r["label"] == label]
        if len(rows) != entry["frame_count"]:
            raise EvaluationError(f"aggregate frame count mismatch for {label!r}")
        for k in fields:
            ref = float(np.mean([r[k] for r in rows]))
            if abs(ref - entry[k]) > AGGREGATE_TOL * max(1.0, abs(ref)):
                raise EvaluationError(f"aggregate {k} for {label!r} deviates from per-frame mean")


def build_depth_report(run, config_echo: dict, definitions: dict) -> RunReport:
    per_frame = [{"frame_id": fid, "label": label, **m.as_dict()} for fid, label, m in run.rows]
    aggregate = aggregate_depth(per_frame)
    verify_aggregate(per_frame, aggregate)
    return RunReport("depth", config_echo, per_frame, aggregate, list(run.skips), dict(definitions))


def build_odom_report(metrics, label: str, config_echo: dict, definitions: dict) -> RunReport:
    row = {"label": label, **metrics.as_dict()}
    agg = {label: {"ape_rmse": metrics.ape_rmse, "ape_percent": metrics.ape_percent,
                   "path_length": metrics.path_length,
                   "matched_pose_count": metrics.matched_pose_count, "frame_count": 1}}
    return RunReport("odometry", config_echo, [row], agg, [], dict(definitions))


def dumps_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_text(path, text: str) -> None:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def write_report_json(report: RunReport, path) -> None:
    write_text(path, dumps_json(report.to_dict()))


def depth_csv(per_frame: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(DEPTH_CSV_FIELDS)
    for row in per_frame:
        writer.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in DEPTH_CSV_FIELDS])
    return buf.getvalue()


def _grid(header: list, rows: list) -> str:
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    fmt = lambda r: "  ".join(str(c).rjust(w) if i else str(c).ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(header), sep] + [fmt(r) for r in rows]) + "\n"


def render_table(reports: list) -> str:
    """Models (rows) x datasets (column groups) x metrics, one table per report kind.

    ``reports`` are report dicts as written to report.json; depth and odometry
    reports are rendered as separate tables.
    """
    out = []
    for kind, columns, who in (("depth", DEPTH_TABLE_COLUMNS, "model"),
                               ("odometry", ODOM_TABLE_COLUMNS, "method")):
        chosen = [r for r in reports if r["kind"] == kind]
        if not chosen:
            continue
        cells: dict = {}
        datasets: list = []
        for r in chosen:
            name = r["config_echo"].get(who, who)
            for label, agg in r["aggregate"].items():
                if label not in datasets:
                    datasets.append(label)
                cells[(name, label)] = agg
        models = list(dict.fromkeys(r["config_echo"].get(who, who) for r in chosen))
        header = [who.capitalize()] + [f"{ds}:{title}" for ds in datasets for _, title in columns]
        rows = []
        for m in models:
            row = [m]
            for ds in datasets:
                agg = cells.get((m, ds))
                row += [f"{agg[key]:.4f}" if agg else "-" for key, _ in columns]
            rows.append(row)
        defs = chosen[0].get("definitions", {})
        notes = "".join(f"# {k}: {v}\n" for k, v in sorted(defs.items()))
        out.append(f"[{kind}]\n{notes}{_grid(header, rows)}")
    return "\n".join(out)


def trajectory_svg(ref: Trajectory, est: Trajectory, size: int = 600, margin: int = 20) -> str:
    """Top-down (x, y) plot of reference and estimate as two polylines."""
    pts = np.vstack([ref.positions[:, :2], est.positions[:, :2]])
    lo = pts.min(axis=0)
    span = float(max(np.max(pts.max(axis=0) - lo), 1e-9))
    scale = (size - 2 * margin) / span

    def poly(traj, color, name):
        xy = traj.positions[:, :2]
        coords = " ".join(f"{margin + (x - lo[0]) * scale:.6f},{size - margin - (y - lo[1]) * scale:.6f}"
                          for x, y in xy)
        return (f'  <polyline id="{name}" fill="none" stroke="{color}" stroke-width="1.5" '
                f'points="{coords}"/>\n')

    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">\n'
        f'  <rect width="{size}" height="{size}" fill="white"/>\n'
        + poly(ref, "black", "reference")
        + poly(est, "red", "estimate")
        + f'  <text x="{margin}" y="{margin - 5}" font-size="12">reference (black), '
          f'estimate (red); 1 m = {scale:.6f} px</text>\n'
        '</svg>\n'
    )
