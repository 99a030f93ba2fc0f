"""Command line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .adapt import SparsityProfile, depth_statistics, mask_depth, project_cloud, sparsify
from .core import CameraIntrinsics, RigidTransform, nearest_rotation
from .depth_eval import METRIC_DEFINITIONS, DepthEvalConfig, evaluate_depth_run
from .errors import ConfigError, EvaluationError, FormatError, ManifestError
from .formats import (
    DEFAULT_FRAME_PERIOD,
    MAX_ENCODABLE_DEPTH,
    FrameManifest,
    FrameRecord,
    load_manifest,
    read_depth_png,
    read_pointcloud_bin,
    read_trajectory,
    save_manifest,
    write_depth_png,
    write_trajectory_tum,
)
from .formats.png import _check_header
from .odom_eval import ALIGN_MODES, AssociationConfig, evaluate_odometry
from .report import (
    build_depth_report,
    build_odom_report,
    depth_csv,
    dumps_json,
    render_table,
    trajectory_svg,
    write_report_json,
    write_text,
)

log = logging.getLogger("saves_bench")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
THREADS_ENV = "SAVES_BENCH_THREADS"

ODOM_DEFINITIONS = {
    "ape_rmse": "sqrt(mean ||t_ref - t_est||^2) over matched poses [m], translation only",
    "ape_percent": "100 * ape_rmse / reference path length over the matched span",
    "alignment": "origin: est left-multiplied by ref_0 * est_0^-1; umeyama: least-squares rigid/similarity",
}


def worker_count(requested=None) -> int:
    if requested:
        return max(1, int(requested))
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def load_config(path, section: str) -> dict:
    """Read a JSON config file; use ``doc[section]`` if present, else the whole document."""
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    raw = doc.get(section, doc)
    if not isinstance(raw, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    return dict(raw)


def _need_file(path, what):
    if not os.path.isfile(path):
        raise ConfigError(f"{what} not found: {path}")


def _safe_name(frame_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", frame_id)


# ---- eval-depth -----------------------------------------------------------------

def cmd_eval_depth(args) -> int:
    raw = load_config(args.config, "depth")
    for key in ("min_depth", "max_depth"):
        if getattr(args, key) is not None:
            raw[key] = getattr(args, key)
    if args.no_clamp:
        raw["clamp_pred"] = False
    cfg = DepthEvalConfig.from_dict(raw)
    _need_file(args.manifest, "manifest")
    manifest = load_manifest(args.manifest)
    if not any(f.gt_depth_path for f in manifest.frames):
        raise ConfigError("depth evaluation needs gt_depth_path on at least one manifest frame")
    if args.pred_dir is not None and not os.path.isdir(args.pred_dir):
        raise ConfigError(f"prediction directory not found: {args.pred_dir}")

    run = evaluate_depth_run(manifest, args.pred_dir, cfg, worker_count(args.threads))
    echo = {
        "command": "eval-depth",
        "manifest": args.manifest,
        "pred_dir": args.pred_dir,
        "config_file": args.config,
        "model": args.model,
        "depth": cfg.as_dict(),
    }
    report = build_depth_report(run, echo, METRIC_DEFINITIONS)
    table = render_table([report.to_dict()])
    write_report_json(report, os.path.join(args.out, "report.json"))
    write_text(os.path.join(args.out, "per_frame.csv"), depth_csv(report.per_frame))
    write_text(os.path.join(args.out, "table.txt"), table)
    print(table, end="")
    for fid, reason in run.skips:
        print(f"skipped {fid}: {reason}", file=sys.stderr)
    return EXIT_OK


# ---- eval-odom ------------------------------------------------------------------

def cmd_eval_odom(args) -> int:
    raw = load_config(args.config, "odom")
    align = args.align or raw.get("align", "origin")
    if align not in ALIGN_MODES:
        raise ConfigError(f"unknown alignment mode {align!r}")
    try:
        max_dt = float(args.max_time_diff if args.max_time_diff is not None else raw.get("max_time_diff", 0.01))
        offset = float(args.offset if args.offset is not None else raw.get("offset", 0.0))
        period = float(args.frame_period if args.frame_period is not None
                       else raw.get("frame_period", DEFAULT_FRAME_PERIOD))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad odometry config: {exc}") from None
    assoc = AssociationConfig(max_dt, offset)
    if not period > 0:
        raise ConfigError("frame_period must be > 0")
    _need_file(args.ref, "reference trajectory")
    _need_file(args.est, "estimated trajectory")
    ref = read_trajectory(args.ref, args.ref_format, period)
    est = read_trajectory(args.est, args.est_format, period)

    metrics, aligned, _ = evaluate_odometry(ref, est, align, assoc)
    echo = {
        "command": "eval-odom",
        "ref": args.ref,
        "est": args.est,
        "ref_format": args.ref_format,
        "est_format": args.est_format,
        "config_file": args.config,
        "align": align,
        "max_time_diff": max_dt,
        "offset": offset,
        "frame_period": period,
        "method": args.method,
        "label": args.label,
    }
    report = build_odom_report(metrics, args.label, echo, ODOM_DEFINITIONS)
    table = render_table([report.to_dict()])
    write_report_json(report, os.path.join(args.out, "report.json"))
    write_text(os.path.join(args.out, "table.txt"), table)
    write_trajectory_tum(aligned, os.path.join(args.out, "aligned_estimate.tum"))
    write_text(os.path.join(args.out, "trajectory.svg"), trajectory_svg(ref, aligned))
    print(table, end="")
    return EXIT_OK


# ---- adapt ----------------------------------------------------------------------

def cmd_adapt(args) -> int:
    raw = load_config(args.config, "adapt")
    try:
        max_range = float(args.max_range if args.max_range is not None else raw.get("max_range", 80.0))
    except (TypeError, ValueError):
        raise ConfigError("max_range must be a number") from None
    if not 0 < max_range <= MAX_ENCODABLE_DEPTH:
        raise ConfigError(f"max_range must lie in (0, {MAX_ENCODABLE_DEPTH}] for 16-bit PNG output")
    profile = None
    if args.keep is not None:
        profile = SparsityProfile.uniform(args.keep, args.seed or 0)
    elif raw.get("sparsity") is not None:
        profile = SparsityProfile.from_dict(raw["sparsity"])
    source = args.source or raw.get("source", "auto")
    if source not in ("auto", "gt", "cloud"):
        raise ConfigError(f"unknown depth source {source!r}")
    _need_file(args.manifest, "manifest")
    manifest = load_manifest(args.manifest)
    if not manifest.frames:
        raise ConfigError("manifest has no frames")
    out_dir = args.out

    def process(frame: FrameRecord):
        try:
            if source in ("auto", "gt") and frame.gt_depth_path:
                depth, used = read_depth_png(frame.gt_depth_path), "gt"
            elif source in ("auto", "cloud") and frame.cloud_path:
                cloud = read_pointcloud_bin(frame.cloud_path)
                depth, used = project_cloud(cloud, manifest.cam_from_lidar, manifest.intrinsics), "cloud"
            else:
                return frame, None, "no depth source"
        except FormatError as exc:
            return frame, None, str(exc)
        valid_in = depth.valid_count
        depth = mask_depth(depth, max_range)
        stream = zlib.crc32(frame.frame_id.encode("utf-8"))
        if profile is not None:
            depth = sparsify(depth, profile, stream=stream)
        path = os.path.abspath(os.path.join(out_dir, "depth", _safe_name(frame.frame_id) + ".png"))
        write_depth_png(depth, path)
        record = {"frame_id": frame.frame_id, "source": used, "stream": stream,
                  "valid_in": valid_in, "valid_out": depth.valid_count}
        return frame, (path, record), None

    workers = worker_count(args.threads)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(process, manifest.frames))
    else:
        results = [process(f) for f in manifest.frames]

    frames, records, skips = [], [], []
    for frame, done, reason in results:
        if done is None:
            skips.append({"frame_id": frame.frame_id, "reason": reason})
            frames.append(frame)
            continue
        path, rec = done
        records.append(rec)
        frames.append(FrameRecord(frame.frame_id, frame.timestamp, frame.rgb_path,
                                  frame.pred_depth_path, path, frame.cloud_path, frame.label))
    if not records:
        raise EvaluationError("no frame had a usable depth source")

    save_manifest(manifest.with_frames(frames), os.path.join(out_dir, "manifest.json"))
    meta = {
        "tool_version": __version__,
        "max_range": max_range,
        "source": source,
        "sparsity": profile.as_dict() if profile else None,
        "frames": records,
        "skips": skips,
    }
    write_text(os.path.join(out_dir, "adapt_meta.json"), dumps_json(meta))
    print(f"adapted {len(records)} frames ({len(skips)} skipped) into {out_dir}")
    return EXIT_OK


# ---- stats ----------------------------------------------------------------------

class _PngMaps:
    """Re-iterable view over depth PNGs; each pass re-reads from disk."""

    def __init__(self, paths):
        self.paths = list(paths)

    def __iter__(self):
        for p in self.paths:
            yield read_depth_png(p)


def cmd_stats(args) -> int:
    _need_file(args.manifest, "manifest")
    manifest = load_manifest(args.manifest)
    if not manifest.frames:
        raise ConfigError("manifest has no frames")
    groups: dict = {}
    for fr in manifest.frames:
        if fr.gt_depth_path:
            groups.setdefault(manifest.label_of(fr), []).append(fr.gt_depth_path)
    if not groups:
        raise ConfigError("no manifest frame has gt_depth_path")
    summaries = {}
    for label in sorted(groups):
        try:
            summaries[label] = depth_statistics(_PngMaps(groups[label])).as_dict()
        except EvaluationError as exc:
            raise EvaluationError(f"{label}: {exc}") from None
    doc = {"tool_version": __version__, "manifest": args.manifest, "datasets": summaries}
    if args.out:
        write_text(args.out, dumps_json(doc))
    for label, s in summaries.items():
        pct = "  ".join(f"{k}={v:.3f}" for k, v in s["percentiles"].items())
        print(f"[{label}] pixels={s['count']} min={s['min']:.3f} max={s['max']:.3f} "
              f"mean={s['mean']:.3f} mean_above_p90={s['mean_above_p90']:.3f}\n  {pct}")
    return EXIT_OK


# ---- convert --------------------------------------------------------------------

def _strip_tag(stem: str, tag: str) -> str:
    if f"_{tag}_" in stem:
        return stem.replace(f"_{tag}", "", 1)
    if stem.startswith(f"{tag}_"):
        return stem[len(tag) + 1:]
    return stem


def _parse_intrinsics_flag(vals) -> CameraIntrinsics:
    try:
        fx, fy, cx, cy, w, h = vals
        return CameraIntrinsics(fx, fy, cx, cy, int(w), int(h))
    except ValueError as exc:
        raise ConfigError(f"bad --intrinsics: {exc}") from None


def _index_dir(path, suffix, tag):
    if not os.path.isdir(path):
        return {}, []
    found, rejected = {}, []
    for name in sorted(os.listdir(path)):
        full = os.path.join(path, name)
        stem, ext = os.path.splitext(name)
        if ext.lower() != suffix:
            rejected.append(full)
            continue
        found[_strip_tag(stem, tag)] = full
    return found, rejected


def _convert_kitti_depth(root, args, warnings):
    gt_dir = os.path.join(root, "groundtruth_depth")
    if not os.path.isdir(gt_dir):
        raise ConfigError(f"unrecognized layout: no groundtruth_depth/ under {root}")
    gts, rejected = _index_dir(gt_dir, ".png", "groundtruth_depth")
    images, _ = _index_dir(os.path.join(root, "image"), ".png", "image")
    preds, _ = _index_dir(os.path.join(root, "prediction"), ".png", "prediction")
    clouds, _ = _index_dir(os.path.join(root, "velodyne"), ".bin", "velodyne")
    calibs, _ = _index_dir(os.path.join(root, "intrinsics"), ".txt", "image")
    warnings.extend(f"not a PNG: {p}" for p in rejected)

    size = None
    good = {}
    for fid, path in gts.items():
        with open(path, "rb") as f:
            head = f.read(33)
        try:
            w, h = _check_header(head)
        except FormatError as exc:
            warnings.append(f"{path}: {exc}")
            rejected.append(path)
            continue
        size = size or (w, h)
        good[fid] = path
    if not good:
        first = rejected[0] if rejected else gt_dir
        raise ConfigError(f"unrecognized layout: no usable depth PNG, first unmatched path {first}")

    if args.intrinsics:
        K = _parse_intrinsics_flag(args.intrinsics)
    elif calibs:
        calib = calibs[sorted(calibs)[0]]
        try:
            with open(calib, "r", encoding="utf-8") as f:
                k = [float(x) for x in f.read().split()]
            K = CameraIntrinsics(k[0], k[4], k[2], k[5], *size)
        except (OSError, ValueError, IndexError) as exc:
            raise ConfigError(f"cannot read intrinsics {calib}: {exc}") from None
    else:
        raise ConfigError("missing intrinsics: pass --intrinsics or provide intrinsics/*.txt")

    frames = []
    for i, fid in enumerate(sorted(good)):
        frames.append(FrameRecord(fid, i * args.frame_period,
                                  rgb_path=_abs(images.get(fid)), pred_depth_path=_abs(preds.get(fid)),
                                  gt_depth_path=_abs(good[fid]), cloud_path=_abs(clouds.get(fid))))
    return frames, K


def _abs(p):
    return os.path.abspath(p) if p else None


def _convert_traj(path, kind, args, warnings):
    traj = read_trajectory(path, "tum" if kind == "tum-traj" else "kitti", args.frame_period)
    if len(traj) == 0:
        raise ConfigError(f"unrecognized layout: no poses in {path}")
    return [FrameRecord(f"{i:06d}", float(t)) for i, t in enumerate(traj.timestamps)]


def _convert_clouds(root, args, warnings):
    clouds, rejected = _index_dir(root, ".bin", "velodyne")
    warnings.extend(f"not a .bin scan: {p}" for p in rejected)
    frames = []
    for fid in sorted(clouds):
        size = os.path.getsize(clouds[fid])
        if size % 16:
            warnings.append(f"{clouds[fid]}: truncated point record")
            rejected.append(clouds[fid])
            continue
        frames.append(FrameRecord(fid, len(frames) * args.frame_period, cloud_path=_abs(clouds[fid])))
    if not frames:
        first = rejected[0] if rejected else root
        raise ConfigError(f"unrecognized layout: no usable scans, first unmatched path {first}")
    return frames


def cmd_convert(args) -> int:
    kind, src = args.kind, args.input
    if not os.path.exists(src):
        raise ConfigError(f"input not found: {src}")
    warnings: list = []
    if kind == "kitti-depth-layout":
        frames, K = _convert_kitti_depth(src, args, warnings)
    else:
        if not args.intrinsics:
            raise ConfigError("missing intrinsics: pass --intrinsics fx fy cx cy width height")
        K = _parse_intrinsics_flag(args.intrinsics)
        if kind in ("tum-traj", "kitti-traj"):
            if not os.path.isfile(src):
                raise ConfigError(f"unrecognized layout: {src} is not a trajectory file")
            frames = _convert_traj(src, kind, args, warnings)
        else:
            if not os.path.isdir(src):
                raise ConfigError(f"unrecognized layout: {src} is not a directory")
            frames = _convert_clouds(src, args, warnings)
    extrinsic = RigidTransform.identity()
    if args.cam_from_lidar:
        try:
            extrinsic = RigidTransform.from_matrix(_rowmajor_3x4(args.cam_from_lidar))
        except ValueError as exc:
            raise ConfigError(f"bad --cam-from-lidar: {exc}") from None
    manifest = FrameManifest(tuple(frames), K, extrinsic, args.label)
    save_manifest(manifest, args.out)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {args.out} with {len(frames)} frames ({len(warnings)} warnings)")
    return EXIT_OK


def _rowmajor_3x4(vals):
    m = np.asarray(vals, dtype=float).reshape(3, 4)
    rot = m[:, :3]
    if abs(np.linalg.det(rot) - 1.0) >= 1e-3:
        raise ValueError("rotation block is not a rotation")
    m[:, :3] = nearest_rotation(rot)
    return m


# ---- report ---------------------------------------------------------------------

def cmd_report(args) -> int:
    docs = []
    for p in args.reports:
        path = os.path.join(p, "report.json") if os.path.isdir(p) else p
        _need_file(path, "report")
        try:
            with open(path, "r", encoding="utf-8") as f:
                docs.append(json.load(f))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read report {path}: {exc}") from None
    for d in docs:
        if not isinstance(d, dict) or d.get("kind") not in ("depth", "odometry") or "aggregate" not in d:
            raise ConfigError("not a saves-bench report.json")
    table = render_table(docs)
    if args.out:
        write_text(args.out, table)
    print(table, end="")
    return EXIT_OK


# ---- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="saves-bench", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convert", help="index a dataset or trajectory into a frame manifest")
    c.add_argument("kind", choices=("kitti-depth-layout", "tum-traj", "kitti-traj", "cloud-dir"))
    c.add_argument("input")
    c.add_argument("--out", required=True, help="manifest path to write")
    c.add_argument("--intrinsics", nargs=6, type=float, metavar=("FX", "FY", "CX", "CY", "W", "H"))
    c.add_argument("--cam-from-lidar", nargs=12, type=float, metavar="M",
                   help="row-major 3x4 extrinsic taking LiDAR points to the camera frame")
    c.add_argument("--label", default="dataset")
    c.add_argument("--frame-period", type=float, default=DEFAULT_FRAME_PERIOD)
    c.set_defaults(func=cmd_convert)

    d = sub.add_parser("eval-depth", help="score depth predictions against ground truth")
    d.add_argument("--manifest", required=True)
    d.add_argument("--pred-dir", help="directory of <frame_id>.png predictions (default: manifest paths)")
    d.add_argument("--config")
    d.add_argument("--min-depth", type=float)
    d.add_argument("--max-depth", type=float)
    d.add_argument("--no-clamp", action="store_true", help="do not clamp predictions to the depth range")
    d.add_argument("--model", default="model")
    d.add_argument("--threads", type=int)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_eval_depth)

    o = sub.add_parser("eval-odom", help="absolute pose error of an estimated trajectory")
    o.add_argument("--ref", required=True)
    o.add_argument("--est", required=True)
    o.add_argument("--ref-format", choices=("auto", "tum", "kitti"), default="auto")
    o.add_argument("--est-format", choices=("auto", "tum", "kitti"), default="auto")
    o.add_argument("--align", choices=ALIGN_MODES)
    o.add_argument("--max-time-diff", type=float)
    o.add_argument("--offset", type=float)
    o.add_argument("--frame-period", type=float)
    o.add_argument("--config")
    o.add_argument("--method", default="method")
    o.add_argument("--label", default="dataset")
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_eval_odom)

    a = sub.add_parser("adapt", help="range-mask and sparsify synthetic depth")
    a.add_argument("--manifest", required=True)
    a.add_argument("--config")
    a.add_argument("--max-range", type=float)
    a.add_argument("--keep", type=float, help="uniform keep fraction (overrides the config profile)")
    a.add_argument("--seed", type=int)
    a.add_argument("--source", choices=("auto", "gt", "cloud"))
    a.add_argument("--threads", type=int)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_adapt)

    s = sub.add_parser("stats", help="depth distribution per dataset label")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)

    r = sub.add_parser("report", help="combine report.json files into one table")
    r.add_argument("reports", nargs="+")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EvaluationError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
