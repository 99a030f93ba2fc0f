"""Monocular depth evaluation: resize, per-image median scale matching, metrics.

Metric definitions (KITTI devkit conventions), over the joint mask of pixels
valid in both maps with ground truth inside ``[min_depth, max_depth]``, with
``d`` the prediction and ``g`` the ground truth in meters:

    absErrorRel = mean(|d - g| / g)
    sqErrorRel  = mean((d - g)^2 / g)
    RMSE        = sqrt(mean((d - g)^2))                 meters
    iRMSE       = sqrt(mean((1000/g - 1000/d)^2))       1/km
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import DepthMap, DepthMetrics, median
from .errors import ConfigError, EvaluationError, FormatError
from .formats import FrameManifest, read_depth_png

log = logging.getLogger(__name__)

METRIC_DEFINITIONS = {
    "abs_error_rel": "mean(|d-g|/g)",
    "sq_error_rel": "mean((d-g)^2/g) [m]",
    "irmse": "sqrt(mean((1000/g-1000/d)^2)) [1/km]",
    "rmse": "sqrt(mean((d-g)^2)) [m]",
    "scale": "median(g)/median(d) per image, lower median, joint mask",
}


@dataclass(frozen=True)
class DepthEvalConfig:
    min_depth: float = 1e-3
    max_depth: float = 80.0
    interpolation: str = "bilinear"
    clamp_pred: bool = True

    def __post_init__(self):
        if not (0 < self.min_depth < self.max_depth) or not np.isfinite(self.max_depth):
            raise ConfigError(
                f"need 0 < min_depth < max_depth, got {self.min_depth}, {self.max_depth}")
        if self.interpolation != "bilinear":
            raise ConfigError(f"unsupported interpolation {self.interpolation!r}")

    @classmethod
    def from_dict(cls, raw: dict) -> "DepthEvalConfig":
        known = {"min_depth", "max_depth", "interpolation", "clamp_pred"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown depth config keys: {sorted(unknown)}")
        try:
            vals = {k: raw[k] for k in known & set(raw)}
            for k in ("min_depth", "max_depth"):
                if k in vals:
                    vals[k] = float(vals[k])
            if "clamp_pred" in vals and not isinstance(vals["clamp_pred"], bool):
                raise ConfigError("clamp_pred must be true or false")
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad depth config: {exc}") from None
        return cls(**vals)

    def as_dict(self) -> dict:
        return asdict(self)


def _axis_weights(n_src: int, n_dst: int):
    """Align-corners sample positions: left index, right index, right weight."""
    if n_dst == 1 or n_src == 1:
        pos = np.zeros(n_dst)
    else:
        pos = np.arange(n_dst) * ((n_src - 1) / (n_dst - 1))
    lo = np.clip(np.floor(pos).astype(int), 0, n_src - 1)
    hi = np.minimum(lo + 1, n_src - 1)
    frac = pos - lo
    frac[hi == lo] = 0.0
    return lo, hi, frac


def resize_depth(depth: DepthMap, target_w: int, target_h: int) -> DepthMap:
    """Bilinear resize with align-corners mapping.

    An output pixel is valid only if every source pixel with nonzero weight is
    valid, so no depth is invented across holes in sparse ground truth.
    """
    if target_w <= 0 or target_h <= 0:
        raise ValueError(f"target size must be positive, got {target_w}x{target_h}")
    if (target_h, target_w) == depth.shape:
        return depth
    x0, x1, fx = _axis_weights(depth.width, target_w)
    y0, y1, fy = _axis_weights(depth.height, target_h)
    v, ok = depth.values, depth.valid
    fx_, fy_ = fx[None, :], fy[None, :].T
    top = v[np.ix_(y0, x0)] * (1 - fx_) + v[np.ix_(y0, x1)] * fx_
    bot = v[np.ix_(y1, x0)] * (1 - fx_) + v[np.ix_(y1, x1)] * fx_
    out = top * (1 - fy_) + bot * fy_

    use_x1 = (fx_ > 0)
    use_y1 = (fy_ > 0)
    valid = (ok[np.ix_(y0, x0)]
             & (~use_x1 | ok[np.ix_(y0, x1)])
             & (~use_y1 | ok[np.ix_(y1, x0)])
             & (~(use_x1 & use_y1) | ok[np.ix_(y1, x1)]))
    return DepthMap(np.where(valid, out, 0.0), valid)


def joint_mask(pred: DepthMap, gt: DepthMap, cfg: DepthEvalConfig) -> np.ndarray:
    if pred.shape != gt.shape:
        raise EvaluationError(f"shape mismatch: prediction {pred.shape} vs ground truth {gt.shape}")
    in_range = (gt.values >= cfg.min_depth) & (gt.values <= cfg.max_depth)
    return pred.valid & gt.valid & in_range


def scale_match(pred: DepthMap, gt: DepthMap, cfg: DepthEvalConfig = DepthEvalConfig()):
    """Rescale ``pred`` by ``median(gt) / median(pred)`` over the joint mask.

    Returns ``(scaled_prediction, scale)``; the scale multiplies every
    prediction pixel, not only the masked ones.
    """
    if pred.shape != gt.shape:
        raise EvaluationError(f"shape mismatch: prediction {pred.shape} vs ground truth {gt.shape}")
    gt_mask = gt.valid & (gt.values >= cfg.min_depth) & (gt.values <= cfg.max_depth)
    if not gt_mask.any():
        raise EvaluationError("no overlapping valid pixels")
    if not pred.valid[gt_mask].any():
        # a map of zeros decodes as "no prediction at all" under the PNG sentinel
        if not pred.valid.any():
            raise EvaluationError("degenerate prediction")
        raise EvaluationError("no overlapping valid pixels")
    mask = gt_mask & pred.valid
    med_pred = median(pred.values[mask])
    if not med_pred > 0:
        raise EvaluationError("degenerate prediction")
    scale = median(gt.values[mask]) / med_pred
    return DepthMap(pred.values * scale, pred.valid), float(scale)


def compute_depth_metrics(pred_scaled: DepthMap, gt: DepthMap,
                          cfg: DepthEvalConfig = DepthEvalConfig(),
                          scale_factor: float = 1.0) -> DepthMetrics:
    mask = joint_mask(pred_scaled, gt, cfg)
    n = int(np.count_nonzero(mask))
    if n == 0:
        raise EvaluationError("no overlapping valid pixels")
    d = pred_scaled.values[mask]
    g = gt.values[mask]
    if cfg.clamp_pred:
        d = np.clip(d, cfg.min_depth, cfg.max_depth)
    diff = d - g
    return DepthMetrics(
        abs_error_rel=float(np.mean(np.abs(diff) / g)),
        sq_error_rel=float(np.mean(diff * diff / g)),
        irmse=float(np.sqrt(np.mean((1000.0 / g - 1000.0 / d) ** 2))),
        rmse=float(np.sqrt(np.mean(diff * diff))),
        valid_pixel_count=n,
        scale_factor=float(scale_factor),
    )


def evaluate_frame(pred: DepthMap, gt: DepthMap, cfg: DepthEvalConfig = DepthEvalConfig()) -> DepthMetrics:
    """Resize to ground-truth size, scale-match, then score."""
    pred = resize_depth(pred, gt.width, gt.height)
    scaled, scale = scale_match(pred, gt, cfg)
    return compute_depth_metrics(scaled, gt, cfg, scale)


@dataclass
class DepthRun:
    rows: list = field(default_factory=list)    # (frame_id, label, DepthMetrics)
    skips: list = field(default_factory=list)   # (frame_id, reason)


def _prediction_path(frame, predictions_dir):
    if predictions_dir is None:
        return frame.pred_depth_path
    return os.path.join(predictions_dir, f"{frame.frame_id}.png")


def evaluate_depth_run(manifest: FrameManifest, predictions_dir=None,
                       cfg: DepthEvalConfig = DepthEvalConfig(), workers: int = 1) -> DepthRun:
    """Evaluate every frame that has ground truth, ordered by frame_id.

    Predictions are looked up as ``<predictions_dir>/<frame_id>.png``, or via the
    manifest's ``pred_depth_path`` when no directory is given. Per-frame
    failures are recorded as skips; only a run with nothing evaluable raises.
    """
    frames = sorted((f for f in manifest.frames if f.gt_depth_path), key=lambda f: f.frame_id)
    if not frames:
        raise EvaluationError("no frame in the manifest has gt_depth_path; depth evaluation needs ground truth")

    def run_one(frame):
        pred_path = _prediction_path(frame, predictions_dir)
        if pred_path is None:
            return frame, None, "no prediction path"
        if not os.path.exists(pred_path):
            return frame, None, f"missing prediction {pred_path}"
        try:
            gt = read_depth_png(frame.gt_depth_path)
            pred = read_depth_png(pred_path)
            return frame, evaluate_frame(pred, gt, cfg), None
        except (FormatError, EvaluationError) as exc:
            return frame, None, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, frames))
    else:
        results = [run_one(f) for f in frames]

    run = DepthRun()
    for frame, metrics, reason in results:
        if metrics is None:
            log.warning("skipping frame %s: %s", frame.frame_id, reason)
            run.skips.append((frame.frame_id, reason))
        else:
            run.rows.append((frame.frame_id, manifest.label_of(frame), metrics))
    if not run.rows:
        raise EvaluationError(f"zero evaluable frames ({len(run.skips)} skipped)")
    return run
