"""Frame manifest: the dataset-agnostic index every command consumes.

The manifest is a single UTF-8 JSON document::

    {
      "format": "saves-manifest",
      "version": 1,
      "dataset_label": "carla",
      "intrinsics": {"fx": 721.5, "fy": 721.5, "cx": 609.5, "cy": 172.8,
                     "width": 1242, "height": 375},
      "cam_from_lidar": {"rotation_wxyz": [1, 0, 0, 0], "translation": [0, 0, 0]},
      "frames": [
        {"frame_id": "000000", "timestamp": 0.0,
         "rgb_path": "image/000000.png", "gt_depth_path": "depth/000000.png",
         "pred_depth_path": null, "cloud_path": null, "label": null}
      ]
    }

Paths are stored relative to the manifest's directory and resolved to
absolute paths on load. ``label`` optionally overrides ``dataset_label`` for a
single frame. Unknown keys are ignored.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..core import CameraIntrinsics, RigidTransform
from ..errors import ManifestError

MANIFEST_FORMAT = "saves-manifest"
MANIFEST_VERSION = 1
PATH_FIELDS = ("rgb_path", "pred_depth_path", "gt_depth_path", "cloud_path")


@dataclass(frozen=True)
class FrameRecord:
    frame_id: str
    timestamp: float
    rgb_path: Optional[str] = None
    pred_depth_path: Optional[str] = None
    gt_depth_path: Optional[str] = None
    cloud_path: Optional[str] = None
    label: Optional[str] = None


@dataclass(frozen=True)
class FrameManifest:
    frames: tuple
    intrinsics: CameraIntrinsics
    cam_from_lidar: RigidTransform = field(default_factory=RigidTransform.identity)
    dataset_label: str = "dataset"

    def __post_init__(self):
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        seen = set()
        prev_t = -math.inf
        for fr in frames:
            if fr.frame_id in seen:
                raise ManifestError(f"duplicate frame_id {fr.frame_id!r}")
            seen.add(fr.frame_id)
            if not math.isfinite(fr.timestamp):
                raise ManifestError(f"frame {fr.frame_id!r}: timestamp must be finite")
            if fr.timestamp < prev_t:
                raise ManifestError(f"frame {fr.frame_id!r}: timestamps must be nondecreasing")
            prev_t = fr.timestamp

    def label_of(self, frame: FrameRecord) -> str:
        return frame.label if frame.label is not None else self.dataset_label

    def frame(self, frame_id: str) -> FrameRecord:
        for fr in self.frames:
            if fr.frame_id == frame_id:
                return fr
        raise KeyError(frame_id)

    def with_frames(self, frames) -> "FrameManifest":
        return replace(self, frames=tuple(frames))


def _require(obj, key, kind, where):
    if not isinstance(obj, dict) or key not in obj:
        raise ManifestError(f"{where}: missing {key}")
    val = obj[key]
    if kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ManifestError(f"{where}: {key} must be a number")
        return float(val)
    if kind is str:
        if not isinstance(val, str):
            raise ManifestError(f"{where}: {key} must be a string")
        return val
    return val


def _parse_intrinsics(doc) -> CameraIntrinsics:
    raw = doc.get("intrinsics")
    if raw is None:
        raise ManifestError("missing intrinsics")
    vals = {k: _require(raw, k, float, "intrinsics") for k in ("fx", "fy", "cx", "cy", "width", "height")}
    try:
        return CameraIntrinsics(**vals)
    except ValueError as exc:
        raise ManifestError(f"intrinsics: {exc}") from None


def _parse_extrinsic(raw) -> RigidTransform:
    if raw is None:
        return RigidTransform.identity()
    try:
        if "matrix" in raw:
            m = np.asarray(raw["matrix"], dtype=float)
            if m.shape not in ((3, 4), (4, 4)):
                raise ValueError("matrix must be 3x4 or 4x4")
            return RigidTransform.from_matrix(m)
        return RigidTransform(raw["rotation_wxyz"], raw["translation"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"cam_from_lidar: {exc}") from None


def manifest_from_dict(doc: dict, base_dir: str = ".", check_paths: bool = True) -> FrameManifest:
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a JSON object")
    intrinsics = _parse_intrinsics(doc)
    extrinsic = _parse_extrinsic(doc.get("cam_from_lidar"))
    label = doc.get("dataset_label", "dataset")
    if not isinstance(label, str):
        raise ManifestError("dataset_label must be a string")
    raw_frames = doc.get("frames", [])
    if not isinstance(raw_frames, list):
        raise ManifestError("frames must be a list")
    frames = []
    for i, raw in enumerate(raw_frames):
        where = f"frames[{i}]"
        fid = _require(raw, "frame_id", str, where)
        ts = _require(raw, "timestamp", float, where)
        paths = {}
        for key in PATH_FIELDS:
            val = raw.get(key)
            if val is None:
                paths[key] = None
                continue
            if not isinstance(val, str):
                raise ManifestError(f"{where}: {key} must be a string or null")
            full = os.path.normpath(os.path.join(base_dir, val))
            if check_paths and not os.path.exists(full):
                raise ManifestError(f"dangling path in frame {fid!r}: {val}")
            paths[key] = full
        frame_label = raw.get("label")
        if frame_label is not None and not isinstance(frame_label, str):
            raise ManifestError(f"{where}: label must be a string or null")
        frames.append(FrameRecord(fid, ts, label=frame_label, **paths))
    return FrameManifest(tuple(frames), intrinsics, extrinsic, label)


def manifest_to_dict(manifest: FrameManifest, base_dir: str = ".") -> dict:
    def rel(p):
        if p is None:
            return None
        return os.path.relpath(p, base_dir).replace(os.sep, "/")

    k = manifest.intrinsics
    return {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "dataset_label": manifest.dataset_label,
        "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
                       "width": k.width, "height": k.height},
        "cam_from_lidar": {
            "rotation_wxyz": [float(v) for v in manifest.cam_from_lidar.rotation],
            "translation": [float(v) for v in manifest.cam_from_lidar.translation],
        },
        "frames": [
            {"frame_id": fr.frame_id, "timestamp": fr.timestamp,
             **{key: rel(getattr(fr, key)) for key in PATH_FIELDS},
             "label": fr.label}
            for fr in manifest.frames
        ],
    }


def load_manifest(path, check_paths: bool = True) -> FrameManifest:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ManifestError(f"not found: {path}") from None
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot parse manifest {path}: {exc}") from None
    base = os.path.dirname(os.path.abspath(path))
    return manifest_from_dict(doc, base, check_paths)


def save_manifest(manifest: FrameManifest, path) -> None:
    base = os.path.dirname(os.path.abspath(path))
    os.makedirs(base, exist_ok=True)
    doc = manifest_to_dict(manifest, base)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
