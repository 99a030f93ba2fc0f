"""TUM and KITTI trajectory text formats.

TUM: one pose per line, ``timestamp tx ty tz qx qy qz qw``; ``#`` starts a
comment. KITTI: one pose per line, 12 numbers forming a row-major 3x4
``[R | t]`` matrix, no time axis.
"""

from __future__ import annotations

import math
import os

import numpy as np

from ..core import RigidTransform, Trajectory, nearest_rotation
from ..errors import FormatError

DEFAULT_FRAME_PERIOD = 0.1
ROTATION_TOL = 1e-3


def _floats(parts, lineno):
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise FormatError(f"line {lineno}: non-numeric field") from None
    if not all(math.isfinite(v) for v in vals):
        raise FormatError(f"line {lineno}: non-finite value")
    return vals


def _read_text(path) -> str:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read()
    except FileNotFoundError:
        raise FormatError(f"not found: {path}") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


def parse_trajectory_tum(text: str, frame_id: str = "world") -> Trajectory:
    stamps, poses = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise FormatError(f"line {lineno}: expected 8 fields, got {len(parts)}")
        t, tx, ty, tz, qx, qy, qz, qw = _floats(parts, lineno)
        if stamps and t <= stamps[-1]:
            raise FormatError(f"timestamps not increasing at line {lineno}")
        try:
            pose = RigidTransform([qw, qx, qy, qz], [tx, ty, tz])
        except ValueError:
            raise FormatError(f"line {lineno}: invalid quaternion") from None
        stamps.append(t)
        poses.append(pose)
    return Trajectory(stamps, poses, frame_id)


def read_trajectory_tum(path, frame_id: str = "world") -> Trajectory:
    text = _read_text(path)
    try:
        return parse_trajectory_tum(text, frame_id)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def format_trajectory_tum(traj: Trajectory) -> str:
    lines = []
    for t, pose in zip(traj.timestamps, traj.poses):
        w, x, y, z = pose.rotation
        vals = (t, *pose.translation, x, y, z, w)
        lines.append(" ".join(repr(float(v)) for v in vals))
    return "\n".join(lines) + ("\n" if lines else "")


def write_trajectory_tum(traj: Trajectory, path) -> None:
    _write_text(path, format_trajectory_tum(traj))


def parse_trajectory_kitti(text: str, frame_period: float = DEFAULT_FRAME_PERIOD,
                           frame_id: str = "world") -> Trajectory:
    """Parse KITTI poses; timestamps are synthesized as ``index * frame_period``.

    Rotation blocks within ``ROTATION_TOL`` of orthonormal are snapped to the
    nearest rotation; anything further off is rejected.
    """
    if not frame_period > 0:
        raise FormatError("frame period must be > 0")
    poses = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 12:
            raise FormatError(f"line {lineno}: expected 12 fields, got {len(parts)}")
        m = np.array(_floats(parts, lineno)).reshape(3, 4)
        rot = m[:, :3]
        orth_err = np.max(np.abs(rot.T @ rot - np.eye(3)))
        if abs(np.linalg.det(rot) - 1.0) >= ROTATION_TOL or orth_err >= ROTATION_TOL:
            raise FormatError(f"invalid rotation at line {lineno}")
        m[:, :3] = nearest_rotation(rot)
        poses.append(RigidTransform.from_matrix(m))
    stamps = np.arange(len(poses)) * float(frame_period)
    return Trajectory(stamps, poses, frame_id, index_based=True)


def read_trajectory_kitti(path, frame_period: float = DEFAULT_FRAME_PERIOD,
                          frame_id: str = "world") -> Trajectory:
    text = _read_text(path)
    try:
        return parse_trajectory_kitti(text, frame_period, frame_id)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def format_trajectory_kitti(traj: Trajectory) -> str:
    lines = []
    for pose in traj.poses:
        m = pose.as_matrix()[:3, :]
        lines.append(" ".join(repr(float(v)) for v in m.reshape(-1)))
    return "\n".join(lines) + ("\n" if lines else "")


def write_trajectory_kitti(traj: Trajectory, path) -> None:
    _write_text(path, format_trajectory_kitti(traj))


def read_trajectory(path, kind: str = "auto", frame_period: float = DEFAULT_FRAME_PERIOD) -> Trajectory:
    """Read a trajectory, guessing the format from the first data line when ``kind="auto"``."""
    if kind == "auto":
        kind = sniff_trajectory_kind(_read_text(path))
    if kind == "tum":
        return read_trajectory_tum(path)
    if kind == "kitti":
        return read_trajectory_kitti(path, frame_period)
    raise FormatError(f"unknown trajectory format {kind!r}")


def sniff_trajectory_kind(text: str) -> str:
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        n = len(line.split())
        if n == 8:
            return "tum"
        if n == 12:
            return "kitti"
        break
    raise FormatError("cannot determine trajectory format (expected 8 or 12 fields per line)")


def _write_text(path, text: str) -> None:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
