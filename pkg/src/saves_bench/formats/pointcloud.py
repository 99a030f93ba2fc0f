"""Packed LiDAR scans: little-endian float32 ``(x, y, z, intensity)`` records."""

from __future__ import annotations

import os

import numpy as np

from ..core import PointCloud
from ..errors import FormatError

RECORD_BYTES = 16
_RECORD = np.dtype("<f4")


def parse_pointcloud_bin(data: bytes) -> PointCloud:
    if len(data) % RECORD_BYTES:
        raise FormatError(
            f"truncated point record: {len(data)} bytes is not a multiple of {RECORD_BYTES}")
    rec = np.frombuffer(data, dtype=_RECORD).reshape(-1, 4)
    bad = ~np.all(np.isfinite(rec[:, :3]), axis=1)
    if np.any(bad):
        raise FormatError(f"non-finite coordinate in point record {int(np.argmax(bad))}")
    return PointCloud(rec[:, :3].astype(np.float64), rec[:, 3].astype(np.float64))


def read_pointcloud_bin(path) -> PointCloud:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except FileNotFoundError:
        raise FormatError(f"not found: {path}") from None
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    try:
        return parse_pointcloud_bin(data)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def encode_pointcloud_bin(cloud: PointCloud) -> bytes:
    rec = np.zeros((len(cloud), 4), dtype=_RECORD)
    rec[:, :3] = cloud.points
    if cloud.intensity is not None:
        rec[:, 3] = cloud.intensity
    return rec.tobytes()


def write_pointcloud_bin(cloud: PointCloud, path) -> None:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode_pointcloud_bin(cloud))
