"""Readers and writers for every on-disk format the toolkit touches."""

from .manifest import (
    FrameManifest,
    FrameRecord,
    load_manifest,
    manifest_from_dict,
    manifest_to_dict,
    save_manifest,
)
from .png import (
    DEPTH_SCALE,
    MAX_ENCODABLE_DEPTH,
    decode_depth_png,
    encode_depth_png,
    quantize_depth,
    read_depth_png,
    write_depth_png,
)
from .pointcloud import encode_pointcloud_bin, parse_pointcloud_bin, read_pointcloud_bin, write_pointcloud_bin
from .trajectory import (
    DEFAULT_FRAME_PERIOD,
    format_trajectory_kitti,
    format_trajectory_tum,
    parse_trajectory_kitti,
    parse_trajectory_tum,
    read_trajectory,
    read_trajectory_kitti,
    read_trajectory_tum,
    sniff_trajectory_kind,
    write_trajectory_kitti,
    write_trajectory_tum,
)

__all__ = [
    "FrameManifest", "FrameRecord", "load_manifest", "manifest_from_dict", "manifest_to_dict", "save_manifest",
    "DEPTH_SCALE", "MAX_ENCODABLE_DEPTH", "decode_depth_png", "encode_depth_png", "quantize_depth",
    "read_depth_png", "write_depth_png",
    "encode_pointcloud_bin", "parse_pointcloud_bin", "read_pointcloud_bin", "write_pointcloud_bin",
    "DEFAULT_FRAME_PERIOD", "format_trajectory_kitti", "format_trajectory_tum", "parse_trajectory_kitti",
    "parse_trajectory_tum", "read_trajectory", "read_trajectory_kitti", "read_trajectory_tum",
    "sniff_trajectory_kind", "write_trajectory_kitti", "write_trajectory_tum",
]
