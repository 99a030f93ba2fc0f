"""Shared domain types and elementary geometric/statistical primitives.

Conventions used throughout the package:

* Depth is in meters. A pixel takes part in a computation only if its
  ``valid`` flag is set.
* Quaternions are unit, Hamilton, scalar first ``(w, x, y, z)`` and
  canonicalized so that ``w >= 0``.
* ``compose(a, b)`` applies ``b`` first, then ``a`` (``a @ b`` as matrices).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import EvaluationError

def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def quat_multiply(q: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Hamilton product of two ``(w, x, y, z)`` quaternions."""
    w0, x0, y0, z0 = q
    w1, x1, y1, z1 = r
    return np.array([
        w0 * w1 - x0 * x1 - y0 * y1 - z0 * z1,
        w0 * x1 + x0 * w1 + y0 * z1 - z0 * y1,
        w0 * y1 - x0 * z1 + y0 * w1 + z0 * x1,
        w0 * z1 + x0 * y1 - y0 * x1 + z0 * w1,
    ])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Convert a proper rotation matrix to a quaternion (Shepperd's method)."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    diag = (tr, m[0, 0], m[1, 1], m[2, 2])
    k = int(np.argmax(diag))
    if k == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif k == 1:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif k == 2:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return np.array(q)


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) in the Frobenius sense."""
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def _canonical_quat(q: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(q))
    if not np.isfinite(norm) or norm < 1e-12:
        raise ValueError("quaternion must be finite and nonzero")
    # re-dividing an already unit quaternion can flip low bits; keep such input as is
    if abs(norm - 1.0) > 4 * np.finfo(float).eps:
        q = q / norm
    # q and -q encode the same rotation; keep the first nonzero component positive
    for c in q:
        if c != 0.0:
            if c < 0.0:
                q = -q
            break
    return q


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Element of SE(3): unit quaternion rotation plus translation in meters."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.array(self.rotation, dtype=float).reshape(4)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "rotation", _frozen(_canonical_quat(q)))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidTransform":
        """Build from a 3x4 or 4x4 homogeneous matrix with an orthonormal rotation block."""
        m = np.asarray(m, dtype=float)
        return cls(matrix_to_quat(m[:3, :3]), m[:3, 3])

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidTransform":
        w, x, y, z = self.rotation
        q_inv = np.array([w, -x, -y, -z])
        return RigidTransform(q_inv, -(quat_to_matrix(q_inv) @ self.translation))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    __matmul__ = compose

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an ``(N, 3)`` array (or a single 3-vector) of points."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation_matrix.T + self.translation

    def isclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        # quaternions are canonical, but w ~ 0 can still flip sign under rounding
        dq = min(np.max(np.abs(self.rotation - other.rotation)),
                 np.max(np.abs(self.rotation + other.rotation)))
        return bool(dq <= atol and np.max(np.abs(self.translation - other.translation)) <= atol)

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return bool(np.array_equal(self.rotation, other.rotation)
                    and np.array_equal(self.translation, other.translation))

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __repr__(self):
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Return ``a ∘ b``: apply ``b`` first, then ``a``."""
    q = quat_multiply(a.rotation, b.rotation)
    t = a.rotation_matrix @ b.translation + a.translation
    return RigidTransform(q, t)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-ordered poses. ``index_based`` marks files that carry no real time axis (KITTI)."""

    timestamps: np.ndarray
    poses: tuple
    frame_id: str = "world"
    index_based: bool = False

    def __post_init__(self):
        ts = np.array(self.timestamps, dtype=float).reshape(-1)
        poses = tuple(self.poses)
        if len(ts) != len(poses):
            raise ValueError("timestamps and poses differ in length")
        if not np.all(np.isfinite(ts)):
            raise ValueError("timestamps must be finite")
        if len(ts) > 1:
            bad = np.nonzero(np.diff(ts) <= 0)[0]
            if bad.size:
                raise ValueError(f"timestamps not increasing at index {int(bad[0]) + 1}")
        object.__setattr__(self, "timestamps", _frozen(ts))
        object.__setattr__(self, "poses", poses)

    def __len__(self):
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        if not self.poses:
            return np.zeros((0, 3))
        return np.stack([p.translation for p in self.poses])

    def transformed(self, T: RigidTransform) -> "Trajectory":
        """Left-multiply every pose by ``T``."""
        return Trajectory(self.timestamps, [compose(T, p) for p in self.poses],
                          self.frame_id, self.index_based)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (np.array_equal(self.timestamps, other.timestamps)
                and self.poses == other.poses
                and self.frame_id == other.frame_id
                and self.index_based == other.index_based)


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Row-major depth grid in meters with a validity mask.

    Invalid pixels are stored as 0 so two maps compare equal exactly when they
    agree on which pixels are observed and on the observed depths.
    """

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if values.ndim != 2 or values.shape != valid.shape:
            raise ValueError(f"values {values.shape} and valid {valid.shape} must be equal 2-D shapes")
        if values.size == 0:
            raise ValueError("depth map must have nonzero dimensions")
        ok = np.isfinite(values) & (values > 0)
        if np.any(valid & ~ok):
            raise ValueError("valid pixels must hold finite depth > 0")
        values[~valid] = 0.0
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "valid", _frozen(valid))

    @classmethod
    def from_values(cls, values) -> "DepthMap":
        """Treat every finite positive entry as observed."""
        values = np.asarray(values, dtype=np.float64)
        with np.errstate(invalid="ignore"):
            valid = np.isfinite(values) & (values > 0)
        return cls(np.where(valid, values, 0.0), valid)

    @classmethod
    def empty(cls, width: int, height: int) -> "DepthMap":
        return cls(np.zeros((height, width)), np.zeros((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.valid))

    def __eq__(self, other):
        if not isinstance(other, DepthMap):
            return NotImplemented
        return bool(np.array_equal(self.valid, other.valid)
                    and np.array_equal(self.values, other.values))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be > 0")
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValueError("image size must be integral")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be > 0")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class PointCloud:
    """``(N, 3)`` points in meters in the sensor frame, with optional per-point intensity."""

    points: np.ndarray
    intensity: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", _frozen(pts))
        if self.intensity is not None:
            inten = np.array(self.intensity, dtype=np.float64).reshape(-1)
            if len(inten) != len(pts):
                raise ValueError("intensity length differs from point count")
            object.__setattr__(self, "intensity", _frozen(inten))

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class DepthMetrics:
    abs_error_rel: float
    sq_error_rel: float
    irmse: float  # 1/km
    rmse: float
    valid_pixel_count: int
    scale_factor: float = 1.0

    def as_dict(self) -> dict:
        return {
            "abs_error_rel": self.abs_error_rel,
            "sq_error_rel": self.sq_error_rel,
            "irmse": self.irmse,
            "rmse": self.rmse,
            "valid_pixel_count": self.valid_pixel_count,
            "scale_factor": self.scale_factor,
        }


@dataclass(frozen=True)
class OdomMetrics:
    ape_rmse: float
    ape_percent: float
    path_length: float
    matched_pose_count: int
    alignment_mode: str = "origin"

    def as_dict(self) -> dict:
        return {
            "ape_rmse": self.ape_rmse,
            "ape_percent": self.ape_percent,
            "path_length": self.path_length,
            "matched_pose_count": self.matched_pose_count,
            "alignment_mode": self.alignment_mode,
        }


def median(values: Iterable[float] | np.ndarray) -> float:
    """Lower median: for an even count, the smaller of the two middle elements.

    Always returns an element of the sample, so a ratio of medians is a ratio of
    observed values.
    """
    arr = np.asarray(values if isinstance(values, np.ndarray) else list(values), dtype=float).reshape(-1)
    if arr.size == 0:
        raise EvaluationError("empty sample")
    k = (arr.size - 1) // 2
    return float(np.partition(arr, k)[k])


def path_length(positions: Sequence) -> float:
    pos = np.asarray(positions, dtype=float)
    if len(pos) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(pos, axis=0), axis=1)))
