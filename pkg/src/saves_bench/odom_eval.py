"""Trajectory association, alignment and absolute pose error.

APE here is translational: the RMS of position differences over matched
poses. APE% normalizes it by the reference path length over the matched span::

    ape_percent = 100 * ape_rmse / path_length
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .core import OdomMetrics, RigidTransform, Trajectory, compose, path_length
from .errors import ConfigError, EvaluationError

ALIGN_MODES = ("origin", "umeyama", "umeyama-scale")


@dataclass(frozen=True)
class AssociationConfig:
    max_time_diff: float = 0.01
    offset: float = 0.0

    def __post_init__(self):
        if not self.max_time_diff > 0:
            raise ConfigError("max_time_diff must be > 0")


def associate(ref: Trajectory, est: Trajectory,
              cfg: AssociationConfig = AssociationConfig()) -> list:
    """Pair reference and estimate poses by timestamp.

    Candidates within ``max_time_diff`` (after adding ``offset`` to estimate
    times) are accepted greedily, smallest gap first, ties going to the earlier
    estimate entry. A candidate is dropped if either side is already used or
    if it would cross an accepted pair, so both index sequences stay strictly
    increasing. When both trajectories are index-based (KITTI), poses pair by
    index.
    """
    if len(ref) == 0 or len(est) == 0:
        raise EvaluationError("insufficient overlap: empty trajectory")
    if ref.index_based and est.index_based:
        n = min(len(ref), len(est))
        pairs = [(i, i) for i in range(n)]
    else:
        pairs = _greedy_pairs(ref.timestamps, est.timestamps + cfg.offset, cfg.max_time_diff)
    if len(pairs) < 2:
        raise EvaluationError(f"insufficient overlap: {len(pairs)} matched poses")
    return pairs


def _greedy_pairs(t_ref: np.ndarray, t_est: np.ndarray, max_diff: float) -> list:
    candidates = []
    for i, t in enumerate(t_ref):
        lo = np.searchsorted(t_est, t - max_diff, side="left")
        hi = np.searchsorted(t_est, t + max_diff, side="right")
        for j in range(lo, hi):
            gap = abs(t - t_est[j])
            if gap <= max_diff:
                candidates.append((gap, j, i))
    candidates.sort()

    used_est = set()
    acc_i, acc_j = [], []   # accepted pairs kept sorted; monotone in both indices
    for _, j, i in candidates:
        if j in used_est:
            continue
        k = bisect.bisect_left(acc_i, i)
        if k < len(acc_i) and acc_i[k] == i:
            continue
        if (k > 0 and acc_j[k - 1] >= j) or (k < len(acc_j) and acc_j[k] <= j):
            continue
        acc_i.insert(k, i)
        acc_j.insert(k, j)
        used_est.add(j)
    return list(zip(acc_i, acc_j))


def origin_transform(ref: Trajectory, est: Trajectory, pairs) -> RigidTransform:
    """``T = ref_pose ∘ est_pose⁻¹`` at the first matched pair."""
    if not pairs:
        raise EvaluationError("alignment needs at least one matched pair")
    i, j = pairs[0]
    return compose(ref.poses[i], est.poses[j].inverse())


def align_origin(ref: Trajectory, est: Trajectory, pairs) -> Trajectory:
    """Left-multiply every estimate pose so the first matched poses coincide."""
    T = origin_transform(ref, est, pairs)
    aligned = est.transformed(T)
    # make the anchor exact rather than equal-up-to-rounding
    i, j = pairs[0]
    poses = list(aligned.poses)
    poses[j] = ref.poses[i]
    return Trajectory(aligned.timestamps, poses, est.frame_id, est.index_based)


def umeyama(src: np.ndarray, dst: np.ndarray, with_scale: bool = False):
    """Least-squares ``(R, t, s)`` minimizing ``sum ||dst - (s R src + t)||^2``.

    ``src`` and ``dst`` are ``(N, 3)`` arrays of corresponding points.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    n = len(src)
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    cov = xd.T @ xs / n
    u, d, vt = np.linalg.svd(cov)
    scale_ref = max(d[0], 1e-300)
    if n < 3 or d[1] <= 1e-12 * scale_ref or d[0] <= 1e-15:
        raise EvaluationError("degenerate point set")
    S = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        S[2, 2] = -1.0
    R = u @ S @ vt
    if with_scale:
        var_s = np.mean(np.sum(xs * xs, axis=1))
        s = float(np.trace(np.diag(d) @ S) / var_s)
    else:
        s = 1.0
    t = mu_d - s * R @ mu_s
    return R, t, s


def align_umeyama(ref: Trajectory, est: Trajectory, pairs, with_scale: bool = False):
    """Apply the closed-form least-squares alignment over matched positions.

    Returns ``(aligned_trajectory, transform, scale)``. With a scale, estimate
    positions become ``s R p + t`` while orientations are only rotated.
    """
    idx_ref = [i for i, _ in pairs]
    idx_est = [j for _, j in pairs]
    R, t, s = umeyama(est.positions[idx_est], ref.positions[idx_ref], with_scale)
    T = RigidTransform.from_matrix(np.hstack([R, t[:, None]]))
    poses = [
        RigidTransform(compose(T, p).rotation, s * (R @ p.translation) + t)
        for p in est.poses
    ]
    return Trajectory(est.timestamps, poses, est.frame_id, est.index_based), T, s


def compute_ape(ref: Trajectory, est_aligned: Trajectory, pairs,
                alignment_mode: str = "origin") -> OdomMetrics:
    if len(pairs) < 2:
        raise EvaluationError(f"insufficient overlap: {len(pairs)} matched poses")
    idx_ref = np.array([i for i, _ in pairs])
    idx_est = np.array([j for _, j in pairs])
    err = ref.positions[idx_ref] - est_aligned.positions[idx_est]
    rmse = float(np.sqrt(np.mean(np.sum(err * err, axis=1))))
    span = ref.positions[idx_ref.min(): idx_ref.max() + 1]
    length = path_length(span)
    if not length > 0:
        raise EvaluationError("stationary reference trajectory")
    return OdomMetrics(rmse, 100.0 * rmse / length, length, len(pairs), alignment_mode)


def evaluate_odometry(ref: Trajectory, est: Trajectory, align: str = "origin",
                      cfg: AssociationConfig = AssociationConfig()):
    """Associate, align and score. Returns ``(metrics, aligned_estimate, pairs)``."""
    if align not in ALIGN_MODES:
        raise ConfigError(f"unknown alignment mode {align!r}; choose from {ALIGN_MODES}")
    pairs = associate(ref, est, cfg)
    if align == "origin":
        aligned = align_origin(ref, est, pairs)
    else:
        aligned, _, _ = align_umeyama(ref, est, pairs, with_scale=(align == "umeyama-scale"))
    mode = "origin" if align == "origin" else "umeyama"
    return compute_ape(ref, aligned, pairs, mode), aligned, pairs
