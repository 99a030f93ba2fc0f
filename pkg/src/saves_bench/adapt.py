"""Synthetic-data adaptation: range masking, distance-based sparsification,
LiDAR-to-image projection, and dataset depth statistics.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

import numpy as np

from .core import CameraIntrinsics, DepthMap, PointCloud, RigidTransform
from .errors import ConfigError, EvaluationError

STAT_PERCENTILES = (5.0, 25.0, 50.0, 75.0, 90.0, 95.0)


def mask_depth(depth: DepthMap, max_range: float) -> DepthMap:
    """Invalidate pixels strictly farther than ``max_range``; a pixel at exactly ``max_range`` stays."""
    if not max_range > 0:
        raise ConfigError("max_range must be > 0")
    keep = depth.valid & ~(depth.values > max_range)
    return DepthMap(np.where(keep, depth.values, 0.0), keep)


@dataclass(frozen=True)
class SparsityProfile:
    """Per-distance-bin keep probabilities.

    Bin ``k`` covers ``[bin_edges[k], bin_edges[k+1])``; the last bin is open
    ended. ``bin_edges[0]`` must be 0.
    """

    bin_edges: tuple
    keep_fraction: tuple
    seed: int = 0

    def __post_init__(self):
        edges = tuple(float(e) for e in self.bin_edges)
        fracs = tuple(float(f) for f in self.keep_fraction)
        if not edges or edges[0] != 0.0:
            raise ConfigError("bin_edges must start at 0")
        if any(b <= a for a, b in zip(edges, edges[1:])) or not all(map(math.isfinite, edges)):
            raise ConfigError("bin_edges must be finite and strictly increasing")
        if len(fracs) != len(edges):
            raise ConfigError("need one keep_fraction per bin edge")
        if any(not 0.0 <= f <= 1.0 for f in fracs):
            raise ConfigError("keep_fraction values must lie in [0, 1]")
        seed = int(self.seed)
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "keep_fraction", fracs)
        object.__setattr__(self, "seed", seed)

    @classmethod
    def uniform(cls, keep: float, seed: int = 0) -> "SparsityProfile":
        return cls((0.0,), (keep,), seed)

    @classmethod
    def from_dict(cls, raw: dict) -> "SparsityProfile":
        try:
            return cls(tuple(raw["bin_edges"]), tuple(raw["keep_fraction"]), raw.get("seed", 0))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad sparsity profile: {exc}") from None

    def as_dict(self) -> dict:
        return {"bin_edges": list(self.bin_edges), "keep_fraction": list(self.keep_fraction),
                "seed": self.seed}


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def keyed_uniform(seed: int, stream: int, index: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) draws that depend only on ``(seed, stream, index)``.

    Counter-based: any subset of indices can be generated independently, in
    any order or partition, and yields the same numbers.
    """
    with np.errstate(over="ignore"):
        key = _splitmix64(np.array([seed], dtype=np.uint64))[0]
        key = _splitmix64(np.array([key ^ np.uint64(stream & 0xFFFFFFFFFFFFFFFF)], dtype=np.uint64))[0]
        bits = _splitmix64(np.asarray(index, dtype=np.uint64) ^ key)
        bits = _splitmix64(bits)
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def sparsify(depth: DepthMap, profile: SparsityProfile, stream: int = 0, workers: int = 1) -> DepthMap:
    """Keep each valid pixel with its distance bin's probability.

    The draw for pixel ``k`` (row-major index) is keyed by
    ``(profile.seed, stream, k)``; pass a distinct ``stream`` per frame to
    decorrelate frames. Row blocks may be processed by ``workers`` threads
    without changing the result.
    """
    h, w = depth.shape
    edges = np.asarray(profile.bin_edges)
    fracs = np.asarray(profile.keep_fraction)
    keep = np.zeros((h, w), dtype=bool)

    def do_rows(rows: range):
        vals = depth.values[rows.start:rows.stop]
        ok = depth.valid[rows.start:rows.stop]
        idx = np.arange(rows.start * w, rows.stop * w, dtype=np.uint64).reshape(-1, w)
        u = keyed_uniform(profile.seed, stream, idx)
        bins = np.clip(np.searchsorted(edges, vals, side="right") - 1, 0, len(edges) - 1)
        keep[rows.start:rows.stop] = ok & (u < fracs[bins])

    if workers > 1 and h > 1:
        step = max(1, math.ceil(h / workers))
        blocks = [range(r, min(r + step, h)) for r in range(0, h, step)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(do_rows, blocks))
    else:
        do_rows(range(0, h))
    return DepthMap(np.where(keep, depth.values, 0.0), keep)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def project_cloud(cloud: PointCloud, cam_from_lidar: RigidTransform, K: CameraIntrinsics) -> DepthMap:
    """Rasterize LiDAR points into a sparse depth image with a nearest-depth z-buffer."""
    pts = cam_from_lidar.apply(cloud.points) if len(cloud) else np.zeros((0, 3))
    pts = pts[pts[:, 2] > 0]
    z = pts[:, 2]
    u = _round_half_away(K.fx * pts[:, 0] / z + K.cx)
    v = _round_half_away(K.fy * pts[:, 1] / z + K.cy)
    inside = (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
    u, v, z = u[inside].astype(np.int64), v[inside].astype(np.int64), z[inside]

    values = np.zeros((K.height, K.width))
    valid = np.zeros((K.height, K.width), dtype=bool)
    if len(z):
        order = np.argsort(z, kind="stable")
        lin = (v * K.width + u)[order]
        _, first = np.unique(lin, return_index=True)
        chosen = order[first]
        values[v[chosen], u[chosen]] = z[chosen]
        valid[v[chosen], u[chosen]] = True
    return DepthMap(values, valid)


def backproject(depth: DepthMap, K: CameraIntrinsics) -> PointCloud:
    """Lift every valid pixel ``(u, v, d)`` to a camera-frame point."""
    v, u = np.nonzero(depth.valid)
    d = depth.values[v, u]
    pts = np.column_stack([(u - K.cx) * d / K.fx, (v - K.cy) * d / K.fy, d])
    return PointCloud(pts)


@dataclass(frozen=True)
class DepthSummary:
    count: int
    min: float
    max: float
    mean: float
    percentiles: dict       # percent -> depth, linear interpolation between order statistics
    mean_above_p90: float   # mean of depths >= p90

    def as_dict(self) -> dict:
        return {
            "count": self.count,
            "min": self.min,
            "max": self.max,
            "mean": self.mean,
            "percentiles": {f"p{q:g}": v for q, v in sorted(self.percentiles.items())},
            "mean_above_p90": self.mean_above_p90,
            "percentile_method": "linear",
        }


def _lerp(a: float, b: float, t: float) -> float:
    # same rounding as numpy's linear percentile, so results agree bit for bit
    diff = b - a
    return b - diff * (1 - t) if t >= 0.5 else a + diff * t


def _bin_keys(vals: np.ndarray) -> np.ndarray:
    # positive doubles order like their bit patterns; keep exponent + 10 mantissa bits
    return vals.view(np.int64) >> 42


def _exact_sum(vals: np.ndarray) -> Fraction:
    return Fraction(math.fsum(vals.tolist())) if vals.size else Fraction(0)


def depth_statistics(maps: Iterable[DepthMap], percentiles=STAT_PERCENTILES) -> DepthSummary:
    """Exact depth statistics over all valid pixels of a re-iterable collection of maps.

    Three passes with bounded state: a histogram over float bit patterns
    locates the order statistics, the second pass gathers only the values in
    those few bins, the third sums depths at or above the 90th percentile.
    Results are exact and independent of frame order. Percentiles use linear
    interpolation between order statistics (numpy's default convention).
    """
    if iter(maps) is maps:
        raise TypeError("depth_statistics needs a re-iterable collection, not a one-shot iterator")
    percentiles = tuple(sorted(set(float(q) for q in percentiles) | {90.0}))

    count, lo, hi, total = 0, math.inf, -math.inf, Fraction(0)
    hist: dict = {}
    for m in maps:
        vals = m.values[m.valid]
        if not vals.size:
            continue
        count += vals.size
        lo, hi = min(lo, float(vals.min())), max(hi, float(vals.max()))
        total += _exact_sum(vals)
        keys, counts = np.unique(_bin_keys(vals), return_counts=True)
        for k, c in zip(keys.tolist(), counts.tolist()):
            hist[k] = hist.get(k, 0) + c
    if count == 0:
        raise EvaluationError("no valid depth pixels")

    keys = np.array(sorted(hist), dtype=np.int64)
    cum = np.cumsum([hist[k] for k in keys.tolist()])
    positions = {q: q / 100.0 * (count - 1) for q in percentiles}
    ranks = sorted({r for p in positions.values() for r in (math.floor(p), min(math.floor(p) + 1, count - 1))})
    rank_bin = {r: int(keys[np.searchsorted(cum, r, side="right")]) for r in ranks}
    wanted = np.array(sorted(set(rank_bin.values())), dtype=np.int64)

    gathered = []
    for m in maps:
        vals = m.values[m.valid]
        if vals.size:
            gathered.append(vals[np.isin(_bin_keys(vals), wanted)])
    gathered = np.sort(np.concatenate(gathered))
    g_keys = _bin_keys(gathered)
    before = {int(k): int(cum[i - 1]) if i > 0 else 0 for i, k in enumerate(keys.tolist())}
    order_stat = {}
    for r, b in rank_bin.items():
        start = int(np.searchsorted(g_keys, b, side="left"))
        order_stat[r] = float(gathered[start + r - before[b]])

    pct = {q: _lerp(order_stat[math.floor(p)], order_stat[min(math.floor(p) + 1, count - 1)],
                    p - math.floor(p))
           for q, p in positions.items()}
    p90 = pct[90.0]

    above_n, above_sum = 0, Fraction(0)
    for m in maps:
        vals = m.values[m.valid]
        sel = vals[vals >= p90]
        above_n += sel.size
        above_sum += _exact_sum(sel)

    return DepthSummary(
        count=count,
        min=lo,
        max=hi,
        mean=float(total / count),
        percentiles=pct,
        mean_above_p90=float(above_sum / above_n),
    )
