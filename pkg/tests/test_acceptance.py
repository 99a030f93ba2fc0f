"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Lines are printed as each test runs (visible with ``-s``) and collected into a
summary section at the end of every pytest session.
"""

import functools
import itertools
import json
import os
import time
import zlib

import numpy as np

import synth
from conftest import ACCEPTANCE_RESULTS, random_depth, random_trajectory, random_transform
from oracles import ape_loop, depth_metrics_loop, pose_matrix, project_points_loop, scale_loop
from saves_bench.adapt import SparsityProfile, backproject, mask_depth, project_cloud, sparsify
from saves_bench.cli import main
from saves_bench.core import CameraIntrinsics, DepthMap, PointCloud, RigidTransform, Trajectory, median
from saves_bench.depth_eval import DepthEvalConfig, compute_depth_metrics, scale_match
from saves_bench.errors import SavesError
from saves_bench.formats import (
    decode_depth_png,
    encode_depth_png,
    load_manifest,
    parse_pointcloud_bin,
    parse_trajectory_kitti,
    parse_trajectory_tum,
    read_depth_png,
    write_depth_png,
)
from saves_bench.odom_eval import align_origin, align_umeyama, associate, compute_ape


def criterion(num, title):
    def deco(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
                ACCEPTANCE_RESULTS.append((num, title, False, msg[:160]))
                print(f"[FAIL] {num}. {title}: {msg}")
                raise
            ACCEPTANCE_RESULTS.append((num, title, True, detail or "ok"))
            print(f"[PASS] {num}. {title}: {detail or 'ok'}")
        return run
    return deco


@criterion(1, "scale-matching law")
def test_01_scale_matching_law():
    rng = np.random.default_rng(1)
    cfg = DepthEvalConfig()
    worst_med = worst_scale = 0.0
    start = time.perf_counter()
    for _ in range(1000):
        h, w = rng.integers(4, 33, size=2)
        p = random_depth(rng, h, w, lo=0.1, hi=120.0)
        g = random_depth(rng, h, w, lo=0.1, hi=120.0)
        scaled, _ = scale_match(p, g, cfg)
        mask = p.valid & g.valid & (g.values >= cfg.min_depth) & (g.values <= cfg.max_depth)
        worst_med = max(worst_med, abs(median(scaled.values[mask]) - median(g.values[mask])))
        _, again = scale_match(scaled, g, cfg)
        worst_scale = max(worst_scale, abs(again - 1.0))
    elapsed = time.perf_counter() - start
    assert worst_med <= 1e-9, f"median mismatch {worst_med}"
    assert worst_scale <= 1e-9, f"re-match scale off by {worst_scale}"
    assert elapsed < 5.0, f"took {elapsed:.2f} s"
    return f"max |dmedian|={worst_med:.1e}, max |s-1|={worst_scale:.1e}, {elapsed:.2f} s"


@criterion(2, "metric oracle equivalence")
def test_02_metric_oracle():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(200):
        p = random_depth(rng, 16, 16, lo=0.05, hi=100.0)
        g = random_depth(rng, 16, 16, lo=0.05, hi=100.0)
        m = compute_depth_metrics(p, g)
        ref = depth_metrics_loop(p.values, p.valid, g.values, g.valid)
        got = (m.abs_error_rel, m.sq_error_rel, m.irmse, m.rmse)
        worst = max(worst, max(abs(a - b) for a, b in zip(got, ref[:4])))
        assert m.valid_pixel_count == ref[4]
    assert worst <= 1e-9, f"max deviation {worst}"
    return f"max deviation {worst:.1e} over 200 maps"


@criterion(3, "80 m masking threshold")
def test_03_masking_threshold():
    cfg = DepthEvalConfig()
    assert cfg.max_depth == 80.0
    edge = 80.0 + 1 / 256
    gt = DepthMap.from_values([[80.0, edge, 10.0]])
    m = compute_depth_metrics(gt, gt, cfg)
    assert m.valid_pixel_count == 2, "evaluation mask"
    masked = mask_depth(gt, cfg.max_depth)
    assert masked.valid.tolist() == [[True, False, True]], "mask_depth"
    roundtrip = decode_depth_png(encode_depth_png(masked))
    assert roundtrip.valid.tolist() == [[True, False, True]]
    return "80.0 kept, 80.0 + 1/256 dropped (evaluation and mask_depth)"


@criterion(4, "depth PNG round-trip")
def test_04_png_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    for k in range(50):
        h, w = rng.integers(1, 40, size=2)
        m = random_depth(rng, h, w, lo=0.0, hi=255.0, p_valid=0.7)
        path = tmp_path / f"{k}.png"
        write_depth_png(m, path)
        once = read_depth_png(path)
        expected = np.where(m.valid, np.maximum(np.rint(m.values * 256), 1), 0) / 256.0
        assert np.array_equal(once.values, expected) and np.array_equal(once.valid, m.valid)
        write_depth_png(once, tmp_path / "again.png")
        assert (tmp_path / "again.png").read_bytes() == path.read_bytes()
        assert read_depth_png(tmp_path / "again.png") == once
    zeros = decode_depth_png(encode_depth_png(DepthMap.empty(5, 3)))
    assert zeros.valid_count == 0
    return "50 maps: read(write(m)) = quantize(m), rewrite byte-identical, 0 -> invalid"


@criterion(5, "origin-alignment invariance")
def test_05_origin_invariance():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        ref, est = random_trajectory(rng), random_trajectory(rng)
        pairs = associate(ref, est)
        base = compute_ape(ref, align_origin(ref, est, pairs), pairs).ape_rmse
        moved = est.transformed(random_transform(rng, t_scale=50.0))
        again = compute_ape(ref, align_origin(ref, moved, pairs), pairs).ape_rmse
        worst = max(worst, abs(base - again))
    assert worst <= 1e-9, f"max APE change {worst}"
    return f"max APE change {worst:.1e} over 100 cases"


@criterion(6, "Umeyama optimality")
def test_06_umeyama_optimality():
    rng = np.random.default_rng(6)
    worst = -np.inf
    for _ in range(100):
        ref = random_trajectory(rng)
        poses = [RigidTransform(p.rotation, p.translation + rng.normal(scale=0.5, size=3)) for p in ref.poses]
        est = Trajectory(ref.timestamps, poses).transformed(random_transform(rng))
        pairs = associate(ref, est)
        o = compute_ape(ref, align_origin(ref, est, pairs), pairs).ape_rmse
        u = compute_ape(ref, align_umeyama(ref, est, pairs)[0], pairs).ape_rmse
        worst = max(worst, u - o)
    assert worst <= 1e-12, f"umeyama exceeded origin by {worst}"
    return f"max (umeyama - origin) = {worst:.3g} m over 100 pairs"


@criterion(7, "APE fixture")
def test_07_ape_fixture():
    I = [1, 0, 0, 0]
    ref = Trajectory([0.0, 0.1, 0.2], [RigidTransform(I, [x, 0, 0]) for x in (0.0, 1.0, 2.0)])
    est = Trajectory([0.0, 0.1, 0.2], [RigidTransform(I, t) for t in ([0, 0, 0], [1, 0.3, 0], [2, 0, 0.4])])
    m = compute_ape(ref, est, [(0, 0), (1, 1), (2, 2)])
    assert abs(m.ape_rmse - 0.2887) <= 1e-4, m.ape_rmse
    assert abs(m.ape_percent - 14.43) <= 0.01, m.ape_percent
    return f"ape_rmse={m.ape_rmse:.6f} m, ape_percent={m.ape_percent:.4f}"


@criterion(8, "projection round-trip and z-buffer")
def test_08_projection():
    rng = np.random.default_rng(8)
    K = CameraIntrinsics(100, 100, 50, 50, 101, 101)
    ident = RigidTransform.identity()
    for _ in range(10_000):
        m = random_depth(rng, 101, 101, lo=0.5, hi=120.0, p_valid=0.01)
        assert project_cloud(backproject(m, K), ident, K) == m
    k4 = CameraIntrinsics(1, 1, 0, 0, 4, 4)
    cells = list(itertools.product(range(4), range(4)))
    assert project_cloud(backproject(DepthMap.empty(4, 4), k4), ident, k4).valid_count == 0
    cases = 0
    for (u1, v1), (u2, v2) in itertools.product(cells, cells):
        for z1, z2 in ((2.0, 3.0), (3.0, 2.0), (2.5, 2.5)):
            pts = [[u1 * z1, v1 * z1, z1], [u2 * z2, v2 * z2, z2]]
            out = project_cloud(PointCloud(pts), ident, k4)
            got = {(int(v), int(u)): out.values[v, u] for v, u in zip(*np.nonzero(out.valid))}
            assert got == project_points_loop(pts, 1, 1, 0, 0, 4, 4)
            cases += 1
    return f"10^4 maps exact; {cases} two-point cases match oracle"


@criterion(9, "sparsify statistics and thread invariance")
def test_09_sparsify():
    m = DepthMap(np.full((250, 400), 20.0), np.ones((250, 400), bool))
    prof = SparsityProfile.uniform(0.25, seed=2024)
    outs = [sparsify(m, prof, workers=w) for w in (1, 4, 16)]
    frac = outs[0].valid_count / m.valid_count
    assert abs(frac - 0.25) <= 0.01, frac
    assert all(np.array_equal(o.valid, outs[0].valid) and np.array_equal(o.values, outs[0].values)
               for o in outs[1:])
    assert encode_depth_png(outs[0]) == encode_depth_png(outs[1]) == encode_depth_png(outs[2])
    return f"retained {frac:.4f}; identical for 1/4/16 threads"


def _pipeline(root):
    """convert -> adapt -> eval-depth -> eval-odom -> report, all with relative paths from ``root``."""
    prev = os.getcwd()
    os.chdir(root)
    try:
        synth.make_dataset("data")
        steps = [
            ["convert", "kitti-depth-layout", "data", "--out", "manifest.json", "--label", "synth"],
            ["convert", "tum-traj", "data/ref.tum", "--out", "traj_manifest.json",
             "--intrinsics", "20", "20", "12", "8", "24", "16", "--label", "synth"],
            ["adapt", "--manifest", "manifest.json", "--max-range", "80", "--keep", "0.5", "--seed", "3",
             "--out", "adapted"],
            ["eval-depth", "--manifest", "adapted/manifest.json", "--model", "synthnet", "--out", "depth_out"],
            ["eval-odom", "--ref", "data/ref.tum", "--est", "data/est.tum", "--method", "synthvo",
             "--label", "synth", "--out", "odom_out"],
            ["report", "depth_out", "odom_out", "--out", "table.txt"],
        ]
        for argv in steps:
            assert main(argv) == 0, f"step failed: {' '.join(argv)}"
    finally:
        os.chdir(prev)


def _depth_oracle(root):
    manifest = load_manifest(os.path.join(root, "adapted", "manifest.json"))
    per = []
    for k, fr in enumerate(sorted(manifest.frames, key=lambda f: f.frame_id)):
        assert fr.frame_id == f"scene_{k:010d}"
        gt, gt_valid = synth.read_png(fr.gt_depth_path)
        full = synth.quantized(synth.gt_depth(k))
        assert np.all(gt[gt_valid] == full[gt_valid]) and gt[gt_valid].max() <= 80.0
        pred = synth.quantized(synth.pred_depth(k))
        pv = pred > 0
        s = scale_loop(pred, pv, gt, gt_valid)
        per.append(depth_metrics_loop(pred * s, pv, gt, gt_valid))
    return {key: float(np.mean([r[i] for r in per]))
            for i, key in enumerate(("abs_error_rel", "sq_error_rel", "irmse", "rmse"))}


def _odom_oracle(root):
    ref = np.loadtxt(os.path.join(root, "data", "ref.tum"))
    est = np.loadtxt(os.path.join(root, "data", "est.tum"))
    mat = lambda r: pose_matrix([r[7], r[4], r[5], r[6]], r[1:4])
    T = mat(ref[0]) @ np.linalg.inv(mat(est[0]))
    aligned = [(T @ mat(r))[:3, 3].tolist() for r in est]
    pairs = [(i, i) for i in range(len(ref))]
    rmse, pct, _ = ape_loop(ref[:, 1:4].tolist(), aligned, pairs)
    return {"ape_rmse": rmse, "ape_percent": pct}


@criterion(10, "end-to-end golden run")
def test_10_end_to_end(tmp_path):
    start = time.perf_counter()
    roots = [tmp_path / "run_a", tmp_path / "run_b"]
    for r in roots:
        r.mkdir()
        _pipeline(str(r))
    for name in ("depth_out/report.json", "depth_out/per_frame.csv", "odom_out/report.json", "table.txt"):
        a, b = ((r / name).read_bytes() for r in roots)
        assert a == b, f"{name} differs between runs"

    depth = json.loads((roots[0] / "depth_out" / "report.json").read_text())
    agg = depth["aggregate"]["synth"]
    assert agg["frame_count"] == 20 and not depth["skips"]
    worst = 0.0
    for key, ref in _depth_oracle(str(roots[0])).items():
        worst = max(worst, abs(agg[key] - ref))
    odom = json.loads((roots[0] / "odom_out" / "report.json").read_text())["aggregate"]["synth"]
    for key, ref in _odom_oracle(str(roots[0])).items():
        worst = max(worst, abs(odom[key] - ref))
    assert worst <= 1e-9, f"aggregate deviates from oracle by {worst}"
    elapsed = time.perf_counter() - start
    return f"report.json identical across 2 runs; max oracle deviation {worst:.1e}; {elapsed:.2f} s"


def _mutate(rng, data: bytes) -> bytes:
    b = bytearray(data)
    op = rng.integers(5)
    if op == 0 and b:
        for _ in range(rng.integers(1, 8)):
            b[rng.integers(len(b))] ^= 1 << int(rng.integers(8))
    elif op == 1:
        b = b[: rng.integers(len(b) + 1)]
    elif op == 2:
        pos = rng.integers(len(b) + 1)
        b[pos:pos] = rng.bytes(int(rng.integers(1, 20)))
    elif op == 3 and b:
        pos = rng.integers(len(b))
        del b[pos: pos + int(rng.integers(1, 20))]
    else:
        b = bytearray(rng.bytes(int(rng.integers(0, 200))))
    return bytes(b)


def _fix_crcs(data: bytes) -> bytes:
    """Recompute chunk CRCs so mutations reach the image decoder instead of the checksum check."""
    b = bytearray(data)
    pos = 8
    while pos + 12 <= len(b):
        length = int.from_bytes(b[pos:pos + 4], "big")
        end = pos + 12 + length
        if end > len(b):
            break
        b[end - 4:end] = zlib.crc32(bytes(b[pos + 4:end - 4])).to_bytes(4, "big")
        pos = end
    return bytes(b)


_TOKENS = ["nan", "inf", "-inf", "1e400", "", "abc", "-0", "0", "1", "1e-320", "é", "0x10", "--1", "1,5"]


def _mutate_text(rng, text: str) -> str:
    lines = text.splitlines()
    for _ in range(rng.integers(1, 4)):
        if not lines:
            lines.append("")
        k = rng.integers(len(lines))
        parts = lines[k].split()
        op = rng.integers(4)
        if op == 0 and parts:
            parts[rng.integers(len(parts))] = _TOKENS[rng.integers(len(_TOKENS))]
        elif op == 1 and parts:
            del parts[rng.integers(len(parts))]
        elif op == 2:
            lines.insert(k, lines[k])
        else:
            parts.append(_TOKENS[rng.integers(len(_TOKENS))])
        if op != 2:
            lines[k] = " ".join(parts)
    return "\n".join(lines)


@criterion(11, "malformed-input fuzzing")
def test_11_fuzzing():
    rng = np.random.default_rng(11)
    traj_rng = np.random.default_rng(12)
    good_tum = "\n".join(f"{0.1 * k:.1f} {k} {k * 0.5} 0 0 0 {np.sin(k / 4):.6f} {np.cos(k / 4):.6f}"
                         for k in range(6))
    good_kitti = "\n".join("1 0 0 {0} 0 1 0 0 0 0 1 0".format(k) for k in range(6))
    base = random_depth(traj_rng, 6, 5, lo=0.5, hi=100)
    good_png = encode_depth_png(base)
    good_cloud = np.arange(32, dtype=np.float32).tobytes()

    counts = {"value": 0, "error": 0}
    crashes = []
    for k in range(10_000):
        kind = k % 5
        try:
            if kind == 0:
                parse_trajectory_tum(_mutate_text(rng, good_tum))
            elif kind == 1:
                parse_trajectory_kitti(_mutate_text(rng, good_kitti))
            elif kind == 2:
                decode_depth_png(_mutate(rng, good_png))
            elif kind == 3:
                decode_depth_png(_fix_crcs(_mutate(rng, good_png)))
            else:
                parse_pointcloud_bin(_mutate(rng, good_cloud))
            counts["value"] += 1
        except SavesError:
            counts["error"] += 1
        except Exception as exc:  # anything else is a crash
            crashes.append((k, kind, repr(exc)))
    assert not crashes, f"{len(crashes)} crashes, first: {crashes[0]}"
    return f"10^4 inputs: {counts['value']} values, {counts['error']} structured errors, 0 crashes"
