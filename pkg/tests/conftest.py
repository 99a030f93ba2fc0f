import os
import sys
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

sys.path.insert(0, os.path.dirname(__file__))

from saves_bench.core import DepthMap, RigidTransform, Trajectory  # noqa: E402


def random_transform(rng, t_scale=5.0):
    x, y, z, w = Rotation.random(random_state=rng.integers(1 << 31)).as_quat()
    return RigidTransform([w, x, y, z], rng.normal(scale=t_scale, size=3))


def random_depth(rng, h=16, w=16, lo=0.5, hi=100.0, p_valid=0.8):
    vals = rng.uniform(lo, hi, size=(h, w))
    valid = rng.random((h, w)) < p_valid
    return DepthMap(np.where(valid, vals, 0.0), valid)


def random_trajectory(rng, n=30, dt=0.1):
    """Smooth-ish random walk with random orientations."""
    steps = rng.normal(scale=1.0, size=(n, 3))
    pos = np.cumsum(steps, axis=0)
    poses = []
    for p in pos:
        x, y, z, w = Rotation.random(random_state=rng.integers(1 << 31)).as_quat()
        poses.append(RigidTransform([w, x, y, z], p))
    return Trajectory(np.arange(n) * dt, poses)


def circle_trajectory(n=20, radius=10.0, dt=0.1, t0=0.0):
    poses = []
    for k in range(n):
        a = 2 * np.pi * k / n
        yaw = a + np.pi / 2
        q = [np.cos(yaw / 2), 0.0, 0.0, np.sin(yaw / 2)]
        poses.append(RigidTransform(q, [radius * np.cos(a), radius * np.sin(a), 0.0]))
    return Trajectory(t0 + np.arange(n) * dt, poses)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---- acceptance reporting ------------------------------------------------------
# test_acceptance records (number, title, passed, detail); the summary hook prints
# one line per criterion at the end of the run so it appears in plain `pytest -v`.

ACCEPTANCE_RESULTS = []
SUITE_BUDGET_S = 60.0
_session = {}


def pytest_sessionstart(session):
    _session["start"] = time.perf_counter()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    elapsed = time.perf_counter() - _session.get("start", time.perf_counter())
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE_RESULTS):
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {title}: {detail}")
    ok = elapsed < SUITE_BUDGET_S
    tr.write_line(f"[{'PASS' if ok else 'FAIL'}] 10. total suite runtime: {elapsed:.1f} s (budget {SUITE_BUDGET_S:.0f} s)")
