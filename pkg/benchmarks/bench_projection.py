#!/usr/bin/env python3
"""Benchmark the range-image projection kernel: numba vs pure numpy.

The winner-per-cell scatter is the hot inner loop of dataset forging;
this script times both backends on synthetic clouds of growing size and
verifies they produce identical winner grids.

Usage: python benchmarks/bench_projection.py [--sizes 100k,1m,4m] [--repeats 5]
"""

import argparse
import time

import numpy as np

from lidarforge import PointCloud, SensorConfig, project
from lidarforge._kernels import HAVE_NUMBA, scatter_min

SENSOR = SensorConfig(beams=64, width=2048, fov_up_deg=3.0, fov_down_deg=25.0)


def synthetic_cloud(n, seed=0):
    rng = np.random.default_rng(seed)
    radius = rng.uniform(2.0, 80.0, n)
    yaw = rng.uniform(-np.pi, np.pi, n)
    elev = rng.uniform(-SENSOR.fov_down_rad, SENSOR.fov_up_rad, n)
    pts = np.empty((n, 4), dtype=np.float32)
    pts[:, 0] = radius * np.cos(elev) * np.cos(yaw)
    pts[:, 1] = radius * np.cos(elev) * np.sin(yaw)
    pts[:, 2] = radius * np.sin(elev)
    pts[:, 3] = 0.3
    return PointCloud(pts)


def parse_size(token):
    token = token.strip().lower()
    mult = 1
    if token.endswith("k"):
        mult, token = 1_000, token[:-1]
    elif token.endswith("m"):
        mult, token = 1_000_000, token[:-1]
    return int(float(token) * mult)


def time_backend(cloud, backend, repeats):
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        project(cloud, SENSOR, backend=backend)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="100k,500k,2m")
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    sizes = [parse_size(t) for t in args.sizes.split(",")]

    if HAVE_NUMBA:
        # trigger JIT compilation outside the timed region
        warm = synthetic_cloud(1000)
        project(warm, SENSOR, backend="numba")

    print(f"{'points':>10}  {'numpy (ms)':>12}  {'numba (ms)':>12}  {'speedup':>8}")
    for n in sizes:
        cloud = synthetic_cloud(n)
        t_np = time_backend(cloud, "numpy", args.repeats)

        if not HAVE_NUMBA:
            print(f"{n:>10}  {t_np * 1e3:>12.2f}  {'n/a':>12}  {'n/a':>8}")
            continue

        t_nb = time_backend(cloud, "numba", args.repeats)
        a = project(cloud, SENSOR, backend="numpy")
        b = project(cloud, SENSOR, backend="numba")
        assert np.array_equal(a.point_index, b.point_index), "backend mismatch"
        print(f"{n:>10}  {t_np * 1e3:>12.2f}  {t_nb * 1e3:>12.2f}  {t_np / t_nb:>7.2f}x")

    rng = np.random.default_rng(1)
    n = 2_000_000
    rows = rng.integers(0, SENSOR.beams, n)
    cols = rng.integers(0, SENSOR.width, n)
    ranges = rng.uniform(1.0, 80.0, n)
    t_np = np.inf
    t_nb = np.inf
    for _ in range(args.repeats):
        s = time.perf_counter()
        scatter_min(rows, cols, ranges, SENSOR.beams, SENSOR.width, backend="numpy")
        t_np = min(t_np, time.perf_counter() - s)
        if HAVE_NUMBA:
            s = time.perf_counter()
            scatter_min(rows, cols, ranges, SENSOR.beams, SENSOR.width, backend="numba")
            t_nb = min(t_nb, time.perf_counter() - s)
    print(f"\nscatter_min kernel alone on {n} points: "
          f"numpy {t_np * 1e3:.2f} ms"
          + (f", numba {t_nb * 1e3:.2f} ms ({t_np / t_nb:.2f}x)" if HAVE_NUMBA else ""))


if __name__ == "__main__":
    main()
