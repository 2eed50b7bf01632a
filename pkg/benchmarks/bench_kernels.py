"""Time each hot kernel under the numba and numpy backends.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--scale 1.0]

The first call per backend is a warm-up (numba compiles there) and is not
counted. Results print as a table of best-of-N wall times.
"""

import argparse
import time

import numpy as np

from lidar4d import kernels, set_backend
from lidar4d._backend import HAVE_NUMBA


def cases(scale, rng):
    n = int(60_000 * scale)
    blobs = np.vstack([rng.normal(c, 0.6, size=(n // 6, 3)) for c in range(6)])
    cloud = rng.uniform(-40, 40, size=(int(200_000 * scale), 3)) * [1, 1, 0.05]
    planes = rng.normal(size=(200, 4))
    planes[:, :3] /= np.linalg.norm(planes[:, :3], axis=1, keepdims=True)
    cost_small = rng.random((40, 40))
    cost_large = rng.random((int(200 * max(scale, 0.25)),) * 2)
    a = rng.integers(0, 300, int(1_000_000 * scale))
    b = rng.integers(0, 300, a.size)
    boxes = np.sort(rng.uniform(-50, 50, size=(5000, 4)), axis=1)[:, [0, 1, 2, 3]]
    graph = kernels.eps_neighbors(blobs, 0.3)
    return {
        f"eps_neighbors ({len(blobs)} pts)": lambda: kernels.eps_neighbors(blobs, 0.3),
        f"dbscan_labels ({len(blobs)} pts)": lambda: kernels.dbscan_labels(*graph, 5),
        f"plane_inlier_counts ({len(cloud)} x 200)": lambda: kernels.plane_inlier_counts(cloud, planes, 0.25),
        "assign_square (40 x 40)": lambda: kernels.assign_square(cost_small, 1e-13),
        f"assign_square ({len(cost_large)} x {len(cost_large)})": lambda: kernels.assign_square(cost_large, 1e-13),
        f"pair_counts ({a.size} pairs)": lambda: kernels.pair_counts(a, b),
        "any_overlap (5000 boxes)": lambda: kernels.any_overlap(boxes, np.array([100.0, 101.0, 100.0, 101.0])),
    }


def best_time(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scale", type=float, default=1.0, help="multiply problem sizes")
    args = ap.parse_args(argv)

    backends = ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]
    results = {}
    for name in backends:
        prev = set_backend(name)
        try:
            for label, fn in cases(args.scale, np.random.default_rng(0)).items():
                results.setdefault(label, {})[name] = best_time(fn, args.repeat)
        finally:
            set_backend(prev)

    width = max(map(len, results))
    print(f"{'kernel':<{width}}  " + "  ".join(f"{b:>10}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for label, row in results.items():
        line = f"{label:<{width}}  " + "  ".join(f"{row[b] * 1e3:8.2f}ms" for b in backends)
        if len(backends) > 1:
            line += f"  {row['numpy'] / row['numba']:9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
