"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

The first numba call (compilation, or loading the on-disk cache) is timed
separately and excluded from the per-call figures. Results of the two
backends are checked for equality before timing.
"""
import argparse
import time

import numpy as np

from semianchor.kernels import numba_backend, numpy_backend


def random_boxes(rng, n, size=512.0):
    xy = rng.uniform(0, size, (n, 2))
    wh = rng.uniform(4, 96, (n, 2))
    return np.concatenate([xy, xy + wh], axis=1)


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def cases(rng):
    a = random_boxes(rng, 2000)
    b = random_boxes(rng, 200)
    yield "pairwise_iou 2000x200", "pairwise_iou", (a, b)

    boxes = random_boxes(rng, 3000, size=256.0)
    classes = rng.integers(0, 5, 3000)
    yield "greedy_nms_keep n=3000", "greedy_nms_keep", (boxes, classes, 0.5, 100_000)

    ious = rng.uniform(0, 1, (2000, 30))
    ignore = rng.random(30) < 0.2
    ignore = ignore[np.argsort(ignore, kind="stable")]
    yield "greedy_match 2000x30", "greedy_match", (ious, ignore, 0.5)


def _same(x, y):
    if isinstance(x, tuple):
        return all(_same(a, b) for a, b in zip(x, y))
    return np.array_equal(np.asarray(x), np.asarray(y))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if numba_backend is None:
        raise SystemExit("numba is not installed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}{'first call ms':>15}")
    for label, name, argv in cases(rng):
        f_np = getattr(numpy_backend, name)
        f_nb = getattr(numba_backend, name)
        t = time.perf_counter()
        out_nb = f_nb(*argv)
        first = time.perf_counter() - t
        if not _same(f_np(*argv), out_nb):
            raise SystemExit(f"{name}: backends disagree")
        t_np = best_time(lambda: f_np(*argv), args.repeat)
        t_nb = best_time(lambda: f_nb(*argv), args.repeat)
        print(f"{label:<26}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>8.1f}x{first * 1e3:>15.1f}")


if __name__ == "__main__":
    main()
