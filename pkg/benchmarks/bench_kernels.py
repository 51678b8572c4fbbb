#!/usr/bin/env python3
"""Timing comparison of the two geometry-kernel backends.

Runs every production kernel on a fixed random workload under both the numba
implementation and the pure-numpy fallback, checks that they agree, and
prints per-kernel wall times with the speedup ratio.  Numba compile time is
excluded by a warmup pass; use --repeats to trade precision for runtime.
"""

import argparse
import time

import numpy as np

from obbmine import _kernels_numpy


def _random_boxes(rng, n):
    return np.column_stack([
        rng.uniform(0, 320, n),
        rng.uniform(0, 320, n),
        rng.uniform(4, 40, n),
        rng.uniform(4, 40, n),
        rng.uniform(-np.pi, np.pi, n),
    ])


def _workloads(rng):
    pairs_a = _random_boxes(rng, 100_000)
    pairs_b = pairs_a + rng.normal(0, 4, pairs_a.shape)
    pairs_b[:, 2:4] = np.abs(pairs_b[:, 2:4]) + 1.0
    mat_a = _random_boxes(rng, 400)
    mat_b = _random_boxes(rng, 400)
    px = rng.uniform(0, 320, 1_000_000)
    py = rng.uniform(0, 320, 1_000_000)
    one_box = _random_boxes(rng, 1)[0]
    nms_boxes = _random_boxes(rng, 2_000)
    mc_a = _random_boxes(rng, 200)
    mc_b = mc_a + rng.normal(0, 4, mc_a.shape)
    mc_b[:, 2:4] = np.abs(mc_b[:, 2:4]) + 1.0
    u = rng.random(20_000)
    v = rng.random(20_000)
    return [
        ("iou_pairs", "100k box pairs", lambda k: k.iou_pairs(pairs_a, pairs_b)),
        ("iou_matrix", "400 x 400 boxes", lambda k: k.iou_matrix(mat_a, mat_b)),
        ("points_in_box", "1M points", lambda k: k.points_in_box(px, py, one_box)),
        ("nms_keep", "2000 boxes @ 0.5", lambda k: k.nms_keep(nms_boxes, 0.5)),
        ("mc_iou_pairs", "200 pairs x 20k samples", lambda k: k.mc_iou_pairs(mc_a, mc_b, u, v)),
    ]


def _time(fn, repeats):
    fn()  # warmup; compiles the numba kernel on first call
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5,
                    help="timed repetitions per kernel (best is reported)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    try:
        from obbmine import _kernels_numba
    except ImportError:
        _kernels_numba = None
        print("numba backend unavailable; timing the numpy fallback only\n")

    work = _workloads(np.random.default_rng(args.seed))
    header = f"{'kernel':<14} {'workload':<24} {'numpy':>10} {'numba':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, desc, call in work:
        ref = call(_kernels_numpy)
        t_np = _time(lambda: call(_kernels_numpy), args.repeats)
        if _kernels_numba is None:
            print(f"{name:<14} {desc:<24} {t_np * 1e3:>8.1f}ms {'-':>10} {'-':>8}")
            continue
        got = call(_kernels_numba)
        if not np.allclose(ref, got, atol=1e-9):
            raise SystemExit(f"backend mismatch in {name}: max diff "
                             f"{np.max(np.abs(np.asarray(ref, float) - np.asarray(got, float)))}")
        t_nb = _time(lambda: call(_kernels_numba), args.repeats)
        print(f"{name:<14} {desc:<24} {t_np * 1e3:>8.1f}ms {t_nb * 1e3:>8.1f}ms "
              f"{t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
