#!/usr/bin/env python3
"""Benchmark the compiled kernel extension against the NumPy fallback.

Covers the three hot loops: point projection with depth testing, batched
superpoint IoU (the tracking inner loop), and pairwise mask intersections
(the merge/NMS cost matrices). Outputs median wall-clock per call and the
speedup; also cross-checks that both backends return identical bytes.

    python benchmarks/bench_kernels.py [--points 200000] [--rows 5000]
    [--masks 400] [--repeat 5]
"""

import argparse
import time

import numpy as np

from ov3dis._kernels import available_backends, get_backend


def timed(fn, repeat):
    best = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best.append(time.perf_counter() - t0)
    return min(best), out


def projection_case(n):
    rng = np.random.default_rng(0)
    positions = rng.uniform(-4, 4, size=(n, 3))
    theta = 0.7
    rot = np.array([
        [np.cos(theta), -np.sin(theta), 0],
        [np.sin(theta), np.cos(theta), 0],
        [0, 0, 1.0]])
    trans = np.array([0.1, -0.2, 5.0])
    depth = rng.uniform(0.5, 9.0, size=(480, 640)).astype(np.float32)
    depth[rng.random((480, 640)) < 0.2] = 0.0
    return positions, rot, trans, 580.0, 580.0, 320.0, 240.0, depth, 640, 480, 0.05


def siou_case(rows, words=160):
    rng = np.random.default_rng(1)
    supports = rng.integers(0, 2**63, size=(rows, words), dtype=np.uint64)
    vis = rng.integers(0, 2**63, size=(rows, words), dtype=np.uint64)
    supports &= vis
    q_vis = rng.integers(0, 2**63, size=words, dtype=np.uint64)
    q_sup = rng.integers(0, 2**63, size=words, dtype=np.uint64) & q_vis
    return q_sup, q_vis, supports, vis


def masks_case(k, words=3200):
    rng = np.random.default_rng(2)
    return rng.integers(0, 2**63, size=(k, words), dtype=np.uint64)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--points", type=int, default=200_000)
    parser.add_argument("--rows", type=int, default=5_000)
    parser.add_argument("--masks", type=int, default=400)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    backends = available_backends()
    print(f"available backends: {backends}")
    if "cython" not in backends:
        print("compiled extension missing; run `pip install -e .` with a compiler")

    numpy_impl = get_backend("numpy")
    impls = [("numpy", numpy_impl)]
    if "cython" in backends:
        impls.insert(0, ("cython", get_backend("cython")))

    proj = projection_case(args.points)
    sio = siou_case(args.rows)
    masks = masks_case(args.masks)

    cases = [
        (f"project_points ({args.points} pts, 640x480 depth)",
         lambda impl: impl.project_points(*proj)),
        (f"batch_siou ({args.rows} tracked rows x 160 words)",
         lambda impl: impl.batch_siou(*sio)),
        (f"pairwise_intersections ({args.masks} masks x 3200 words)",
         lambda impl: impl.pairwise_intersections(masks)),
    ]

    for label, call in cases:
        print(f"\n{label}")
        times = {}
        outputs = {}
        for name, impl in impls:
            t, out = timed(lambda: call(impl), args.repeat)
            times[name] = t
            outputs[name] = out
            print(f"  {name:7s} {t * 1e3:10.2f} ms")
        if len(impls) == 2:
            speedup = times["numpy"] / times["cython"]
            print(f"  speedup {speedup:10.2f}x")
            a, b = outputs["cython"], outputs["numpy"]
            pairs = zip(a, b) if isinstance(a, tuple) else [(a, b)]
            same = all(np.asarray(x).tobytes() == np.asarray(y).tobytes()
                       for x, y in pairs)
            print(f"  outputs bit-identical: {same}")
            if not same:
                raise SystemExit("backend mismatch — kernels are out of sync")


if __name__ == "__main__":
    main()
