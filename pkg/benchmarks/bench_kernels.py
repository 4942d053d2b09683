"""Benchmark the compiled kernel lane against the NumPy/SciPy fallback.

Run:  python benchmarks/bench_kernels.py [--size 64] [--repeat 3]

Prints one row per kernel with per-lane wall time and the speedup of the
compiled lane. Both lanes are imported directly, so the result does not
depend on SEGAPIPE_BACKEND.
"""

import argparse
import time

import numpy as np

from segapipe._kernels import available_backends
from segapipe.meshkit import mc_tables


def timeit(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    lanes = available_backends()
    if "compiled" not in lanes:
        print("compiled extension not built; run `python setup.py build_ext --inplace`")
        return

    n = args.size
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 8, n, n, n)).astype(np.float32)
    w = rng.standard_normal((8, 8, 3, 3, 3)).astype(np.float32)
    gy = rng.standard_normal((1, 8, n, n, n)).astype(np.float32)
    vol = rng.standard_normal((n, n, n))
    coords = rng.uniform(-1, n, size=(n**3, 3))
    mask_sparse = rng.random((n, n, n)) < 0.02
    mask_blob = np.zeros((n, n, n), np.uint8)
    mask_blob[n // 4 : 3 * n // 4, n // 4 : 3 * n // 4, n // 4 : 3 * n // 4] = 1
    mask_rand = (rng.random((n, n, n)) < 0.4).astype(np.uint8)
    padded = np.pad(mask_rand, 1)
    tables = mc_tables()

    cases = [
        ("conv3d_forward (8ch)", lambda m: m.conv3d_forward(x, w, 1)),
        ("conv3d_grad_input", lambda m: m.conv3d_grad_input(gy, w, (n, n, n), 1)),
        ("conv3d_grad_weight", lambda m: m.conv3d_grad_weight(gy, x, 1)),
        ("sample_trilinear", lambda m: m.sample_trilinear(vol, coords, 0.0)),
        ("sample_nearest", lambda m: m.sample_nearest(vol, coords, 0.0)),
        ("edt", lambda m: m.edt(mask_sparse, (1.0, 1.0, 1.0))),
        ("label_components 26", lambda m: m.label_components(mask_rand, 26)),
        ("mc_cell_triangles", lambda m: m.mc_cell_triangles(padded, *tables)),
    ]

    width = max(len(name) for name, _ in cases)
    print(f"size {n}^3, best of {args.repeat}")
    print(f"{'kernel':<{width}}  {'python':>10}  {'compiled':>10}  {'speedup':>8}")
    for name, fn in cases:
        tp = timeit(lambda: fn(lanes["python"]), args.repeat)
        tc = timeit(lambda: fn(lanes["compiled"]), args.repeat)
        print(f"{name:<{width}}  {tp:>9.4f}s  {tc:>9.4f}s  {tp / tc:>7.1f}x")


if __name__ == "__main__":
    main()
