#!/usr/bin/env python3
"""Benchmark the convolution kernels: JIT (numba) vs pure-numpy im2col.

Times the forward and both backward kernels on the shapes the desk-scale
backbone actually runs, per batch of frames. Invoke directly:

    python benchmarks/bench_kernels.py [--batch 16] [--repeats 20]
"""

import argparse
import time

import numpy as np

from erinet import kernels

# (in_channels, H, W, out_channels, kernel, stride, padding) per backbone layer
BACKBONE_CONVS = [
    ("stem 3->16 @32", 3, 32, 32, 16, 3, 1, 1),
    ("stage0 16->16 @32", 16, 32, 32, 16, 3, 1, 1),
    ("stage1 16->32 /2", 16, 32, 32, 32, 3, 2, 1),
    ("stage1 32->32 @16", 32, 16, 16, 32, 3, 1, 1),
    ("stage2 32->64 /2", 32, 16, 16, 64, 3, 2, 1),
    ("stage2 64->64 @8", 64, 8, 8, 64, 3, 1, 1),
    ("stage3 64->64 /2", 64, 8, 8, 64, 3, 2, 1),
]


def time_case(fn, repeats):
    fn()  # warm-up (JIT compile, cache fill)
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench(batch: int, repeats: int):
    rng = np.random.default_rng(0)
    rows = []
    for name, c_in, h, w, c_out, k, stride, pad in BACKBONE_CONVS:
        x = rng.normal(size=(batch, c_in, h, w)).astype(np.float32)
        kern = rng.normal(size=(c_out, c_in, k, k)).astype(np.float32)
        dout = kernels.conv2d_forward(x, kern, stride, pad)
        dout = rng.normal(size=dout.shape).astype(np.float32)
        timings = {}
        for backend in kernels.BACKENDS:
            kernels.set_backend(backend)
            fwd = time_case(lambda: kernels.conv2d_forward(x, kern, stride, pad), repeats)
            bwd_x = time_case(
                lambda: kernels.conv2d_backward_input(dout, kern, stride, pad, h, w), repeats
            )
            bwd_k = time_case(
                lambda: kernels.conv2d_backward_kernel(dout, x, stride, pad, k, k), repeats
            )
            timings[backend] = (fwd, bwd_x, bwd_k)
        rows.append((name, timings))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=16, help="frames per call")
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    rows = bench(args.batch, args.repeats)
    header = f"{'layer':<20} {'pass':<5} {'numba (ms)':>11} {'numpy (ms)':>11} {'speedup':>8}"
    print(f"batch={args.batch}, repeats={args.repeats}")
    print(header)
    print("-" * len(header))
    totals = {"numba": 0.0, "numpy": 0.0}
    for name, timings in rows:
        for i, label in enumerate(("fwd", "bwd_x", "bwd_k")):
            nb, npy = timings["numba"][i], timings["numpy"][i]
            totals["numba"] += nb
            totals["numpy"] += npy
            print(f"{name:<20} {label:<5} {nb * 1e3:>11.3f} {npy * 1e3:>11.3f} {npy / nb:>7.2f}x")
    print("-" * len(header))
    print(
        f"{'total':<20} {'':<5} {totals['numba'] * 1e3:>11.3f} {totals['numpy'] * 1e3:>11.3f} "
        f"{totals['numpy'] / totals['numba']:>7.2f}x"
    )


if __name__ == "__main__":
    main()
