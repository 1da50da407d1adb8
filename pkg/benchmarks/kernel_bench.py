#!/usr/bin/env python3
"""Compare the numba and numpy paths of the series-evaluation kernel.

The comparison polynomial dominates protocol runtime (one degree-1023
evaluation over all slots per batch ciphertext per round), so this is the
kernel worth watching.  Runs the same workload through both backends by
re-importing the kernel module under the env flag, then times a short
end-to-end protocol round for context.

Usage: python benchmarks/kernel_bench.py
"""

import importlib
import os
import statistics
import subprocess
import sys
import time

import numpy as np


def time_kernel(repeats=30):
    from vpkmeans import _kernels
    from vpkmeans.secure_argmin import SignApproxConfig, cmp_series

    coeffs = cmp_series(SignApproxConfig())
    x = np.random.default_rng(0).uniform(-1, 1, 1 << 14)
    _kernels.eval_series(coeffs, x)  # warm up / JIT
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        _kernels.eval_series(coeffs, x)
        times.append(time.perf_counter() - t0)
    return _kernels.backend_name(), statistics.median(times)


def time_protocol_round():
    from vpkmeans import bench, protocol

    ds = bench.gen_synthetic(5000, 15, 2, 0.5, cluster_std=0.03, seed=7, min_center_dist=0.24)
    parts = protocol.split_features(ds.points, [[0], [1]])
    t0 = time.perf_counter()
    protocol.run(parts[0], parts[1], None, 2, k=15, bound=0.5, seed=1)
    return time.perf_counter() - t0


def main():
    if os.environ.get("_KERNEL_BENCH_CHILD"):
        name, med = time_kernel()
        sec = time_protocol_round()
        print(f"{name}: series eval {med * 1000:.2f} ms/ciphertext, "
              f"5k-point 15-cluster setup + 2 rounds {sec:.2f} s")
        return

    for flag in ("0", "1"):
        env = dict(os.environ, VPKMEANS_NO_NUMBA=flag, _KERNEL_BENCH_CHILD="1")
        subprocess.run([sys.executable, __file__], env=env, check=True)


if __name__ == "__main__":
    main()
