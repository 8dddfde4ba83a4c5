"""Benchmark the numba kernels against the pure-numpy fallbacks.

Run: python benchmarks/bench_accel.py
Shapes mirror the hot paths: codebook lookup at full-scale codebook
sizes, rank extraction over a large speaker panel, and the training
scatter-add. The first numba call includes JIT compilation, so each
kernel is warmed before timing.
"""

import time

import numpy as np

from anoncodec import accel
from anoncodec.rng import substream


def bench(label, fn, repeats=5):
    fn()  # warm-up (JIT compile / cache touch)
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    best = min(times)
    print(f"  {label:<34} {best * 1e3:9.2f} ms")
    return best


def main():
    rng = substream(0, "bench")
    print(f"active backend: {accel.backend_name()}")

    print("\nnearest_codeword  (T=3000, K=16384, M=8)")
    q = rng.standard_normal((3000, 8))
    cw = rng.standard_normal((16384, 8))
    t_np = bench("numpy", lambda: accel.nearest_codeword_np(q, cw))
    t_nb = bench("numba", lambda: accel.nearest_codeword_nb(q, cw))
    print(f"  speedup numba vs numpy: {t_np / t_nb:.2f}x")

    print("\ndiagonal_ranks  (N=4000)")
    sims = rng.standard_normal((4000, 4000))
    t_np = bench("numpy", lambda: accel.diagonal_ranks_np(sims))
    t_nb = bench("numba", lambda: accel.diagonal_ranks_nb(sims))
    print(f"  speedup numba vs numpy: {t_np / t_nb:.2f}x")

    print("\nscatter_add_rows  (T=200000, K=1024, M=8)")
    idx = rng.integers(0, 1024, size=200000)
    rows = rng.standard_normal((200000, 8))
    out = np.zeros((1024, 8))
    t_np = bench("numpy (np.add.at)", lambda: accel.scatter_add_rows_np(idx, rows, out))
    t_nb = bench("numba", lambda: accel.scatter_add_rows_nb(idx, rows, out))
    print(f"  speedup numba vs numpy: {t_np / t_nb:.2f}x")


if __name__ == "__main__":
    main()
