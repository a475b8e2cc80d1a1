"""Compare the numba and numpy backends of the uplink/combine kernel.

Usage: python3 benchmarks/bench_channel.py [repeats]
"""

import sys
import time

import numpy as np

from airfed import _kernels


def bench(fn, args, repeats):
    fn(*args)  # warm up (and trigger JIT compilation)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 20
    gen = np.random.default_rng(0)
    cases = [(5, 100, 3925), (20, 100, 3925), (5, 16, 512)]
    print(f"{'M':>4} {'K':>4} {'N':>6} {'numpy (ms)':>12} {'numba (ms)':>12} "
          f"{'speedup':>8}")
    for M, K, N in cases:
        h = (gen.standard_normal((M, K, N, 2)) / np.sqrt(2)).view(
            np.complex128)[..., 0]
        x = (gen.standard_normal((M, N, 2)) / np.sqrt(2)).view(
            np.complex128)[..., 0]
        z = (gen.standard_normal((K, N, 2)) / np.sqrt(2)).view(
            np.complex128)[..., 0]
        h, x, z = (np.ascontiguousarray(a) for a in (h, x, z))
        t_np = bench(_kernels._uplink_combine_np, (h, x, 1.0, z), repeats)
        if _kernels.USE_NUMBA:
            t_nb = bench(_kernels._uplink_combine_nb, (h, x, 1.0, z), repeats)
            print(f"{M:>4} {K:>4} {N:>6} {t_np * 1e3:>12.3f} "
                  f"{t_nb * 1e3:>12.3f} {t_np / t_nb:>8.2f}x")
        else:
            print(f"{M:>4} {K:>4} {N:>6} {t_np * 1e3:>12.3f} "
                  f"{'(disabled)':>12} {'-':>8}")


if __name__ == "__main__":
    main()
