"""Compare the compiled and numpy kernel backends on the hot paths.

Usage: python benchmarks/bench_kernels.py [--size N] [--repeat R]
"""
import argparse
import timeit

import numpy as np

from mvfilter import kernels


def cases(size):
    idx = np.arange(size, dtype=np.uint32)
    lw = np.random.default_rng(0).normal(scale=5.0, size=(max(size // 1000, 1), 1000))
    return {
        "philox4x32": lambda b: kernels.philox4x32([[7, 0]], np.stack(
            [idx, np.full_like(idx, 3), np.full_like(idx, 1), np.zeros_like(idx)], axis=1),
            backend=b),
        "normals(d=2)": lambda b: kernels.normals(7, 0, idx, 3, 1, 2, backend=b),
        "uniforms": lambda b: kernels.uniforms(7, 0, idx, 3, 4, backend=b),
        "logsumexp_rows": lambda b: kernels.logsumexp_rows(lw, backend=b),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    print(f"size {args.size}, best of {args.repeat}; backends {backends}")
    print(f"{'kernel':<16}" + "".join(f"{b:>12}" for b in backends) + "     speedup")
    for name, fn in cases(args.size).items():
        times = [min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) for b in backends]
        row = f"{name:<16}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"  {times[1] / times[0]:>8.1f}x"
        print(row)


if __name__ == "__main__":
    main()
