"""Compiled core vs pure fallback on the three hot kernels.

    python3 bench/bench_core.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from sglab import _fallback

try:
    from sglab import _core
except ImportError:
    _core = None


def cases(rng):
    nx, ny = 40, 120
    b = rng.normal(size=(nx, ny))
    Jxx, Jyy = np.exp(rng.normal(size=(nx, nx))), np.exp(rng.normal(size=(ny, ny)))
    Jxy = np.exp(rng.normal(size=(nx, ny)))
    logw = rng.normal(size=(8, 8))
    d = rng.uniform(size=(200, 200))
    d = np.ascontiguousarray((d + d.T) / 2)
    blk = np.arange(200, dtype=np.intp) // 2
    return {
        "fourpoint_sum 40x120": ("fourpoint_sum", (b, Jxx, Jyy, Jxy)),
        "best_matching 8x8": ("best_matching", (logw,)),
        "merge_blocks 200": ("merge_blocks", (d, 0.05, blk)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'case':24s} {'python [s]':>12s} {'cython [s]':>12s} {'speedup':>8s}")
    for name, (fn, a) in cases(rng).items():
        tp = min(timeit.repeat(lambda: getattr(_fallback, fn)(*a), number=1, repeat=args.repeat))
        if _core is None:
            print(f"{name:24s} {tp:12.4f} {'n/a':>12s} {'':>8s}")
            continue
        tc = min(timeit.repeat(lambda: getattr(_core, fn)(*a), number=1, repeat=args.repeat))
        print(f"{name:24s} {tp:12.4f} {tc:12.4f} {tp / tc:8.1f}x")


if __name__ == "__main__":
    main()
