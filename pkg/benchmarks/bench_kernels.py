"""Timing of the numba kernels against the numpy fallback, and of tiled vs sequential prediction.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both kernel backends are imported directly, so the environment flag does not matter here.
Tiled batches allocate large temporaries. On hosts where page faults are costly, glibc's
habit of trimming and regrowing the heap (or mmapping big blocks) can dominate. Setting
``MALLOC_TOP_PAD_=67108864 MALLOC_MMAP_THRESHOLD_=67108864`` shows the arithmetic cost alone.
"""
import argparse
import timeit

import numpy as np

from batchensemble import kernels
from batchensemble.inference import ensemble_predict, member_predict
from batchensemble.model import build_mlp


def best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def kernel_cases(g):
    B, n, M = 4096, 128, 4
    values = g.normal(size=(B, n))
    assign = np.repeat(np.arange(M, dtype=np.int64), B // M)
    table = g.normal(size=(M, n))
    conf = g.uniform(size=20000)
    correct = (g.uniform(size=20000) < conf).astype(np.float64)
    a = g.integers(0, 10, size=20000).astype(np.int64)
    b = g.integers(0, 10, size=20000).astype(np.int64)
    return {
        "segment_sum": lambda k: k.segment_sum(values, assign, M),
        "gather_rows": lambda k: k.gather_rows(table, assign),
        "ece_bins": lambda k: k.ece_bins(conf, correct, 15),
        "count_disagree": lambda k: k.count_disagree(a, b),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    g = np.random.default_rng(0)

    print(f"{'kernel':16s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    backends = [kernels.numpy_kernels] + ([kernels.numba_kernels] if kernels.numba_kernels else [])
    for name, call in kernel_cases(g).items():
        for k in backends:
            call(k)  # compile / warm up
        times = [best(lambda k=k: call(k), args.repeat, 20) * 1e3 for k in backends]
        if len(times) == 1:
            times.append(float("nan"))
        print(f"{name:16s} {times[0]:10.3f} {times[1]:10.3f} {times[0] / times[1]:8.2f}x")

    print()
    print(f"{'M':>3s} {'tiled ms':>10s} {'sequential ms':>14s} {'ratio':>7s}")
    X = g.normal(size=(64, 256))
    for M in (1, 2, 4, 8):
        model = build_mlp([256, 256, 256, 10], kind="batch_ensemble", ensemble_size=M, seed=0)
        tiled = best(lambda: ensemble_predict(model, X), args.repeat, 10) * 1e3
        seq = best(lambda: [member_predict(model, X, i) for i in range(M)], args.repeat, 10) * 1e3
        print(f"{M:3d} {tiled:10.3f} {seq:14.3f} {seq / tiled:7.2f}")


if __name__ == "__main__":
    main()
