#!/usr/bin/env python3
"""Time the compiled and pure-Python neighbor-search backends.

Both backends run the same kd-tree traversal; the script also checks that
their answers are identical before reporting timings.

Usage::

    python benchmarks/bench_knn.py
    python benchmarks/bench_knn.py --n 3200 --d 1 2 5 --k 10 100 --queries 20000
"""

import argparse
import time

import numpy as np

from rejectreg.knn import BACKENDS, NeighborIndex


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[800, 3200])
    ap.add_argument("--d", type=int, nargs="+", default=[1, 2, 8])
    ap.add_argument("--k", type=int, nargs="+", default=[10, 100])
    ap.add_argument("--queries", type=int, default=5000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = sorted(BACKENDS)
    rng = np.random.default_rng(args.seed)
    print(f"{'n':>6} {'d':>3} {'k':>4} " + " ".join(f"{b + ' [s]':>14}" for b in backends) + f" {'speedup':>8}")
    for n in args.n:
        for d in args.d:
            X = rng.random((n, d))
            Q = rng.random((args.queries, d))
            for k in args.k:
                timings, answers = {}, {}
                for b in backends:
                    index = NeighborIndex(X, backend=b)
                    timings[b], answers[b] = best_of(lambda: index.query(Q, k, return_distance=True),
                                                     args.repeat)
                ref = answers[backends[0]]
                for b in backends[1:]:
                    if not (np.array_equal(ref[0], answers[b][0]) and np.array_equal(ref[1], answers[b][1])):
                        raise SystemExit(f"backends disagree at n={n} d={d} k={k}")
                speedup = ""
                if "compiled" in timings:
                    speedup = f"{timings['python'] / timings['compiled']:.1f}x"
                cols = " ".join(f"{timings[b]:>14.4f}" for b in backends)
                print(f"{n:>6} {d:>3} {k:>4} {cols} {speedup:>8}")


if __name__ == "__main__":
    main()
