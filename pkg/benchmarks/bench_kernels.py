"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from fedms import _kernels_py

try:
    from fedms import _kernels
except ImportError:
    _kernels = None


def _time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    if _kernels is None:
        print("compiled kernels not built; only the fallback is available")
    cases = []
    for n in (4, 8, 12, 16):
        table = rng.random((1 << n, 10))
        cases.append((f"shapley_from_table n={n:2d} C=10", "shapley_from_table", (table, n, True)))
    for m in (1_000, 10_000, 100_000):
        scores = rng.standard_normal((m, 10))
        labels = rng.integers(0, 10, m)
        cases.append((f"confusion_from_scores m={m}", "confusion_from_scores", (scores, labels, 10)))
    print(f"{'kernel':<36} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for label, name, call_args in cases:
        py = _time(lambda: getattr(_kernels_py, name)(*call_args), args.repeat)
        if _kernels is None:
            print(f"{label:<36} {py * 1e3:10.3f} {'-':>10} {'-':>8}")
            continue
        cy = _time(lambda: getattr(_kernels, name)(*call_args), args.repeat)
        a = getattr(_kernels_py, name)(*call_args)
        b = getattr(_kernels, name)(*call_args)
        assert np.allclose(a, b, rtol=0, atol=1e-12), label
        print(f"{label:<36} {py * 1e3:10.3f} {cy * 1e3:10.3f} {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
