#!/usr/bin/env python3
"""Benchmark the compiled permutation kernels against the numpy fallback.

Run from the repo root after an editable install:

    python benchmarks/bench_backends.py
"""

import time

import numpy as np

from darkrank import ranking
from darkrank._kernels import BACKEND, _reference

try:
    from darkrank._kernels import _speedups
except ImportError:
    _speedups = None


def _time(fn, args, min_reps=5, budget=0.5):
    fn(*args)  # warm up
    reps = 0
    start = time.perf_counter()
    while True:
        fn(*args)
        reps += 1
        elapsed = time.perf_counter() - start
        if reps >= min_reps and elapsed > budget:
            break
    return elapsed / reps


def main():
    print(f"active backend: {BACKEND}")
    if _speedups is None:
        print("compiled extension unavailable; timing the numpy fallback only\n")
    rng = np.random.default_rng(7)
    header = f"{'kernel':<16} {'n':>3} {'perms':>7} {'numpy':>12} {'compiled':>12} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for n in (4, 5, 6, 7, 8):
        teacher = rng.normal(size=n)
        student = rng.normal(size=n)
        perms = ranking._all_permutations(n)
        rows = [("cross_stats", (teacher, student, perms)),
                ("all_log_probs", (teacher, perms))]
        for name, args in rows:
            t_ref = _time(getattr(_reference, name), args)
            if _speedups is not None:
                t_fast =_time(getattr(_speedups, name), args)
                print(f"{name:<16} {n:>3} {len(perms):>7} {t_ref * 1e3:>10.3f}ms "
                      f"{t_fast * 1e3:>10.3f}ms {t_ref / t_fast:>7.1f}x")
            else:
                print(f"{name:<16} {n:>3} {len(perms):>7} {t_ref * 1e3:>10.3f}ms "
                      f"{'-':>12} {'-':>8}")

    # end-to-end: one soft-transfer loss+gradient at the training list length
    teacher = rng.normal(size=7)
    student = rng.normal(size=7)
    t_loss = _time(lambda: ranking.soft_darkrank_loss(teacher, student), ())
    print(f"\nsoft_darkrank_loss (n=7, active backend): {t_loss * 1e3:.3f} ms/call")


if __name__ == "__main__":
    main()
