#!/usr/bin/env python3
"""Benchmark the compiled monotone-hazard kernels against the NumPy twins.

Times the three hot paths (weighted isotonic regression, the ICM hazard
ascent, and the full alternating profile fit) on synthetic current-status
data of several sizes, running each backend module directly.

Run:
    python benchmarks/bench_backends.py
"""

import time

import numpy as np

from expavg import _pykernels

try:
    from expavg import _ckernels
except ImportError:
    _ckernels = None


def make_problem(n, seed):
    rng = np.random.default_rng(seed)
    v = np.sort(rng.uniform(0, 5, n))
    knots, kix = np.unique(v, return_inverse=True)
    z = rng.uniform(0, 1, n)
    delta = (rng.uniform(0, 1, n) < 1 - np.exp(-3 * v * v)).astype(float)
    expr = np.exp(0.3 * z)
    w = np.ones(n)
    ind = (z > 0.5).astype(float)
    X = np.column_stack([ind, z * ind, z])
    return knots, kix.astype(np.int64), delta, z, expr, w, X


def bench(label, fn, repeats=5):
    fn()  # warm up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    backends = [("python", _pykernels)]
    if _ckernels is not None:
        backends.append(("c", _ckernels))
    else:
        print("compiled backend unavailable; benchmarking the fallback only")

    print(f"{'task':<28}{'n':>7}" + "".join(f"{name:>12}" for name, _ in backends) + f"{'speedup':>10}")
    for n in (300, 1000, 5000):
        knots, kix, delta, z, expr, w, X = make_problem(n, seed=1)
        m = knots.shape[0]
        rng = np.random.default_rng(2)
        y = rng.standard_normal(m)
        wts = rng.uniform(0.5, 1.5, m)
        lam0 = np.linspace(0.05, 3.0, m)
        xi0 = np.zeros(3)

        rows = [
            ("pava", lambda k: (lambda: k.pava(y, wts))),
            ("icm_fit", lambda k: (lambda: k.icm_fit(lam0, kix, delta, expr, w, 30.0, 1e-9 * n, 200))),
            ("fit_profile", lambda k: (lambda: k.fit_profile(
                xi0, lam0, X, kix, delta, w, 30.0, 10.0,
                1e-8, 1e-8, 1e-6, 1e-9 * n, 30, 500))),
        ]
        for task, make in rows:
            times = [bench(task, make(mod)) for _, mod in backends]
            speed = times[0] / times[-1] if len(times) > 1 else float("nan")
            cells = "".join(f"{t * 1e3:>10.2f}ms" for t in times)
            print(f"{task:<28}{n:>7}{cells}{speed:>9.1f}x")


if __name__ == "__main__":
    main()
