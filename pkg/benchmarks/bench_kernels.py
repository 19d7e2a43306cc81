"""Time the numba kernels against their numpy fallbacks.

Usage: python benchmarks/bench_kernels.py [--n 2000] [--repeat 5]

Covers the two hot loops: boosting (exact split search over presorted
features) and the multiplier bootstrap (replicates x units x grid). Each
pair is checked for agreement before timing.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from ipscurve import _accel
from ipscurve.inference import BootstrapConfig, replicate_sums
from ipscurve.learners._tree_kernels import boost


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), statistics.median(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--p", type=int, default=4)
    ap.add_argument("--trees", type=int, default=50)
    ap.add_argument("--replicates", type=int, default=5000)
    ap.add_argument("--grid", type=int, default=101)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not _accel.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    x = rng.normal(size=(args.n, args.p))
    y = (rng.random(args.n) < 1 / (1 + np.exp(-x[:, 0] + x[:, 1] ** 2 / 2))).astype(float)
    f0 = float(np.log(y.mean() / (1 - y.mean())))
    z = rng.normal(size=(args.n, args.grid))
    cfg = BootstrapConfig(replicates=args.replicates)

    cases = {
        f"gbt boost ({args.trees} trees, depth 2, n={args.n}, p={args.p})": lambda nb: boost(
            x, y, f0, args.trees, 2, 10, 0.1, use_numba=nb
        ),
        f"bootstrap sums (B={args.replicates}, n={args.n}, grid={args.grid})": lambda nb: replicate_sums(
            z, cfg, use_numba=nb
        ),
    }
    print(f"threads: {_accel.get_threads()}")
    print(f"{'kernel':<58} {'numba s':>9} {'numpy s':>9} {'speedup':>8}")
    for name, fn in cases.items():
        a, b = fn(True), fn(False)  # also compiles the numba path
        a, b = (a[2], b[2]) if isinstance(a, tuple) else (a, b)
        diff = float(np.max(np.abs(a - b)))
        if diff > 1e-9:
            raise SystemExit(f"{name}: backends disagree by {diff:g}")
        t_nb, _ = best_of(lambda: fn(True), args.repeat)
        t_np, _ = best_of(lambda: fn(False), args.repeat)
        print(f"{name:<58} {t_nb:9.4f} {t_np:9.4f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
