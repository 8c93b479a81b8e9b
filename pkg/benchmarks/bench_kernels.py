#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

Times the three hot kernels on sampler-realistic problem sizes (a
21-group, 176-year panel and a 1000-particle volatility filter) and
prints per-call times plus the implied duration of a 15000-sweep chain.

Usage:
    python benchmarks/bench_kernels.py [--p P] [--T T] [--particles N] [--reps R]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

import mortss._kernels as K


def make_instance(p, T, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.normal(-4, 1, size=(p, T))
    alpha = rng.normal(-4, 1, p)
    beta = rng.uniform(0.1, 0.4, p)
    s2e = rng.uniform(0.01, 0.05, p)
    sv = rng.uniform(0.05, 0.2, T)
    return y, alpha, beta, s2e, -0.1, sv, 0.0, 10.0


def bench(fn, reps):
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--p", type=int, default=21)
    parser.add_argument("--T", type=int, default=176)
    parser.add_argument("--particles", type=int, default=1000)
    parser.add_argument("--reps", type=int, default=20)
    args = parser.parse_args()

    if not K._HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    kal_args = make_instance(args.p, args.T)
    kappa = np.concatenate([[0.0], np.cumsum(
        -0.1 + 0.3 * np.random.default_rng(1).standard_normal(args.T))])

    jit_kal = K._kalman_numba if K.USE_NUMBA else __import__("numba").njit(cache=True)(K._kalman_loop)
    jit_ffbs = K.ffbs_core if K.USE_NUMBA else __import__("numba").njit(cache=True)(K._ffbs_core)
    jit_boot = (K.lcsv_bootstrap_core if K.USE_NUMBA
                else __import__("numba").njit(cache=True)(K._lcsv_bootstrap_core))

    out = jit_kal(*kal_args)  # compile + reuse moments below
    a, R, m, C = out[0], out[1], out[5], out[6]
    jit_ffbs(m, C, a, R, 0.0, 10.0, np.random.default_rng(0))
    jit_boot(kappa, -0.1, 0.9, -0.2, 0.3, -2.0, args.particles, 0.8,
             np.random.default_rng(0))

    rows = []
    cases = [
        ("kalman forward pass",
         lambda: jit_kal(*kal_args),
         lambda: K._kalman_numpy(*kal_args)),
        ("ffbs backward draw",
         lambda: jit_ffbs(m, C, a, R, 0.0, 10.0, np.random.default_rng(0)),
         lambda: K._ffbs_core(m, C, a, R, 0.0, 10.0, np.random.default_rng(0))),
        (f"bootstrap filter (N={args.particles})",
         lambda: jit_boot(kappa, -0.1, 0.9, -0.2, 0.3, -2.0, args.particles,
                          0.8, np.random.default_rng(0)),
         lambda: K._lcsv_bootstrap_core(kappa, -0.1, 0.9, -0.2, 0.3, -2.0,
                                        args.particles, 0.8,
                                        np.random.default_rng(0))),
    ]
    for name, fast, slow in cases:
        t_fast = bench(fast, args.reps)
        t_slow = bench(slow, max(3, args.reps // 4))
        rows.append((name, t_slow, t_fast, t_slow / t_fast))

    print(f"\nproblem size: p={args.p}, T={args.T}, "
          f"particles={args.particles} (best of {args.reps} reps)\n")
    print(f"{'kernel':<32}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for name, t_slow, t_fast, ratio in rows:
        print(f"{name:<32}{t_slow * 1e3:>10.3f}ms{t_fast * 1e3:>10.3f}ms{ratio:>9.1f}x")
    sweep = rows[0][2] + rows[1][2] + rows[2][2]
    sweep_np = rows[0][1] + rows[1][1] + rows[2][1]
    print(f"\nper-sweep kernel cost (filter + ffbs + bootstrap): "
          f"numba {sweep * 1e3:.2f} ms vs numpy {sweep_np * 1e3:.2f} ms")
    print(f"15000-sweep chain, kernels only: numba ~{sweep * 15000:.0f} s "
          f"vs numpy ~{sweep_np * 15000:.0f} s")


if __name__ == "__main__":
    main()
