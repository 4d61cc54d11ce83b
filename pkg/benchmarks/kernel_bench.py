#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Usage:
    python3 benchmarks/kernel_bench.py [--repeats 20]

The active package backend is controlled by NLERKIT_BACKEND; this script
always times both paths explicitly.
"""

import argparse
import time

import numpy as np

from nlerkit import kernels as K


def timeit(fn, args, repeats):
    fn(*args)  # warmup / JIT
    tic = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - tic) / repeats


def bench_pair(name, fn_nb, fn_np, args, repeats):
    t_nb = timeit(fn_nb, args, repeats)
    t_np = timeit(fn_np, args, repeats)
    print(f"{name:<22} numba {t_nb * 1e3:8.3f} ms   numpy {t_np * 1e3:8.3f} ms   "
          f"speedup {t_np / t_nb:6.2f}x")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    repeats = args.repeats

    print(f"backend in use: {'numba' if K.dense_forward is K.dense_forward_nb else 'numpy'}\n")

    # dense layer at training shapes (stacked ASA batch x hidden widths)
    x = rng.standard_normal((256, 98))
    w = rng.standard_normal((98, 128))
    b = rng.standard_normal(128)
    gy = rng.standard_normal((256, 128))
    bench_pair("dense forward", K.dense_forward_nb, K.dense_forward_np, (x, w, b), repeats)
    bench_pair("dense backward", K.dense_backward_nb, K.dense_backward_np, (x, w, gy), repeats)

    # conv1d at SIS shapes
    x = rng.standard_normal((256, 32, 13))
    w = rng.standard_normal((32, 32, 5))
    b = rng.standard_normal(32)
    gy = rng.standard_normal((256, 32, 9))
    bench_pair("conv1d forward", K.conv1d_forward_nb, K.conv1d_forward_np, (x, w, b), repeats)
    bench_pair("conv1d backward", K.conv1d_backward_nb, K.conv1d_backward_np, (x, w, gy), repeats)

    # conv2d at spatial shapes
    x = rng.standard_normal((64, 40, 11, 11))
    w = rng.standard_normal((40, 40, 3, 3))
    b = rng.standard_normal(40)
    gy = rng.standard_normal((64, 40, 9, 9))
    bench_pair("conv2d forward", K.conv2d_forward_nb, K.conv2d_forward_np, (x, w, b), repeats)
    bench_pair("conv2d backward", K.conv2d_backward_nb, K.conv2d_backward_np, (x, w, gy), repeats)

    # CTMC simulator, 8-node graph over 13 observation times
    from nlerkit.sis import SisConfig, default_node_positions

    cfg = SisConfig(default_node_positions(8))
    weights = cfg.edge_weights()
    times = cfg.observation_times

    def run_sim(fn):
        for seed in range(200):
            fn(8, weights, cfg.eta, 1.2, 0.9, 0, times, seed)

    run_sim(K.sis_simulate_nb)  # warmup
    tic = time.perf_counter()
    run_sim(K.sis_simulate_nb)
    t_nb = time.perf_counter() - tic
    tic = time.perf_counter()
    run_sim(K.sis_simulate_np)
    t_np = time.perf_counter() - tic
    print(f"{'sis simulate (200x)':<22} numba {t_nb * 1e3:8.3f} ms   numpy {t_np * 1e3:8.3f} ms   "
          f"speedup {t_np / t_nb:6.2f}x")


if __name__ == "__main__":
    main()
