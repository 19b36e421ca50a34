#!/usr/bin/env python3
"""Benchmark the numba-compiled kernels against the pure-numpy fallback.

Both paths execute the same source (the fallback is the uncompiled
function), so results are bit-identical; this script measures the speed
difference on a decode-scale workload and prints a table.

Usage: python benchmarks/bench_backends.py [--tokens N] [--layers L]
"""

import argparse
import time

import numpy as np

from moesim import kernels
from moesim.tracegen import ZipfParams, gen_zipf
from moesim.traces import ModelShape

POLICIES = [
    ("lru", kernels.P_LRU),
    ("lfu", kernels.P_LFU),
    ("lfu-aged", kernels.P_LFU_AGED),
    ("opt", kernels.P_OPT),
]


def time_fn(fn, *args, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def bench_replay(acts, num_experts, cache_size):
    compiled = kernels.replay_policy
    fallback = kernels.python_impl(compiled)
    rows = []
    for name, code in POLICIES:
        args = (acts, num_experts, cache_size, code, 0.5, 16)
        compiled(*args)  # warm the JIT outside the timed region
        t_compiled = time_fn(compiled, *args)
        t_fallback = time_fn(fallback, *args, repeats=2)
        rb_c, ev_c = compiled(*args)
        rb_f, ev_f = fallback(*args)
        assert (rb_c == rb_f).all() and (ev_c == ev_f).all(), "backends diverged"
        rows.append((f"replay/{name}", t_fallback, t_compiled))
    return rows


def bench_sampling(num_tokens, num_experts, top_k):
    rng = np.random.default_rng(0)
    weights = (np.arange(1, num_experts + 1, dtype=np.float64)) ** -1.0
    uniforms = rng.random((num_tokens, top_k))
    out = np.zeros((num_tokens, top_k), dtype=np.int64)

    compiled = kernels.sample_zipf_layer
    fallback = kernels.python_impl(compiled)
    args = (weights, num_tokens, top_k, uniforms, out)
    compiled(*args)
    t_compiled = time_fn(compiled, *args)
    out_c = out.copy()
    t_fallback = time_fn(fallback, *args, repeats=2)
    assert (out == out_c).all(), "backends diverged"
    return [("sample/zipf", t_fallback, t_compiled)]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--tokens", type=int, default=8192)
    parser.add_argument("--layers", type=int, default=4)
    parser.add_argument("--experts", type=int, default=8)
    parser.add_argument("--top-k", type=int, default=2)
    parser.add_argument("--cache-size", type=int, default=4)
    args = parser.parse_args()

    if not kernels.HAVE_NUMBA:
        print("numba backend unavailable (MOESIM_BACKEND=numpy or numba missing);")
        print("both columns below run the interpreted path.")

    shape = ModelShape(num_layers=args.layers, num_experts=args.experts, top_k=args.top_k)
    trace = gen_zipf(ZipfParams(shape=shape, num_tokens=args.tokens, skew_exponent=1.0, seed=0))
    acts = np.ascontiguousarray(trace.activations[:, 0, :])
    steps = args.tokens

    rows = bench_replay(acts, args.experts, args.cache_size)
    rows += bench_sampling(args.tokens, args.experts, args.top_k)

    print(f"\nworkload: {steps} steps/layer, E={args.experts}, K={args.top_k}, C={args.cache_size}")
    header = f"{'kernel':<14} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>9} {'numba Msteps/s':>15}"
    print(header)
    print("-" * len(header))
    for name, t_py, t_nb in rows:
        speedup = t_py / t_nb if t_nb > 0 else float("inf")
        rate = steps / t_nb / 1e6
        print(f"{name:<14} {t_py * 1e3:>12.2f} {t_nb * 1e3:>12.2f} {speedup:>8.1f}x {rate:>15.2f}")


if __name__ == "__main__":
    main()
