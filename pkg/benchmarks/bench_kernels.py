#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Shapes mirror a desk-scale training step (batch 16, seq 128, hidden 256).
Run: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from leanpremise.kernels import numba_backend, numpy_backend


def timeit(fn, *args, repeats=20):
    fn(*args)  # warmup (and JIT compile for numba)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    args = ap.parse_args()
    dt = np.dtype(args.dtype)
    rng = np.random.default_rng(0)

    B, S, H, nh, I, V = 16, 128, 256, 8, 512, 4096
    x2 = rng.standard_normal((B * S, H)).astype(dt)
    dy2 = rng.standard_normal((B * S, H)).astype(dt)
    gamma = np.ones(H, dtype=dt)
    beta = np.zeros(H, dtype=dt)
    ff = rng.standard_normal((B * S, I)).astype(dt)
    dff = rng.standard_normal((B * S, I)).astype(dt)
    scores = rng.standard_normal((B, nh, S, S)).astype(dt)
    lens = rng.integers(S // 2, S + 1, size=B).astype(np.int64)
    probs = numpy_backend.attn_softmax(scores, lens)
    dprobs = rng.standard_normal(probs.shape).astype(dt)
    emb = np.zeros((V, H), dtype=dt)
    idx = rng.integers(0, V, size=B * S)

    cases = [
        ("layer_norm", (x2, gamma, beta, 1e-12)),
        ("layer_norm_backward", (dy2, x2, gamma, 1e-12)),
        ("gelu", (ff,)),
        ("gelu_backward", (dff, ff)),
        ("attn_softmax", (scores, lens)),
        ("attn_softmax_backward", (dprobs, probs)),
        ("add_at_rows", (emb, idx, x2)),
    ]

    print(f"dtype={args.dtype}  best of {args.repeats} runs, times in ms")
    print(f"{'kernel':<24}{'numpy':>10}{'numba':>10}{'speedup':>9}")
    for name, a in cases:
        t_np = timeit(getattr(numpy_backend, name), *a, repeats=args.repeats)
        t_nb = timeit(getattr(numba_backend, name), *a, repeats=args.repeats)
        print(f"{name:<24}{t_np * 1e3:>10.3f}{t_nb * 1e3:>10.3f}{t_np / t_nb:>9.2f}x")


if __name__ == "__main__":
    main()
