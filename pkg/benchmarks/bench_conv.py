#!/usr/bin/env python3
"""Compare the compiled conv kernels against the pure-numpy fallback on the
shapes the unfolded estimator actually runs (desk and full grids).

Usage: python benchmarks/bench_conv.py [--reps 20]
"""

import argparse
import time

import numpy as np

from thzce import kernels
from thzce.kernels import conv_numpy

try:
    from thzce.kernels import _convcore as compiled
except ImportError:
    compiled = None


CASES = [
    # (label, B, S, Q, Cin, Cout): conv1 and conv2 of each layer, batch 16,
    # times K subcarriers folded into the batch axis
    ("desk conv1 (16x8, 4x128, 2->16)", 128, 4, 128, 2, 16),
    ("desk conv2 (16,   4x128, 16->1)", 16, 4, 128, 16, 1),
    ("full conv1 (16x32, 6x512, 2->16)", 512, 6, 512, 2, 16),
    ("full conv2 (16,    6x512, 16->1)", 16, 6, 512, 16, 1),
]


def time_backend(fwd, bwd, x, k, b, reps):
    y = fwd(x, k, b)
    g = np.ones_like(y)
    bwd(x, k, g)  # warm-up
    t0 = time.perf_counter()
    for _ in range(reps):
        y = fwd(x, k, b)
    t_fwd = (time.perf_counter() - t0) / reps
    t0 = time.perf_counter()
    for _ in range(reps):
        bwd(x, k, g)
    t_bwd = (time.perf_counter() - t0) / reps
    return t_fwd, t_bwd, y


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=20)
    args = ap.parse_args()

    print(f"selected backend at import: {kernels.BACKEND}")
    if compiled is None:
        print("compiled kernels not built; showing numpy fallback only")
    rng = np.random.default_rng(0)
    for label, B, S, Q, Cin, Cout in CASES:
        x = rng.standard_normal((B, S, Q, Cin))
        k = rng.standard_normal((5, 5, Cin, Cout))
        b = rng.standard_normal(Cout)
        tn_f, tn_b, yn = time_backend(conv_numpy.conv2d_forward, conv_numpy.conv2d_backward,
                                      x, k, b, args.reps)
        line = f"{label:38s} numpy fwd {tn_f*1e3:7.2f} ms bwd {tn_b*1e3:7.2f} ms"
        if compiled is not None:
            tc_f, tc_b, yc = time_backend(compiled.conv2d_forward, compiled.conv2d_backward,
                                          x, k, b, args.reps)
            assert np.allclose(yn, yc, atol=1e-10), "backends disagree"
            line += (f" | compiled fwd {tc_f*1e3:7.2f} ms bwd {tc_b*1e3:7.2f} ms"
                     f" | speedup fwd {tn_f/tc_f:4.1f}x bwd {tn_b/tc_b:4.1f}x")
        print(line)


if __name__ == "__main__":
    main()
