"""Compare the compiled GRU kernel against the pure numpy fallback.

Runs forward and forward+backward timings over a grid of sequence lengths
and hidden sizes, checks both backends agree numerically, and prints a
speedup table. Usage: python3 benchmarks/bench_gru.py [--repeats N]
"""

import argparse
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from listenhead import kernels  # noqa: E402


def make_inputs(rng, t_len, batch, hidden):
    xw = rng.normal(size=(t_len, batch, 3 * hidden))
    h0 = rng.normal(size=(batch, hidden))
    u_zr = rng.normal(size=(2 * hidden, hidden)) / np.sqrt(hidden)
    u_h = rng.normal(size=(hidden, hidden)) / np.sqrt(hidden)
    g = rng.normal(size=(t_len, batch, hidden))
    return xw, h0, u_zr, u_h, g


def time_fn(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def check_agreement(xw, h0, u_zr, u_h, g):
    ref = kernels.gru_forward_numpy(xw, h0, u_zr, u_h)
    fast = kernels.gru_forward(xw, h0, u_zr, u_h)
    for a, b in zip(ref, fast):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    ref_b = kernels.gru_backward_numpy(g, xw, h0, u_zr, u_h, *ref)
    fast_b = kernels.gru_backward(g, xw, h0, u_zr, u_h, *fast)
    for a, b in zip(ref_b, fast_b):
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-12)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if kernels.BACKEND != "ext":
        print(
            "compiled extension not active (BACKEND="
            f"{kernels.BACKEND!r}); timings below compare numpy to itself"
        )
    rng = np.random.default_rng(0)
    grid = [(64, 16, 32), (64, 16, 64), (256, 16, 64), (256, 4, 128), (1024, 1, 64)]
    print(f"{'T':>5} {'B':>3} {'H':>4} | {'fwd numpy':>10} {'fwd fast':>10} "
          f"{'speedup':>7} | {'fwd+bwd numpy':>13} {'fwd+bwd fast':>12} {'speedup':>7}")
    for t_len, batch, hidden in grid:
        xw, h0, u_zr, u_h, g = make_inputs(rng, t_len, batch, hidden)
        check_agreement(xw, h0, u_zr, u_h, g)

        f_np = time_fn(lambda: kernels.gru_forward_numpy(xw, h0, u_zr, u_h),
                       args.repeats)
        f_ext = time_fn(lambda: kernels.gru_forward(xw, h0, u_zr, u_h),
                        args.repeats)

        def full_numpy():
            caches = kernels.gru_forward_numpy(xw, h0, u_zr, u_h)
            kernels.gru_backward_numpy(g, xw, h0, u_zr, u_h, *caches)

        def full_ext():
            caches = kernels.gru_forward(xw, h0, u_zr, u_h)
            kernels.gru_backward(g, xw, h0, u_zr, u_h, *caches)

        b_np = time_fn(full_numpy, args.repeats)
        b_ext = time_fn(full_ext, args.repeats)
        print(f"{t_len:>5} {batch:>3} {hidden:>4} | {f_np * 1e3:>8.2f}ms "
              f"{f_ext * 1e3:>8.2f}ms {f_np / f_ext:>6.2f}x | "
              f"{b_np * 1e3:>11.2f}ms {b_ext * 1e3:>10.2f}ms {b_np / b_ext:>6.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
