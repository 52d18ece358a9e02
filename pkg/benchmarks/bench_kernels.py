"""Benchmark the convolution hot kernels: compiled extension vs numpy fallback.

Run:  python benchmarks/bench_kernels.py [--repeats 30]

Shapes cover the training hot path (small batched crops), wide-channel
inference, and the upsampler head.  Whichever backend is faster, inspect the
parity column: both must agree to float32 tolerance.
"""

import argparse
import time

import numpy as np

from srforge._kernels import available_backends

SHAPES = [
    # (label, batch, c_in, c_out, size, k)
    ("train crop 16ch", 4, 16, 16, 48, 3),
    ("train head 16->64", 4, 16, 64, 48, 3),
    ("infer 64ch 120px", 1, 64, 64, 120, 3),
    ("fuse 1x1 32->16", 4, 32, 16, 48, 1),
]


def time_call(fn, args, repeats):
    fn(*args)  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=30)
    args = ap.parse_args()

    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    rng = np.random.default_rng(0)
    header = f"{'shape':22s} {'kernel':12s}" + "".join(f"{name:>12s}" for name in backends) + f"{'parity':>12s}"
    print(header)
    print("-" * len(header))

    for label, n, ci, co, size, k in SHAPES:
        pad = k // 2
        xp = rng.standard_normal((n, ci, size + 2 * pad, size + 2 * pad)).astype(np.float32)
        w = rng.standard_normal((co, ci, k, k)).astype(np.float32)
        gy = rng.standard_normal((n, co, size, size)).astype(np.float32)
        calls = {
            "forward": lambda mod: (mod.conv_forward, (xp, w, 1)),
            "grad_input": lambda mod: (mod.conv_grad_input, (gy, w, xp.shape, 1)),
            "grad_weight": lambda mod: (mod.conv_grad_weight, (gy, xp, w.shape, 1)),
        }
        for kernel, make in calls.items():
            times = []
            outputs = []
            for mod in backends.values():
                fn, fargs = make(mod)
                times.append(time_call(fn, fargs, args.repeats))
                outputs.append(fn(*fargs))
            parity = max(
                float(np.abs(outputs[0] - o).max() / max(np.abs(outputs[0]).max(), 1e-9))
                for o in outputs[1:]
            ) if len(outputs) > 1 else 0.0
            cols = "".join(f"{t * 1e3:11.3f}m" for t in times)
            print(f"{label:22s} {kernel:12s}{cols}{parity:12.2e}")


if __name__ == "__main__":
    main()
