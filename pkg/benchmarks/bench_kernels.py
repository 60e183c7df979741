"""Time the numba kernels against their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The numba functions are compiled (or loaded from cache) before timing.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from frwkv import kernels as K
from frwkv._accel import HAVE_NUMBA


def wkv_inputs(rows, steps, heads, n, seed=0):
    rng = np.random.default_rng(seed)
    shape = (rows, steps, heads, n)
    kh = rng.normal(size=shape)
    kh /= np.linalg.norm(kh, axis=-1, keepdims=True)
    return dict(
        r=rng.normal(size=shape), kh=kh, eta=rng.uniform(0, 1, shape), kr=rng.normal(size=shape) * 0.3,
        v=rng.normal(size=shape), d=rng.uniform(0.5, 1.0, shape), s0=np.zeros((rows, heads, n, n)),
    )


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    cases = []
    for rows, steps, heads, n in [(64, 49, 1, 8), (14, 49, 8, 64), (224, 49, 8, 16)]:
        x = wkv_inputs(rows, steps, heads, n)
        args_f = [x[k] for k in ("r", "kh", "eta", "kr", "v", "d", "s0")]
        y, s_last = K.wkv_forward_np(*args_f)
        dy, ds = np.ones_like(y), np.zeros_like(s_last)
        label = f"rows={rows} F={steps} heads={heads} n={n}"
        cases.append((f"wkv forward  {label}", lambda a=args_f: K.wkv_forward_nb(*a),
                      lambda a=args_f: K.wkv_forward_np(*a)))
        cases.append((f"wkv backward {label}", lambda a=args_f, g=(dy, ds): K.wkv_backward_nb(*a, *g),
                      lambda a=args_f, g=(dy, ds): K.wkv_backward_np(*a, *g)))
    for rows, n in [(1024, 64), (256, 1024)]:
        sig = np.random.default_rng(1).normal(size=(rows, n))
        cases.append((f"fft radix-2  rows={rows} n={n}", lambda s=sig: K.fft_radix2(s, use_numba=True),
                      lambda s=sig: K.fft_radix2(s, use_numba=False)))

    print(f"{'kernel':<50} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for name, nb, npf in cases:
        nb()  # compile / warm cache
        t_nb, t_np = best_of(nb, args.repeat), best_of(npf, args.repeat)
        print(f"{name:<50} {t_nb * 1e3:>10.2f} {t_np * 1e3:>10.2f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
