"""Compare the numba kernels with their numpy fallbacks.

Each pair is checked for agreement first, then timed with ``timeit`` (best
of several repeats, after a warm-up call that also triggers JIT
compilation). Run with::

    python benchmarks/bench_kernels.py [--repeat 7] [--json out.json]

The library picks one backend at import time from ``OSSA_DISABLE_NUMBA``;
this script imports both variants directly so a single run compares them.
"""

from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from ossa import layers, stats
from ossa._accel import NUMBA_ENABLED


def _cases(rng):
    x = rng.normal(size=(32, 16, 32, 32)).astype(np.float32)
    x3 = x.reshape(32, 16, -1)
    mu, var = stats._moments_np(x3)
    sigma = np.sqrt(var + 1e-5)
    scale = rng.normal(1.0, 0.75, size=mu.shape)
    shift = rng.normal(1.0, 0.75, size=mu.shape)
    g3 = rng.normal(size=x3.shape).astype(np.float32)
    img = rng.normal(size=(32, 8, 32, 32)).astype(np.float32)
    ho = wo = layers.conv_out_size(32, 3, 1, 1)
    dcols = rng.normal(size=(8 * 9, 32 * ho * wo)).astype(np.float32)

    def moments(fn):
        return lambda: fn(x3)

    def affine(fn):
        out = np.empty_like(x3)
        return lambda: (fn(x3, mu, sigma, scale, shift, out), out)[1]

    def backward(fn):
        dx = np.empty_like(x3)
        return lambda: (fn(x3, mu, sigma, scale, g3, dx), dx)[1]

    def im2col(fn):
        cols = np.empty((8 * 9, 32 * ho * wo), dtype=np.float32)
        return lambda: (fn(img, 3, 1, 1, ho, wo, cols), cols)[1]

    def col2im(fn):
        def run():
            dx = np.zeros_like(img)
            fn(dcols, 3, 1, 1, ho, wo, dx)
            return dx
        return run

    return [
        ("moments", moments, stats._moments_nb, stats._moments_np),
        ("affine_normalize", affine, stats._affine_normalize_nb, stats._affine_normalize_np),
        ("affine_normalize_backward", backward, stats._affine_normalize_backward_nb, stats._affine_normalize_backward_np),
        ("im2col 32x8x32x32 k3", im2col, layers._im2col_nb, layers._im2col_np),
        ("col2im 32x8x32x32 k3", col2im, layers._col2im_nb, layers._col2im_np),
    ]


def _best(fn, repeat: int) -> float:
    fn()  # warm-up / compile
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=number)) / number


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)
    if not NUMBA_ENABLED:
        print("numba disabled or unavailable; both columns time the numpy path")

    rng = np.random.default_rng(0)
    results = []
    print(f"{'kernel':<28} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for name, make, nb, npf in _cases(rng):
        a, b = make(nb), make(npf)
        ra, rb = a(), b()
        ra = ra if isinstance(ra, tuple) else (ra,)
        rb = rb if isinstance(rb, tuple) else (rb,)
        for u, v in zip(ra, rb):
            np.testing.assert_allclose(u, v, rtol=1e-5, atol=1e-5)
        t_nb, t_np = _best(a, args.repeat), _best(b, args.repeat)
        results.append({"kernel": name, "numba_s": t_nb, "numpy_s": t_np, "speedup": t_np / t_nb})
        print(f"{name:<28} {t_nb * 1e3:>10.3f} {t_np * 1e3:>10.3f} {t_np / t_nb:>7.2f}x")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(results, f, indent=2)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
