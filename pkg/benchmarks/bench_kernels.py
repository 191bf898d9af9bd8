"""Time prior_rectify under both kernel backends against a dense reference.

The dense reference is an all-pairs bilateral mean-field update (O(N^2) per
pass). It runs on a 64x64 crop and is scaled by (N_full / N_crop)^2 to the
full image size.

    python3 benchmarks/bench_kernels.py [--size 320] [--iters 10] [--repeat 3]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def dense_refine(s, img, iterations, sigma_f, sigma_p, chunk=512):
    """All-pairs Gaussian appearance+position smoothing, row-normalized."""
    h, w, ch = img.shape
    feats = img.reshape(-1, ch)
    rows, cols = np.divmod(np.arange(h * w), w)
    pos = np.stack([rows, cols], axis=1).astype(float)
    out = s.ravel().copy()
    for _ in range(iterations):
        nxt = np.empty_like(out)
        for lo in range(0, out.size, chunk):
            hi = min(lo + chunk, out.size)
            df = ((feats[lo:hi, None, :] - feats[None, :, :]) ** 2).sum(axis=2)
            dp = ((pos[lo:hi, None, :] - pos[None, :, :]) ** 2).sum(axis=2)
            k = np.exp(-df / (2 * sigma_f**2) - dp / (2 * sigma_p**2))
            nxt[lo:hi] = k @ out / k.sum(axis=1)
        out = nxt
    return out.reshape(h, w)


def run_backend(size, iters, repeat):
    """Time prior_rectify in this process (backend chosen by the env flag)."""
    import usod
    from usod.refiner import RefinerConfig, prior_rectify

    rng = np.random.default_rng(0)
    img, s = rng.random((size, size, 3)), rng.random((size, size))
    cfg = RefinerConfig(iterations=iters)
    prior_rectify(s[:8, :8], img[:8, :8], cfg)  # compile outside the timing
    return usod.backend(), _best(lambda: prior_rectify(s, img, cfg), repeat)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=320)
    ap.add_argument("--iters", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--crop", type=int, default=64)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)

    if args.child:
        name, secs = run_backend(args.size, args.iters, args.repeat)
        print(name, secs)
        return 0

    results = {}
    for flag in ("0", "1"):
        env = dict(os.environ, USOD_DISABLE_NUMBA=flag)
        out = subprocess.run(
            [sys.executable, __file__, "--child", "--size", str(args.size),
             "--iters", str(args.iters), "--repeat", str(args.repeat)],
            env=env, capture_output=True, text=True, check=True,
        )
        name, secs = out.stdout.split()
        results[name] = float(secs)

    rng = np.random.default_rng(0)
    c = args.crop
    img, s = rng.random((c, c, 3)), rng.random((c, c))
    dense = _best(lambda: dense_refine(s, img, args.iters, float(img.std()), 1.0), 1)
    scaled = dense * (args.size**2 / c**2) ** 2

    print(f"prior_rectify {args.size}x{args.size}x3, {args.iters} iterations")
    for name, secs in sorted(results.items()):
        print(f"  {name:6s} {secs * 1e3:10.1f} ms   speedup vs dense {scaled / secs:12.0f}x")
    print(f"  dense  {dense * 1e3:10.1f} ms on {c}x{c}, scaled to {scaled:.1f} s")
    if len(results) == 2:
        print(f"  numba over numpy: {results['numpy'] / results['numba']:.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
