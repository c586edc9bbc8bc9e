"""Time the numba and numpy kernel backends side by side, plus the two caches.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--cache-rays 1000000]
"""

import argparse
import time

import numpy as np

from volmc import cache, kernels, presets


def best_of(fn, repeat):
    fn()  # warm up (numba compiles on the first call)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_inputs(rng):
    pts = rng.uniform(-1, 1, (200_000, 3))
    grid = rng.normal(size=(32, 32, 32, 4))
    lo, hi = np.full(3, -1.0), np.full(3, 1.0)
    g = rng.normal(size=(len(pts), 4))
    sigma = rng.exponential(2.0, (4096, 64))
    delta = rng.uniform(0.0, 0.05, (4096, 64))
    mu = rng.normal(size=(512, 32, 3))
    mu /= np.linalg.norm(mu, axis=-1, keepdims=True)
    kappa = rng.uniform(0.0, 50.0, (512, 32))
    lam = rng.dirichlet(np.ones(32), 512)
    u = rng.random((len(sigma), 16))
    om = rng.normal(size=(512, 64, 3))
    om /= np.linalg.norm(om, axis=-1, keepdims=True)
    blobs = rng.uniform(-0.5, 0.5, (8, 3)), rng.uniform(1, 50, 8), rng.uniform(0.1, 0.4, 8), rng.random((8, 3))
    return {
        "blob_eval": lambda be: be["blob_eval"](pts, *blobs),
        "blob_grad": lambda be: be["blob_grad"](pts, *blobs[:3]),
        "trilinear": lambda be: be["trilinear"](grid, pts, lo, hi),
        "trilinear_scatter": lambda be: be["trilinear_scatter"](g, pts, grid.shape, lo, hi),
        "render_weights": lambda be: be["render_weights"](sigma, delta),
        "vmf_mixture": lambda be: be["vmf_mixture"](mu, kappa, lam, om),
        "categorical": lambda be: be["categorical"](sigma, u),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--cache-rays", type=int, default=1_000_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)

    names = sorted(kernels.BACKENDS)
    print(f"{'kernel':<20}" + "".join(f"{n:>12}" for n in names) + f"{'speedup':>10}")
    for kname, call in kernel_inputs(rng).items():
        t = {n: best_of(lambda: call(kernels.BACKENDS[n]), args.repeat) for n in names}
        speed = t["numpy"] / t["numba"] if "numba" in t else float("nan")
        print(f"{kname:<20}" + "".join(f"{t[n] * 1e3:>10.2f}ms" for n in names) + f"{speed:>9.1f}x")

    sc = presets.two_blob()
    ref = cache.ReferenceCache(sc)
    fast = cache.FastCache.init(rng, sc.lo, sc.hi).bind(sc)
    n = args.cache_rays
    x = rng.uniform(-1, 1, (n, 3))
    w = cache.random_directions(rng, n)
    t_fast = best_of(lambda: fast(x, w), 1)
    t_ref = best_of(lambda: ref.query(x, w), 1)
    print(f"\ncache queries over {n} rays ({kernels.BACKEND} backend)")
    print(f"  reference {t_ref:8.2f}s  fast {t_fast:8.2f}s  ratio {t_ref / t_fast:5.1f}x")


if __name__ == "__main__":
    main()
