"""Time the numba kernels against their numpy twins on identical inputs.

    python benchmarks/bench_kernels.py [--repeat 3] [--scale 2^-5]

The first numba call is timed separately so compilation (or cache load)
does not pollute the steady-state numbers.
"""
import argparse
import time

import numpy as np

from kplanes import _kernels as K
from kplanes.families import gen_low_beta
from kplanes.grassmann import Params, parse_scale
from kplanes.spacing import dyadic_radii


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def bench_subspace_dists(fam, repeat):
    D = fam.dirs
    b = np.ascontiguousarray(D[0])
    return (lambda: K._subspace_dists_nb(D, b)), (lambda: K._subspace_dists_np(D, b))


def bench_rasterize(fam, repeat):
    h = fam.delta
    G = int(np.ceil(2 / h))
    start = -G * h / 2
    la, sa, minv, inv_sig = K._plane_charts(fam.dirs)
    out = np.zeros(G**fam.n, dtype=np.int64)

    def run(fn):
        out[:] = 0
        fn(fam.dirs, fam.offsets, la, sa, minv, inv_sig, start, h, G, h * h, out, False)
    return (lambda: run(K._rasterize_nb)), (lambda: run(K._rasterize_np))


def bench_frostman_try(fam, repeat):
    N = min(len(fam), 2000)
    radii = dyadic_radii(fam.delta)
    bounds = (radii / fam.delta) ** 2.0

    def run(fn):
        D = np.zeros((N, fam.k, fam.n))
        X = np.zeros((N, fam.n))
        C = np.zeros((N, len(radii)), dtype=np.int64)
        acc = 0
        for i in range(N):
            acc += fn(D, X, acc, C, fam.dirs[i], fam.offsets[i], radii, bounds, fam.delta)
    return (lambda: run(K._frostman_try_nb)), (lambda: run(K._frostman_try_np))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scale", default="2^-5", help="delta of the benchmark family")
    args = ap.parse_args(argv)
    if not K.HAS_NUMBA:
        raise SystemExit("numba is unavailable or disabled; nothing to compare")
    delta = parse_scale(args.scale)
    fam = gen_low_beta(Params(k=1, d=2, n=3, beta=1.0, delta=delta))
    print(f"family: {len(fam)} lines in R^3, delta = {delta}")
    print(f"{'kernel':<16}{'first call':>12}{'numba':>12}{'numpy':>12}{'speedup':>10}  (ms)")
    for name, make in [("subspace_dists", bench_subspace_dists), ("rasterize", bench_rasterize),
                       ("frostman_try", bench_frostman_try)]:
        nb, np_ = make(fam, args.repeat)
        t = time.perf_counter()
        nb()
        first = time.perf_counter() - t
        t_nb = best_of(nb, args.repeat)
        t_np = best_of(np_, args.repeat)
        print(f"{name:<16}{first * 1e3:>12.2f}{t_nb * 1e3:>12.3f}{t_np * 1e3:>12.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
