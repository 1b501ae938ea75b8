"""Time the numba and numpy implementations of each hot kernel on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is warmed up once (numba compiles on first call), outputs of the two
backends are checked for agreement, and the best of ``--repeat`` wall times is
reported.
"""
import argparse
import time

import numpy as np

from edibert._kernels import implementations


def cases(rng):
    x = rng.random((4096, 48), dtype=np.float32)
    cb = rng.random((256, 48), dtype=np.float32)
    labels = rng.integers(0, 256, 4096)
    a = rng.random((1000, 64))
    b = rng.random((1000, 64))
    img = rng.random((512, 512))
    kernel = np.exp(-0.5 * (np.arange(-3, 4) / 1.0) ** 2)
    kernel /= kernel.sum()
    return {
        "nearest_codeword": (x, cb),
        "cluster_sums": (x, labels, 256),
        "pairwise_distances": (a, b),
        "blur_axis0": (img, kernel),
    }


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def same(x, y):
    if isinstance(x, tuple):
        return all(same(u, v) for u, v in zip(x, y))
    return np.allclose(x, y, rtol=1e-9, atol=1e-9)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<20}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}  agree")
    for name, inputs in cases(rng).items():
        impls = implementations(name)
        outs = {k: fn(*inputs) for k, fn in impls.items()}  # warm-up / compile
        t_np = best_of(impls["numpy"], inputs, args.repeat)
        if "numba" not in impls:
            print(f"{name:<20}{t_np * 1e3:>10.2f}{'n/a':>10}{'':>9}  -")
            continue
        t_nb = best_of(impls["numba"], inputs, args.repeat)
        agree = same(outs["numpy"], outs["numba"])
        print(f"{name:<20}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>8.1f}x  {agree}")


if __name__ == "__main__":
    main()
